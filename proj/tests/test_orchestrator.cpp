#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrr/orchestrator.hpp"
#include "test_util.hpp"

using namespace rrr;
using nlohmann::json;

namespace {

/// Fixed query -> documents table; no scoring involved.
class StaticRetriever : public Retriever {
public:
    std::map<std::string, std::vector<Document>> table;

    RetrievalResult search(const std::string& query, int n) const override {
        RetrievalResult r;
        r.query = query;
        auto it = table.find(query);
        if (it == table.end()) {
            r.is_short = true;
            return r;
        }
        double score = 10.0;
        for (const auto& d : it->second) {
            if (static_cast<int>(r.docs.size()) >= n) break;
            r.docs.emplace_back(d, score--);
        }
        r.is_short = static_cast<int>(r.docs.size()) < n;
        return r;
    }
};

Document doc(std::string id, std::string title, std::string text) {
    Document d;
    d.id = std::move(id);
    d.title = std::move(title);
    d.text = std::move(text);
    return d;
}

ScriptEntry entry(std::string text, std::string key = "") {
    ScriptEntry e;
    e.key = std::move(key);
    e.response.text = std::move(text);
    return e;
}

Segment seg(SegmentKind k) { return Segment{k, "x", "x"}; }

}  // namespace

TEST_CASE("reclose_stopped_tag") {
    auto reclose = [](std::string s) {
        detail::reclose_stopped_tag(s);
        return s;
    };
    CHECK(reclose("<search>query") == "<search>query</search>");
    CHECK(reclose("<answer>42") == "<answer>42</answer>");
    CHECK(reclose("reasoning <search>q") == "reasoning <search>q</search>");
    // already balanced: untouched
    CHECK(reclose("<search>q</search>") == "<search>q</search>");
    CHECK(reclose("plain text") == "plain text");
    CHECK(reclose("") == "");
    // rightmost dangling opener wins
    CHECK(reclose("<search>a</search> then <answer>b") == "<search>a</search> then <answer>b</answer>");
    CHECK(reclose("<answer>a</answer> then <search>b") == "<answer>a</answer> then <search>b</search>");
    CHECK(reclose("<answer>a <search>b") == "<answer>a <search>b</search>");
    CHECK(reclose("<search>a <answer>b") == "<search>a <answer>b</answer>");
}

TEST_CASE("generate_step recloses only stop-finished emissions") {
    SECTION("stop finish restores the closing tag") {
        std::vector<ScriptEntry> entries{entry("<search>capital of France</search> ignored tail")};
        ScriptedBackend backend(entries);
        CallStats stats;
        CompletionResponse r = generate_step(backend, "ctx", SamplingParams{}, &stats);
        CHECK(r.text == "<search>capital of France</search>");
        CHECK(r.finish_reason == FinishReason::Stop);
        CHECK(stats.generator_calls == 1);
        // tokens counted on the truncated text, before reclosing: "<search>capital of France"
        CHECK(stats.completion_tokens == 3);
    }
    SECTION("length finish stays malformed") {
        std::vector<ScriptEntry> entries(1);
        entries[0].response.text = "<answer>cut mid-";
        entries[0].response.finish_reason = FinishReason::Length;
        ScriptedBackend backend(entries);
        CompletionResponse r = generate_step(backend, "ctx", SamplingParams{}, nullptr);
        CHECK(r.text == "<answer>cut mid-");
        CHECK(r.finish_reason == FinishReason::Length);
    }
}

TEST_CASE("run_trajectory answers after one search round") {
    PromptTemplate gen_tmpl("Question: {question}");
    PromptTemplate rr_tmpl("{query}|{document}");
    StaticRetriever retriever;
    retriever.table["capital of France"] = {doc("p1", "Paris", "Paris is the capital of France"),
                                            doc("p2", "France", "France is in Europe")};

    std::vector<ScriptEntry> gen{
        entry("Let me look this up. <search>capital of France</search>"),
        entry("The documents settle it. <answer>Paris</answer>"),
    };
    ScriptedBackend generator(gen);
    std::vector<ScriptEntry> rr{
        entry("States the capital outright (Relevance score: 5)"),
        entry("Background only (Relevance score: 2)"),
    };
    ScriptedBackend reranker(rr);

    RunConfig cfg;
    cfg.n_docs = 2;
    cfg.top_k = 1;
    cfg.max_turns = 3;
    CallStats stats;
    TrajectoryState t = run_trajectory(generator, reranker, retriever, gen_tmpl, rr_tmpl,
                                       "What is the capital of France?", cfg, &stats);

    CHECK(t.status == TrajectoryStatus::Answered);
    CHECK(t.answer == "Paris");
    CHECK(t.turns_used == 2);
    CHECK(t.fail_reason.empty());

    REQUIRE(t.segments.size() == 5);
    CHECK(t.segments[0].kind == SegmentKind::Reasoning);
    CHECK(t.segments[0].text == "Let me look this up.");
    CHECK(t.segments[1].kind == SegmentKind::Search);
    CHECK(t.segments[1].text == "capital of France");
    CHECK(t.segments[1].raw == "<search>capital of France</search>");
    CHECK(t.segments[2].kind == SegmentKind::Information);
    CHECK(t.segments[2].raw ==
          "<information>[Doc 1] States the capital outright (Relevance score: 5)</information>");
    CHECK(t.segments[2].text ==
          "[Doc 1] States the capital outright (Relevance score: 5)");
    CHECK(t.segments[3].kind == SegmentKind::Reasoning);
    CHECK(t.segments[3].text == "The documents settle it.");
    CHECK(t.segments[4].kind == SegmentKind::Answer);
    CHECK(t.segments[4].text == "Paris");
    CHECK(t.segments[4].raw == "<answer>Paris</answer>");

    CHECK(validate_format(t.segments));
    REQUIRE(t.rounds.size() == 1);
    CHECK(t.rounds[0].s_max == 5);
    CHECK(t.rounds[0].selected == std::vector<int>{0});
    REQUIRE(t.retrieved.size() == 2);
    CHECK(t.retrieved[0].id == "p1");
    CHECK(t.retrieved[1].id == "p2");

    CHECK(stats.generator_calls == 2);
    CHECK(stats.judge_calls == 2);
    CHECK(stats.rerank_rounds == 1);
    CHECK(stats.retrieved_docs == 2);
    CHECK(generator.remaining() == 0);
    CHECK(reranker.remaining() == 0);

    CHECK(compute_reward(t, {"Paris"}) == 1.0);
    CHECK(compute_reward(t, {"Lyon"}) == 0.2);
}

TEST_CASE("run_trajectory keeps only the text before the first closing marker") {
    // generation stops at the first closing marker, so the trailing search
    // tag never reaches the parser and the answer wins
    PromptTemplate gen_tmpl("{question}");
    PromptTemplate rr_tmpl("{document}");
    StaticRetriever retriever;
    std::vector<ScriptEntry> gen{
        entry("<answer>direct</answer> trailing <search>never used</search>")};
    ScriptedBackend generator(gen);
    std::vector<ScriptEntry> rr;
    ScriptedBackend reranker(rr);

    RunConfig cfg;
    TrajectoryState t =
        run_trajectory(generator, reranker, retriever, gen_tmpl, rr_tmpl, "q", cfg, nullptr);
    CHECK(t.status == TrajectoryStatus::Answered);
    CHECK(t.answer == "direct");
    CHECK(t.turns_used == 1);
    CHECK(reranker.calls() == 0);
}

TEST_CASE("run_trajectory grants one free retry per actionless emission") {
    PromptTemplate gen_tmpl("{question}");
    PromptTemplate rr_tmpl("{document}");
    StaticRetriever retriever;

    SECTION("retry succeeds and the musing becomes reasoning") {
        std::vector<ScriptEntry> gen{
            entry("Hmm, thinking out loud with no tag."),
            entry("<answer>second wind</answer>"),
        };
        ScriptedBackend generator(gen);
        std::vector<ScriptEntry> rr;
        ScriptedBackend reranker(rr);
        RunConfig cfg;
        CallStats stats;
        TrajectoryState t =
            run_trajectory(generator, reranker, retriever, gen_tmpl, rr_tmpl, "q", cfg, &stats);
        CHECK(t.status == TrajectoryStatus::Answered);
        CHECK(t.answer == "second wind");
        CHECK(t.turns_used == 1);
        CHECK(stats.generator_calls == 2);
        REQUIRE(t.segments.size() == 2);
        CHECK(t.segments[0].kind == SegmentKind::Reasoning);
        CHECK(t.segments[0].text == "Hmm, thinking out loud with no tag.");
        CHECK(t.segments[1].kind == SegmentKind::Answer);
    }
    SECTION("second consecutive miss fails the trajectory") {
        std::vector<ScriptEntry> gen{
            entry("first aimless emission"),
            entry("second aimless emission"),
        };
        ScriptedBackend generator(gen);
        std::vector<ScriptEntry> rr;
        ScriptedBackend reranker(rr);
        RunConfig cfg;
        cfg.max_turns = 4;
        CallStats stats;
        TrajectoryState t =
            run_trajectory(generator, reranker, retriever, gen_tmpl, rr_tmpl, "q", cfg, &stats);
        CHECK(t.status == TrajectoryStatus::Failed);
        CHECK(t.fail_reason == "two consecutive emissions without an action tag");
        CHECK(t.turns_used == 1);  // both misses burn the same turn
        CHECK(stats.generator_calls == 2);
        REQUIRE(t.segments.size() == 2);
        CHECK(t.segments[0].kind == SegmentKind::Reasoning);
        CHECK(t.segments[1].kind == SegmentKind::Reasoning);
        CHECK(t.segments[1].text == "second aimless emission");
        CHECK(compute_reward(t, {"whatever"}) == 0.0);
    }
    SECTION("a miss in a later turn also gets its own retry") {
        StaticRetriever r2;
        r2.table["q1"] = {doc("d", "", "body")};
        std::vector<ScriptEntry> gen{
            entry("<search>q1</search>"),
            entry("no action this time"),
            entry("<answer>recovered</answer>"),
        };
        ScriptedBackend generator(gen);
        std::vector<ScriptEntry> rr{entry("Good doc (Relevance score: 4)")};
        ScriptedBackend reranker(rr);
        RunConfig cfg;
        cfg.n_docs = 1;
        cfg.top_k = 1;
        TrajectoryState t =
            run_trajectory(generator, reranker, r2, gen_tmpl, rr_tmpl, "q", cfg, nullptr);
        CHECK(t.status == TrajectoryStatus::Answered);
        CHECK(t.answer == "recovered");
        CHECK(t.turns_used == 2);
        CHECK(validate_format(t.segments));
    }
}

TEST_CASE("run_trajectory failure paths") {
    PromptTemplate gen_tmpl("{question}");
    PromptTemplate rr_tmpl("{document}");

    SECTION("empty retrieval") {
        StaticRetriever retriever;  // knows no queries
        std::vector<ScriptEntry> gen{entry("<search>unknown topic</search>")};
        ScriptedBackend generator(gen);
        std::vector<ScriptEntry> rr;
        ScriptedBackend reranker(rr);
        RunConfig cfg;
        TrajectoryState t =
            run_trajectory(generator, reranker, retriever, gen_tmpl, rr_tmpl, "q", cfg, nullptr);
        CHECK(t.status == TrajectoryStatus::Failed);
        CHECK(t.fail_reason == "retrieval returned no documents");
        // the search segment is still recorded
        REQUIRE(t.segments.size() == 1);
        CHECK(t.segments[0].kind == SegmentKind::Search);
    }
    SECTION("all judgments fail") {
        StaticRetriever retriever;
        retriever.table["q1"] = {doc("d1", "", "one"), doc("d2", "", "two")};
        std::vector<ScriptEntry> gen{entry("<search>q1</search>")};
        ScriptedBackend generator(gen);
        std::vector<ScriptEntry> rr{entry("gibberish"), entry("more gibberish")};
        ScriptedBackend reranker(rr);
        RunConfig cfg;
        cfg.n_docs = 2;
        CallStats stats;
        TrajectoryState t =
            run_trajectory(generator, reranker, retriever, gen_tmpl, rr_tmpl, "q", cfg, &stats);
        CHECK(t.status == TrajectoryStatus::Failed);
        CHECK(t.fail_reason == "all reranker judgments failed");
        CHECK(stats.judge_calls == 2);
        CHECK(t.retrieved.size() == 2);  // raw retrieval is kept for attribution
    }
    SECTION("turn limit") {
        StaticRetriever retriever;
        retriever.table["loop"] = {doc("d1", "", "body")};
        std::vector<ScriptEntry> gen{entry("<search>loop</search>"), entry("<search>loop</search>")};
        ScriptedBackend generator(gen);
        std::vector<ScriptEntry> rr{entry("Fine (Relevance score: 3)"),
                                    entry("Fine (Relevance score: 3)")};
        ScriptedBackend reranker(rr);
        RunConfig cfg;
        cfg.n_docs = 1;
        cfg.top_k = 1;
        cfg.max_turns = 2;
        CallStats stats;
        TrajectoryState t =
            run_trajectory(generator, reranker, retriever, gen_tmpl, rr_tmpl, "q", cfg, &stats);
        CHECK(t.status == TrajectoryStatus::TurnLimit);
        CHECK(t.fail_reason == "turn limit reached without an answer");
        CHECK(t.turns_used == 2);
        CHECK(stats.generator_calls == 2);
        // the final search still received its information block
        REQUIRE(t.segments.size() == 4);
        CHECK(t.segments[3].kind == SegmentKind::Information);
        CHECK(t.answer.empty());
        CHECK(compute_reward(t, {"x"}) == 0.0);  // no answer, bad format, not parsed
    }
}

TEST_CASE("reward ladder covers every reachable flag combination") {
    CHECK(reward_from_flags(true, true, true) == 1.0);
    CHECK(reward_from_flags(true, false, true) == 0.8);
    CHECK(reward_from_flags(false, true, true) == 0.2);
    CHECK(reward_from_flags(false, true, false) == 0.2);
    CHECK(reward_from_flags(false, false, true) == 0.1);
    CHECK(reward_from_flags(false, false, false) == 0.0);
}

TEST_CASE("compute_reward distinguishes format from correctness") {
    // correct answer, well-formed trajectory
    TrajectoryState good;
    good.status = TrajectoryStatus::Answered;
    good.answer = "Paris";
    good.segments = {seg(SegmentKind::Search), seg(SegmentKind::Information),
                     seg(SegmentKind::Answer)};
    CHECK(compute_reward(good, {"Paris"}) == 1.0);

    // correct answer, malformed trajectory (search without information)
    TrajectoryState ans_only = good;
    ans_only.segments = {seg(SegmentKind::Search), seg(SegmentKind::Answer)};
    CHECK(compute_reward(ans_only, {"Paris"}) == 0.8);

    // wrong answer, well-formed
    CHECK(compute_reward(good, {"Lyon"}) == 0.2);

    // wrong answer, malformed, but an answer was parsed
    CHECK(compute_reward(ans_only, {"Lyon"}) == 0.1);

    // no answer at all
    TrajectoryState none;
    none.status = TrajectoryStatus::Failed;
    none.segments = {seg(SegmentKind::Reasoning)};
    CHECK(compute_reward(none, {"Paris"}) == 0.0);
}

TEST_CASE("info segment renders selected docs with 1-based positions") {
    RerankRound round;
    round.query = "q";
    for (int i = 0; i < 3; ++i) {
        RerankerJudgment j;
        j.doc_index = i;
        j.annotation = "doc " + std::to_string(i);
        j.score = 3 + i;
        j.parse_ok = true;
        round.judgments.push_back(j);
    }
    round.selected = {2, 0};
    Segment s = info_segment_from_round(round);
    CHECK(s.kind == SegmentKind::Information);
    CHECK(s.raw ==
          "<information>[Doc 3] doc 2 (Relevance score: 5)\n"
          "[Doc 1] doc 0 (Relevance score: 3)</information>");
    CHECK(s.text ==
          "[Doc 3] doc 2 (Relevance score: 5)\n[Doc 1] doc 0 (Relevance score: 3)");
}

TEST_CASE("trajectory json and transcript file") {
    TrajectoryState t;
    t.question = "q?";
    t.status = TrajectoryStatus::Answered;
    t.answer = "a";
    t.turns_used = 1;
    t.segments = {Segment{SegmentKind::Answer, "a", "<answer>a</answer>"}};

    json j = trajectory_to_json(t);
    CHECK(j.at("question") == "q?");
    CHECK(j.at("status") == "answered");
    CHECK(j.at("answer") == "a");
    CHECK(j.at("turns_used") == 1);
    REQUIRE(j.at("segments").size() == 1);
    CHECK(j["segments"][0].at("kind") == "answer");
    CHECK(j["segments"][0].at("raw") == "<answer>a</answer>");
    CHECK(j.at("rounds").is_array());

    rrr_test::TempDir tmp;
    const std::string path = tmp.file("transcripts.jsonl");
    write_transcripts_jsonl({t, t}, path);
    std::string body = rrr_test::read_file(path);
    size_t lines = std::count(body.begin(), body.end(), '\n');
    CHECK(lines == 2);
    json first = json::parse(body.substr(0, body.find('\n')));
    CHECK(first == trajectory_to_json(t));
}
