#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrr/model_client.hpp"
#include "rrr/reranker.hpp"
#include "test_util.hpp"

using namespace rrr;
using nlohmann::json;

namespace {

struct ParseCase {
    std::string name;
    CompletionResponse resp;
    json expect;
};

std::vector<ParseCase> load_parse_cases() {
    std::ifstream in(rrr_test::fixture("reranker_parse_cases.jsonl"));
    REQUIRE(in.good());
    std::vector<ParseCase> cases;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ParseCase c;
        c.name = j.at("name").get<std::string>();
        c.resp.text = j.at("text").get<std::string>();
        if (j.contains("token_logprobs"))
            for (const auto& t : j["token_logprobs"])
                c.resp.token_logprobs.push_back(
                    {t.at("token").get<std::string>(), t.at("logprob").get<double>()});
        c.expect = j.at("expect");
        cases.push_back(std::move(c));
    }
    return cases;
}

CompletionResponse resp_of(std::string text) {
    CompletionResponse r;
    r.text = std::move(text);
    return r;
}

RerankerJudgment mk(int idx, int score, double logit, bool ok = true) {
    RerankerJudgment j;
    j.doc_index = idx;
    j.score = score;
    j.logit = logit;
    j.parse_ok = ok;
    j.annotation = "a";
    return j;
}

}  // namespace

TEST_CASE("parse_judgment fixture cases") {
    auto cases = load_parse_cases();
    REQUIRE(cases.size() >= 20);
    for (const auto& c : cases) {
        INFO(c.name);
        RerankerJudgment j = parse_judgment(c.resp, 7);
        CHECK(j.doc_index == 7);
        if (c.expect.at("parse_ok").get<bool>()) {
            CHECK(j.parse_ok);
            CHECK(j.score == c.expect.at("score").get<int>());
            CHECK(j.annotation == c.expect.at("annotation").get<std::string>());
            if (c.expect.contains("logit")) {
                if (c.expect["logit"].is_null()) {
                    CHECK(std::isinf(j.logit));
                    CHECK(j.logit < 0);
                } else {
                    CHECK(j.logit == c.expect["logit"].get<double>());
                }
            }
        } else {
            CHECK_FALSE(j.parse_ok);
            CHECK(j.score == 1);
            CHECK(std::isinf(j.logit));
            CHECK(j.logit < 0);
            CHECK(j.annotation == text::trim(c.resp.text));
        }
    }
}

TEST_CASE("parse_judgment logit requires exact trimmed token match") {
    CompletionResponse r = resp_of("Close enough. Relevance score: 4");
    r.token_logprobs = {{"44", -0.1}, {" 4.", -0.2}, {"4 ", -0.7}};
    RerankerJudgment j = parse_judgment(r, 0);
    REQUIRE(j.parse_ok);
    // "44" and " 4." do not trim to "4"; "4 " does.
    CHECK(j.logit == -0.7);
}

TEST_CASE("judge_document renders template and prefers exact prompt match") {
    PromptTemplate tmpl("Q={question}|S={query}|T={title}|D={document}");
    const std::string rendered = "Q=who|S=sub|T=ttl|D=body";

    std::vector<ScriptEntry> entries;
    ScriptEntry decoy;
    decoy.key = "something else";
    decoy.response.text = "Wrong branch. Relevance score: 1";
    entries.push_back(decoy);
    ScriptEntry hit;
    hit.key = rendered;
    hit.response.text = "Matches the asked entity (Relevance score: 5)";
    hit.response.token_logprobs = {{"5", -0.125}};
    entries.push_back(hit);
    ScriptedBackend backend(entries);

    Document doc;
    doc.id = "d1";
    doc.title = "ttl";
    doc.text = "body";
    RerankOptions opts;
    CallStats stats;
    RerankerJudgment j = judge_document(backend, tmpl, "who", "sub", doc, 3, opts, &stats);
    REQUIRE(j.parse_ok);
    CHECK(j.score == 5);
    CHECK(j.logit == -0.125);
    CHECK(j.annotation == "Matches the asked entity");
    CHECK(j.doc_index == 3);
    CHECK(stats.judge_calls == 1);
    // One logprob entry: token count is 1, charged to both counters.
    CHECK(stats.completion_tokens == 1);
    CHECK(stats.reranker_tokens == 1);
    CHECK(backend.remaining() == 1);  // decoy untouched
}

TEST_CASE("judge_document counts whitespace tokens when logprobs absent") {
    std::vector<ScriptEntry> entries(1);
    entries[0].response.text = "Covers two of three aspects. Relevance score: 4";
    ScriptedBackend backend(entries);
    CallStats stats;
    RerankOptions opts;
    Document doc;
    RerankerJudgment j =
        judge_document(backend, PromptTemplate("{query}"), "q", "q", doc, 0, opts, &stats);
    REQUIRE(j.parse_ok);
    CHECK(stats.completion_tokens == 8);
    CHECK(stats.reranker_tokens == 8);
}

TEST_CASE("judge_document resamples once on parse failure when enabled") {
    SECTION("second sample parses") {
        std::vector<ScriptEntry> entries(2);
        entries[0].response.text = "no score line here";
        entries[1].response.text = "Second try lands (Relevance score: 3)";
        ScriptedBackend backend(entries);
        CallStats stats;
        RerankOptions opts;
        opts.resample_on_parse_failure = true;
        Document doc;
        RerankerJudgment j =
            judge_document(backend, PromptTemplate("p"), "q", "q", doc, 0, opts, &stats);
        CHECK(j.parse_ok);
        CHECK(j.score == 3);
        CHECK(stats.judge_calls == 2);
        CHECK(stats.completion_tokens == 4 + 6);
        CHECK(stats.reranker_tokens == 4 + 6);
        CHECK(backend.remaining() == 0);
    }
    SECTION("second failure is final") {
        std::vector<ScriptEntry> entries(2);
        entries[0].response.text = "still nothing";
        entries[1].response.text = "again nothing";
        ScriptedBackend backend(entries);
        CallStats stats;
        RerankOptions opts;
        opts.resample_on_parse_failure = true;
        Document doc;
        RerankerJudgment j =
            judge_document(backend, PromptTemplate("p"), "q", "q", doc, 0, opts, &stats);
        CHECK_FALSE(j.parse_ok);
        CHECK(stats.judge_calls == 2);
        CHECK(backend.remaining() == 0);
    }
    SECTION("no resample when first parses") {
        std::vector<ScriptEntry> entries(2);
        entries[0].response.text = "Good enough (Relevance score: 2)";
        entries[1].response.text = "never consumed";
        ScriptedBackend backend(entries);
        CallStats stats;
        RerankOptions opts;
        opts.resample_on_parse_failure = true;
        Document doc;
        judge_document(backend, PromptTemplate("p"), "q", "q", doc, 0, opts, &stats);
        CHECK(stats.judge_calls == 1);
        CHECK(backend.remaining() == 1);
    }
    SECTION("disabled flag never resamples") {
        std::vector<ScriptEntry> entries(2);
        entries[0].response.text = "unparseable";
        entries[1].response.text = "Would parse (Relevance score: 5)";
        ScriptedBackend backend(entries);
        CallStats stats;
        RerankOptions opts;
        Document doc;
        RerankerJudgment j =
            judge_document(backend, PromptTemplate("p"), "q", "q", doc, 0, opts, &stats);
        CHECK_FALSE(j.parse_ok);
        CHECK(stats.judge_calls == 1);
        CHECK(backend.remaining() == 1);
    }
}

TEST_CASE("select_top_k ordering and filtering") {
    std::vector<RerankerJudgment> js;
    js.push_back(mk(0, 3, -1.0));
    js.push_back(mk(1, 5, -2.0));
    js.push_back(mk(2, 5, -0.5));
    js.push_back(mk(3, 4, -0.1, false));  // unparsed: excluded despite high score
    js.push_back(mk(4, 3, -1.0));         // ties 0 on score and logit: index decides

    SECTION("full order") {
        auto sel = select_top_k(js, 10);
        CHECK(sel == std::vector<int>{2, 1, 0, 4});
    }
    SECTION("truncation") {
        auto sel = select_top_k(js, 2);
        CHECK(sel == std::vector<int>{2, 1});
    }
    SECTION("k zero") {
        CHECK(select_top_k(js, 0).empty());
    }
    SECTION("all unparsed") {
        std::vector<RerankerJudgment> bad{mk(0, 5, -1.0, false)};
        CHECK(select_top_k(bad, 3).empty());
    }
}

TEST_CASE("rerank judges every doc in retrieval order") {
    std::vector<ScriptEntry> entries(3);
    entries[0].response.text = "First doc is best (Relevance score: 5)";
    entries[0].response.token_logprobs = {{"5", -0.3}};
    entries[1].response.text = "garbled";
    entries[2].response.text = "Third doc helps (Relevance score: 4)";
    ScriptedBackend backend(entries);

    RetrievalResult rr;
    rr.query = "test query";
    for (int i = 0; i < 3; ++i) {
        Document d;
        d.id = "d" + std::to_string(i);
        d.text = "text " + std::to_string(i);
        rr.docs.emplace_back(d, 3.0 - i);
    }

    RerankOptions opts;
    opts.top_k = 2;
    CallStats stats;
    RerankRound round =
        rerank(backend, PromptTemplate("{document}"), "q", rr, opts, &stats);
    CHECK(round.query == "test query");
    REQUIRE(round.judgments.size() == 3);
    CHECK(round.judgments[0].doc_index == 0);
    CHECK(round.judgments[1].doc_index == 1);
    CHECK_FALSE(round.judgments[1].parse_ok);
    CHECK(round.judgments[2].doc_index == 2);
    CHECK(round.selected == std::vector<int>{0, 2});
    CHECK(round.s_max == 5);
    CHECK(round.l_of_smax == -0.3);
    CHECK(stats.judge_calls == 3);
    CHECK(stats.rerank_rounds == 1);
}

TEST_CASE("rerank throws when every judgment fails") {
    std::vector<ScriptEntry> entries(2);
    entries[0].response.text = "nope";
    entries[1].response.text = "still nope";
    ScriptedBackend backend(entries);

    RetrievalResult rr;
    rr.query = "doomed";
    Document a, b;
    a.id = "a";
    b.id = "b";
    rr.docs.emplace_back(a, 1.0);
    rr.docs.emplace_back(b, 0.5);

    RerankOptions opts;
    CHECK_THROWS_AS(rerank(backend, PromptTemplate("p"), "q", rr, opts), AllJudgmentsFailed);
}

TEST_CASE("judgment and round json omit non-finite logits") {
    RerankerJudgment ok = mk(1, 4, -0.5);
    json jok = judgment_to_json(ok);
    CHECK(jok.at("logit") == -0.5);
    CHECK(jok.at("score") == 4);
    CHECK(jok.at("parse_ok") == true);

    RerankerJudgment bad;
    bad.annotation = "raw text";
    json jbad = judgment_to_json(bad);
    CHECK_FALSE(jbad.contains("logit"));
    CHECK(jbad.at("score") == 1);
    CHECK(jbad.at("parse_ok") == false);

    RerankRound r;
    r.query = "q";
    r.judgments = {bad};
    r.s_max = 1;
    json jr = round_to_json(r);
    CHECK_FALSE(jr.contains("l_of_smax"));
    CHECK(jr.at("judgments").size() == 1);
    CHECK(jr.at("selected").is_array());
}
