#include <catch2/catch_amalgamated.hpp>

#include <regex>
#include <string>
#include <variant>
#include <vector>

#include "rrr/trajectory.hpp"

using namespace rrr;

namespace {

Segment seg(SegmentKind k) { return Segment{k, "x", "x"}; }

std::vector<Segment> seq(const std::string& letters) {
    std::vector<Segment> out;
    for (char c : letters) {
        switch (c) {
            case 'R': out.push_back(seg(SegmentKind::Reasoning)); break;
            case 'S': out.push_back(seg(SegmentKind::Search)); break;
            case 'I': out.push_back(seg(SegmentKind::Information)); break;
            case 'A': out.push_back(seg(SegmentKind::Answer)); break;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("find_tag basics") {
    auto t = detail::find_tag("pre <search>q</search> post", "<search>", "</search>");
    REQUIRE(t.has_value());
    CHECK(t->payload == "q");
    CHECK(t->begin == 4);
    CHECK(t->end == 22);
}

TEST_CASE("find_tag skips empty payloads and keeps scanning") {
    auto t = detail::find_tag("<search>  </search><search>real</search>", "<search>", "</search>");
    REQUIRE(t.has_value());
    CHECK(t->payload == "real");
}

TEST_CASE("find_tag treats unclosed tags as plain text") {
    CHECK_FALSE(detail::find_tag("<search>dangling", "<search>", "</search>").has_value());
    CHECK_FALSE(detail::find_tag("no tags at all", "<search>", "</search>").has_value());
}

TEST_CASE("parse_action extracts a search query") {
    auto a = parse_action("I should look this up. <search>capital of France</search>");
    REQUIRE(std::holds_alternative<SearchQuery>(a));
    CHECK(std::get<SearchQuery>(a).query == "capital of France");
}

TEST_CASE("parse_action: a well-formed answer anywhere beats any search") {
    auto a = parse_action("<search>q</search> wait, I know: <answer>Paris</answer>");
    REQUIRE(std::holds_alternative<FinalAnswer>(a));
    CHECK(std::get<FinalAnswer>(a).answer == "Paris");

    a = parse_action("<answer>42</answer> but maybe <search>double check</search>");
    REQUIRE(std::holds_alternative<FinalAnswer>(a));
}

TEST_CASE("parse_action: malformed answer falls back to search") {
    auto a = parse_action("<answer>dangling <search>q</search>");
    // no closing </answer>, so the search is the only action
    REQUIRE(std::holds_alternative<SearchQuery>(a));
    CHECK(std::get<SearchQuery>(a).query == "q");
}

TEST_CASE("parse_action: empty payloads do not count") {
    CHECK(std::holds_alternative<std::monostate>(parse_action("<answer> </answer>")));
    CHECK(std::holds_alternative<std::monostate>(parse_action("<search></search>")));
    CHECK(std::holds_alternative<std::monostate>(parse_action("just thinking out loud")));
    CHECK(std::holds_alternative<std::monostate>(parse_action("")));
}

TEST_CASE("parse_action_span carries prefix and raw span") {
    auto span = detail::parse_action_span("  reasoning here  <search>q 1</search> tail");
    REQUIRE(std::holds_alternative<SearchQuery>(span.action));
    CHECK(span.prefix == "reasoning here");
    CHECK(span.raw_span == "<search>q 1</search>");

    span = detail::parse_action_span("<answer>done</answer>");
    CHECK(span.prefix.empty());
    CHECK(span.raw_span == "<answer>done</answer>");
}

TEST_CASE("validate_format accepts the grammar") {
    CHECK(validate_format(seq("A")));
    CHECK(validate_format(seq("RA")));
    CHECK(validate_format(seq("SIA")));
    CHECK(validate_format(seq("RSIA")));
    CHECK(validate_format(seq("SIRA")));
    CHECK(validate_format(seq("RSIRSIRA")));
    CHECK(validate_format(seq("SISIA")));
}

TEST_CASE("validate_format rejects violations") {
    CHECK_FALSE(validate_format(seq("")));
    CHECK_FALSE(validate_format(seq("R")));
    CHECK_FALSE(validate_format(seq("S")));
    CHECK_FALSE(validate_format(seq("SI")));       // no final answer
    CHECK_FALSE(validate_format(seq("SA")));       // search without information
    CHECK_FALSE(validate_format(seq("SSIA")));
    CHECK_FALSE(validate_format(seq("SIIA")));     // stray information
    CHECK_FALSE(validate_format(seq("IA")));
    CHECK_FALSE(validate_format(seq("AA")));       // answer must be unique
    CHECK_FALSE(validate_format(seq("ASIA")));     // answer must be final
    CHECK_FALSE(validate_format(seq("AR")));
    CHECK_FALSE(validate_format(seq("RRA")));      // at most one reasoning per slot
}

TEST_CASE("validate_format agrees with a regex oracle on all sequences up to length 6") {
    // (Reasoning? Search Information)* Reasoning? Answer
    const std::regex grammar("((R)?SI)*(R)?A");
    const char kinds[] = {'R', 'S', 'I', 'A'};
    for (int len = 0; len <= 6; ++len) {
        const int total = static_cast<int>(std::pow(4, len));
        for (int code = 0; code < total; ++code) {
            std::string letters;
            int c = code;
            for (int i = 0; i < len; ++i) {
                letters.push_back(kinds[c % 4]);
                c /= 4;
            }
            const bool expected = std::regex_match(letters, grammar);
            INFO("sequence: " << (letters.empty() ? "<empty>" : letters));
            CHECK(validate_format(seq(letters)) == expected);
        }
    }
}

TEST_CASE("render_information formats one line per selected doc") {
    RerankerJudgment a;
    a.annotation = "covers the capital";
    a.score = 5;
    RerankerJudgment b;
    b.annotation = "tangential mention";
    b.score = 2;
    const std::string block = render_information({{1, a}, {3, b}});
    CHECK(block ==
          "<information>[Doc 1] covers the capital (Relevance score: 5)\n"
          "[Doc 3] tangential mention (Relevance score: 2)</information>");
}

TEST_CASE("render_information rejects an empty selection") {
    CHECK_THROWS_AS(render_information(std::vector<std::pair<int, RerankerJudgment>>{}),
                    EmptySelection);
}
