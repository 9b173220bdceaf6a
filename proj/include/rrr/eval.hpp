#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rrr/errors.hpp"
#include "rrr/model_client.hpp"
#include "rrr/prompts.hpp"
#include "rrr/retrieval.hpp"
#include "rrr/text.hpp"

namespace rrr {

/// Full answer normalization: lowercase, delete punctuation, drop the
/// articles "a"/"an"/"the", collapse whitespace. Used by exact match,
/// substring attribution, and vote bucketing.
inline std::string normalize_answer(std::string_view s) {
    std::string kept;
    kept.reserve(s.size());
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u))
            kept.push_back(static_cast<char>(std::tolower(u)));
        else if (std::isspace(u))
            kept.push_back(' ');
        // any other byte is deleted, not blanked
    }
    std::istringstream ss(kept);
    std::string tok, out;
    while (ss >> tok) {
        if (tok == "a" || tok == "an" || tok == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

/// Token overlap normalization: as above but articles are kept, so partial
/// credit reflects every word the prediction actually said.
inline std::vector<std::string> overlap_tokens(std::string_view s) {
    std::string kept;
    kept.reserve(s.size());
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u))
            kept.push_back(static_cast<char>(std::tolower(u)));
        else if (std::isspace(u))
            kept.push_back(' ');
    }
    std::istringstream ss(kept);
    std::vector<std::string> toks;
    std::string tok;
    while (ss >> tok) toks.push_back(tok);
    return toks;
}

inline bool exact_match(const std::string& pred, const std::vector<std::string>& golds) {
    if (golds.empty()) throw EmptyGold();
    const std::string p = normalize_answer(pred);
    for (const auto& g : golds)
        if (p == normalize_answer(g)) return true;
    return false;
}

/// Bag-of-words F1 against one gold string.
inline double f1_single(const std::string& pred, const std::string& gold) {
    auto pt = overlap_tokens(pred);
    auto gt = overlap_tokens(gold);
    if (pt.empty() && gt.empty()) return 1.0;
    if (pt.empty() || gt.empty()) return 0.0;
    std::map<std::string, int> gold_counts;
    for (const auto& t : gt) ++gold_counts[t];
    int same = 0;
    for (const auto& t : pt) {
        auto it = gold_counts.find(t);
        if (it != gold_counts.end() && it->second > 0) {
            ++same;
            --it->second;
        }
    }
    if (same == 0) return 0.0;
    const double precision = static_cast<double>(same) / static_cast<double>(pt.size());
    const double recall = static_cast<double>(same) / static_cast<double>(gt.size());
    return 2.0 * precision * recall / (precision + recall);
}

/// Max-over-golds token F1.
inline double f1(const std::string& pred, const std::vector<std::string>& golds) {
    if (golds.empty()) throw EmptyGold();
    double best = 0.0;
    for (const auto& g : golds) best = std::max(best, f1_single(pred, g));
    return best;
}

/// Rule-based retrieval attribution: true when any normalized gold answer
/// appears as a substring of any retrieved document (title + body), both
/// sides fully normalized. Operates on raw retrieval output, before
/// reranking.
inline bool ra_rule(const std::vector<std::string>& golds, const std::vector<Document>& docs) {
    if (golds.empty()) throw EmptyGold();
    for (const auto& g : golds) {
        const std::string ng = normalize_answer(g);
        if (ng.empty()) continue;
        for (const auto& d : docs) {
            if (normalize_answer(d.title + " " + d.text).find(ng) != std::string::npos)
                return true;
        }
    }
    return false;
}

/// Model-judged attribution. The judge prompt is rendered with {question},
/// {gold}, {context}; the verdict is the first word of the response, which
/// must read yes or no (trailing punctuation allowed).
inline bool ra_judge(Backend& judge, const PromptTemplate& tmpl, const std::string& question,
                     const std::vector<std::string>& golds, const std::vector<Document>& docs) {
    if (golds.empty()) throw EmptyGold();
    std::string context;
    for (const auto& d : docs) {
        if (!context.empty()) context += "\n";
        context += d.title.empty() ? d.text : d.title + ": " + d.text;
    }
    std::string gold_list;
    for (const auto& g : golds) {
        if (!gold_list.empty()) gold_list += "; ";
        gold_list += g;
    }
    CompletionRequest req;
    req.prompt = tmpl.render({{"question", question}, {"gold", gold_list}, {"context", context}});
    req.temperature = 0.0;
    req.max_tokens = 8;
    CompletionResponse resp = judge.complete(req);

    std::string word = text::lower(text::trim(resp.text));
    size_t end = 0;
    while (end < word.size() && std::isalpha(static_cast<unsigned char>(word[end]))) ++end;
    word.resize(end);
    if (word == "yes") return true;
    if (word == "no") return false;
    throw JudgeParseError(text::trim(resp.text));
}

/// One question's correctness/attribution bits for the conditional-accuracy
/// summary. The judge verdict is optional: absent when no judge ran or its
/// verdict did not parse.
struct CueRecord {
    bool em = false;
    bool ra_r = false;
    bool has_l = false;
    bool ra_l = false;
};

struct CueArm {
    double value = 0.0;
    bool defined = false;
};

struct CueCounts {
    int64_t accurate_r = 0;
    int64_t correct_and_accurate_r = 0;
    int64_t accurate_l = 0;
    int64_t correct_and_accurate_l = 0;
};

/// Exact-match rate conditioned on attributed retrieval, per attribution arm.
/// A zero denominator leaves the arm undefined and flagged, never silently
/// zero. Records without a judge verdict stay out of the judge arm entirely.
struct CueSummary {
    CueArm r;
    CueArm l;
    CueCounts counts;
};

inline CueSummary cue(const std::vector<CueRecord>& records) {
    CueSummary s;
    for (const auto& rec : records) {
        if (rec.ra_r) {
            ++s.counts.accurate_r;
            if (rec.em) ++s.counts.correct_and_accurate_r;
        }
        if (rec.has_l && rec.ra_l) {
            ++s.counts.accurate_l;
            if (rec.em) ++s.counts.correct_and_accurate_l;
        }
    }
    if (s.counts.accurate_r > 0) {
        s.r.defined = true;
        s.r.value = static_cast<double>(s.counts.correct_and_accurate_r) /
                    static_cast<double>(s.counts.accurate_r);
    }
    if (s.counts.accurate_l > 0) {
        s.l.defined = true;
        s.l.value = static_cast<double>(s.counts.correct_and_accurate_l) /
                    static_cast<double>(s.counts.accurate_l);
    }
    return s;
}

/// nDCG@k over a ranked list of doc ids. Unjudged docs count as gain 0.
/// Default gain is 2^rel - 1; `linear_gain` switches to rel itself. The
/// ideal ranking draws from every judged doc, not only the retrieved ones.
inline double ndcg_at_k(const std::vector<std::string>& ranked,
                        const std::map<std::string, int>& qrels, int k,
                        bool linear_gain = false) {
    if (k <= 0) throw BadCutoff(k);
    auto gain = [&](int rel) {
        if (rel <= 0) return 0.0;
        return linear_gain ? static_cast<double>(rel) : std::exp2(static_cast<double>(rel)) - 1.0;
    };
    double dcg = 0.0;
    const size_t top = std::min(static_cast<size_t>(k), ranked.size());
    for (size_t i = 0; i < top; ++i) {
        auto it = qrels.find(ranked[i]);
        if (it == qrels.end()) continue;
        dcg += gain(it->second) / std::log2(static_cast<double>(i) + 2.0);
    }
    std::vector<int> rels;
    rels.reserve(qrels.size());
    for (const auto& [_, rel] : qrels) rels.push_back(rel);
    std::sort(rels.begin(), rels.end(), std::greater<int>());
    double idcg = 0.0;
    for (size_t i = 0; i < std::min(static_cast<size_t>(k), rels.size()); ++i)
        idcg += gain(rels[i]) / std::log2(static_cast<double>(i) + 2.0);
    return idcg == 0.0 ? 0.0 : dcg / idcg;
}

/// TREC qrels: whitespace-separated "qid iter docid rel" lines.
inline std::map<std::string, std::map<std::string, int>> load_qrels_trec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open qrels: " + path);
    std::map<std::string, std::map<std::string, int>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        std::istringstream ss(line);
        std::string qid, iter, docid;
        int rel;
        if (!(ss >> qid >> iter >> docid >> rel))
            throw IoError("qrels line " + std::to_string(line_no) + ": expected 4 fields");
        out[qid][docid] = rel;
    }
    return out;
}

}  // namespace rrr
