#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/model_client.hpp"
#include "rrr/prompts.hpp"
#include "rrr/reranker.hpp"
#include "rrr/retrieval.hpp"
#include "rrr/stats.hpp"
#include "rrr/text.hpp"

namespace rrr {

enum class TripletStatus { Accepted, RejectedParse, RejectedRange, Skipped };

inline std::string to_string(TripletStatus s) {
    switch (s) {
        case TripletStatus::Accepted: return "accepted";
        case TripletStatus::RejectedParse: return "rejected_parse";
        case TripletStatus::RejectedRange: return "rejected_range";
        default: return "skipped";
    }
}

inline TripletStatus triplet_status_from_string(const std::string& s) {
    if (s == "accepted") return TripletStatus::Accepted;
    if (s == "rejected_parse") return TripletStatus::RejectedParse;
    if (s == "rejected_range") return TripletStatus::RejectedRange;
    if (s == "skipped") return TripletStatus::Skipped;
    throw IoError("unknown triplet status: " + s);
}

/// One (query, document) pair judged by the teacher. `prompt` is the rendered
/// teacher input; annotation/score/logit are populated only when Accepted.
/// `detail` carries the skip reason or the rejected raw response.
struct TripletRecord {
    std::string query;
    Document doc;
    std::string annotation;
    int score = 0;
    std::string teacher_model;
    double logit = -std::numeric_limits<double>::infinity();
    TripletStatus status = TripletStatus::Skipped;
    std::string prompt;
    std::string detail;
};

/// The trainable target: the annotation followed by the score line.
inline std::string sft_completion(const TripletRecord& r) {
    return r.annotation + "\nRelevance score: " + std::to_string(r.score);
}

namespace detail {

/// Splits parse failures into range violations (a well-formed trailing score
/// line whose integer lies outside 1..5) and everything else.
inline TripletStatus classify_rejection(const std::string& text) {
    const size_t marker = text.rfind(kScoreMarker);
    if (marker == std::string::npos) return TripletStatus::RejectedParse;
    size_t pos = marker + std::string_view(kScoreMarker).size();
    while (pos < text.size() && text::is_space(text[pos])) ++pos;
    const size_t digits_begin = pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
    if (pos == digits_begin) return TripletStatus::RejectedParse;
    for (size_t i = pos; i < text.size(); ++i) {
        char c = text[i];
        if (!text::is_space(c) && c != '.' && c != ')') return TripletStatus::RejectedParse;
    }
    const std::string digits = text.substr(digits_begin, pos - digits_begin);
    if (digits.size() > 9) return TripletStatus::RejectedRange;
    const long value = std::stol(digits);
    if (value < 1 || value > 5) return TripletStatus::RejectedRange;
    return TripletStatus::RejectedParse;  // in-range but malformed, e.g. zero-padded
}

}  // namespace detail

/// Issues one teacher call for a (query, document) pair and grades the
/// response with the reranker's parse contract. Backend failures (after the
/// client's own retries) become Skipped records, never exceptions.
inline TripletRecord collect_pair(Backend& teacher, const PromptTemplate& tmpl,
                                  const std::string& query, const Document& doc,
                                  const SamplingParams& sampling, CallStats* stats = nullptr) {
    TripletRecord rec;
    rec.query = query;
    rec.doc = doc;
    rec.teacher_model = teacher.name();

    CompletionRequest req;
    req.prompt = tmpl.render({{"question", query},
                              {"query", query},
                              {"title", doc.title},
                              {"document", doc.text}});
    req.temperature = sampling.temperature;
    req.top_p = sampling.top_p;
    req.max_tokens = sampling.max_tokens;
    req.want_logprobs = true;
    rec.prompt = req.prompt;

    CompletionResponse resp;
    try {
        resp = teacher.complete(req);
    } catch (const Error& e) {
        rec.status = TripletStatus::Skipped;
        rec.detail = e.what();
        return rec;
    }
    if (stats) {
        ++stats->judge_calls;
        const int64_t tokens = detail::count_tokens(resp);
        stats->completion_tokens += tokens;
        stats->reranker_tokens += tokens;
    }
    RerankerJudgment j = parse_judgment(resp, 0);
    if (j.parse_ok) {
        rec.status = TripletStatus::Accepted;
        rec.annotation = std::move(j.annotation);
        rec.score = j.score;
        rec.logit = j.logit;
    } else {
        rec.status = detail::classify_rejection(resp.text);
        rec.detail = text::trim(resp.text);
    }
    return rec;
}

inline nlohmann::json triplet_to_json(const TripletRecord& r) {
    nlohmann::json out = {{"query", r.query},
                          {"doc", {{"id", r.doc.id}, {"title", r.doc.title}, {"text", r.doc.text}}},
                          {"annotation", r.annotation},
                          {"score", r.score},
                          {"teacher_model", r.teacher_model},
                          {"status", to_string(r.status)},
                          {"prompt", r.prompt},
                          {"detail", r.detail}};
    if (std::isfinite(r.logit)) out["logit"] = r.logit;
    return out;
}

inline TripletRecord triplet_from_json(const nlohmann::json& j) {
    TripletRecord r;
    r.query = j.at("query").get<std::string>();
    const auto& d = j.at("doc");
    r.doc = Document{d.at("id").get<std::string>(), d.value("title", std::string()),
                     d.at("text").get<std::string>()};
    r.annotation = j.value("annotation", std::string());
    r.score = j.value("score", 0);
    r.teacher_model = j.value("teacher_model", std::string());
    if (j.contains("logit")) r.logit = j["logit"].get<double>();
    r.status = triplet_status_from_string(j.at("status").get<std::string>());
    r.prompt = j.value("prompt", std::string());
    r.detail = j.value("detail", std::string());
    return r;
}

inline std::vector<TripletRecord> load_triplets_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open triplets: " + path);
    std::vector<TripletRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(triplet_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("triplets line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

struct StatusCounts {
    size_t accepted = 0;
    size_t rejected_parse = 0;
    size_t rejected_range = 0;
    size_t skipped = 0;

    size_t total() const { return accepted + rejected_parse + rejected_range + skipped; }
};

inline StatusCounts count_statuses(const std::vector<TripletRecord>& records) {
    StatusCounts c;
    for (const auto& r : records) {
        switch (r.status) {
            case TripletStatus::Accepted: ++c.accepted; break;
            case TripletStatus::RejectedParse: ++c.rejected_parse; break;
            case TripletStatus::RejectedRange: ++c.rejected_range; break;
            case TripletStatus::Skipped: ++c.skipped; break;
        }
    }
    return c;
}

/// Collection is resumable: the cursor sidecar records how many pairs have
/// been fully processed, so an interrupted run picks up after the last
/// acknowledged pair instead of re-calling the teacher.
struct CollectCursor {
    size_t next_pair = 0;
};

inline CollectCursor load_cursor(const std::string& path) {
    std::ifstream in(path);
    if (!in) return {};
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("cursor file " + path + ": " + e.what());
    }
    return CollectCursor{j.value("next_pair", size_t{0})};
}

inline void save_cursor(const std::string& path, const CollectCursor& cursor) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path);
    out << nlohmann::json{{"next_pair", cursor.next_pair}}.dump() << "\n";
    if (!out) throw IoError("write failed: " + path);
}

/// Appends triplets to a JSONL file and keeps the pair cursor in sync; the
/// cursor is written only after the record lands, so a crash between the two
/// re-emits at most pairs it never acknowledged.
class TripletWriter {
public:
    explicit TripletWriter(const std::string& out_path)
        : out_path_(out_path), cursor_path_(out_path + ".cursor") {}

    CollectCursor resume() const { return load_cursor(cursor_path_); }

    void append(const TripletRecord& r, size_t next_pair) {
        std::ofstream out(out_path_, std::ios::app);
        if (!out) throw IoError("cannot open for append: " + out_path_);
        out << triplet_to_json(r).dump() << "\n";
        out.flush();
        if (!out) throw IoError("write failed: " + out_path_);
        save_cursor(cursor_path_, CollectCursor{next_pair});
    }

    const std::string& path() const { return out_path_; }
    const std::string& cursor_path() const { return cursor_path_; }

private:
    std::string out_path_;
    std::string cursor_path_;
};

struct SplitResult {
    std::vector<TripletRecord> train;
    std::vector<TripletRecord> holdout;
    size_t accepted = 0;
    size_t rejected = 0;  // everything non-Accepted, skips included
};

/// Keeps Accepted records, shuffles deterministically, splits with the train
/// share floored. The shuffle is an explicit Fisher-Yates over mt19937_64
/// draws, never std::shuffle, whose visitation order the standard leaves open.
inline SplitResult filter_and_split(const std::vector<TripletRecord>& records,
                                    double train_fraction, uint64_t seed) {
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw Error("train_fraction must be in (0, 1)");
    SplitResult out;
    std::vector<TripletRecord> accepted;
    for (const auto& r : records) {
        if (r.status == TripletStatus::Accepted)
            accepted.push_back(r);
        else
            ++out.rejected;
    }
    if (accepted.empty()) throw EmptyDataset();
    out.accepted = accepted.size();

    std::mt19937_64 eng(seed);
    for (size_t i = accepted.size() - 1; i > 0; --i) {
        size_t j = static_cast<size_t>(eng() % (i + 1));
        std::swap(accepted[i], accepted[j]);
    }
    const size_t train_n =
        static_cast<size_t>(std::floor(static_cast<double>(accepted.size()) * train_fraction));
    out.train.assign(accepted.begin(), accepted.begin() + static_cast<ptrdiff_t>(train_n));
    out.holdout.assign(accepted.begin() + static_cast<ptrdiff_t>(train_n), accepted.end());
    return out;
}

/// SFT-ready dump: one {"prompt","completion"} object per record.
inline void write_sft_jsonl(const std::vector<TripletRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path);
    for (const auto& r : records)
        out << nlohmann::json{{"prompt", r.prompt}, {"completion", sft_completion(r)}}.dump()
            << "\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace rrr
