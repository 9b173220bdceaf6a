#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/text.hpp"

namespace rrr {

struct Document {
    std::string id;
    std::string title;
    std::string text;
};

/// Ordered retrieval output. `is_short` flags fewer docs than requested.
struct RetrievalResult {
    std::string query;
    std::vector<std::pair<Document, double>> docs;  // scores non-increasing
    bool is_short = false;
};

class Retriever {
public:
    virtual ~Retriever() = default;
    virtual RetrievalResult search(const std::string& query, int n) const = 0;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Immutable in-process Okapi BM25 index. Desk-scale lexical stand-in for a
/// dense retriever:
///   idf(t)  = ln((N - df + 0.5)/(df + 0.5) + 1)
///   w(t, d) = tf*(k1+1) / (tf + k1*(1 - b + b*len/avglen))
/// Query terms contribute once per occurrence; only docs matching at least one
/// term are returned. Ties break by doc id ascending.
class Bm25Index : public Retriever {
public:
    static Bm25Index build(std::vector<Document> corpus, Bm25Params params = {}) {
        if (corpus.empty()) throw EmptyCorpus();
        if (!(params.k1 > 0.0)) throw Error("bm25 k1 must be > 0");
        if (params.b < 0.0 || params.b > 1.0) throw Error("bm25 b must be in [0, 1]");
        Bm25Index idx;
        idx.params_ = params;
        idx.docs_ = std::move(corpus);
        idx.doc_lens_.resize(idx.docs_.size());
        std::unordered_map<std::string, uint32_t> seen;
        double total_len = 0.0;
        for (uint32_t d = 0; d < idx.docs_.size(); ++d) {
            const Document& doc = idx.docs_[d];
            if (!seen.emplace(doc.id, d).second) throw DuplicateDocId(doc.id);
            auto toks = text::tokenize(doc.title + " " + doc.text);
            idx.doc_lens_[d] = static_cast<uint32_t>(toks.size());
            total_len += static_cast<double>(toks.size());
            std::map<std::string, uint32_t> tf;
            for (auto& t : toks) ++tf[t];
            for (auto& [term, count] : tf) idx.postings_[term].emplace_back(d, count);
        }
        idx.avg_len_ = total_len / static_cast<double>(idx.docs_.size());
        return idx;
    }

    RetrievalResult search(const std::string& query, int n) const override {
        RetrievalResult result;
        result.query = query;
        auto toks = text::tokenize(query);
        std::vector<double> scores(docs_.size(), 0.0);
        std::vector<char> matched(docs_.size(), 0);
        const double num_docs = static_cast<double>(docs_.size());
        for (const auto& t : toks) {
            auto it = postings_.find(t);
            if (it == postings_.end()) continue;
            const double df = static_cast<double>(it->second.size());
            const double idf = std::log((num_docs - df + 0.5) / (df + 0.5) + 1.0);
            for (const auto& [d, tf] : it->second) {
                const double len_norm =
                    1.0 - params_.b + params_.b * static_cast<double>(doc_lens_[d]) / avg_len_;
                scores[d] += idf * (static_cast<double>(tf) * (params_.k1 + 1.0)) /
                             (static_cast<double>(tf) + params_.k1 * len_norm);
                matched[d] = 1;
            }
        }
        std::vector<uint32_t> hits;
        for (uint32_t d = 0; d < docs_.size(); ++d)
            if (matched[d]) hits.push_back(d);
        std::sort(hits.begin(), hits.end(), [&](uint32_t a, uint32_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return docs_[a].id < docs_[b].id;
        });
        if (hits.size() > static_cast<size_t>(n)) hits.resize(static_cast<size_t>(n));
        for (uint32_t d : hits) result.docs.emplace_back(docs_[d], scores[d]);
        result.is_short = result.docs.size() < static_cast<size_t>(n);
        return result;
    }

    size_t size() const { return docs_.size(); }
    double avg_doc_len() const { return avg_len_; }
    uint32_t doc_len(size_t i) const { return doc_lens_[i]; }
    const std::vector<Document>& docs() const { return docs_; }
    const Bm25Params& params() const { return params_; }
    size_t vocabulary_size() const { return postings_.size(); }

    /// Persists to a single binary file with a versioned header. All integers
    /// little-endian, strings length-prefixed; term order is sorted, so
    /// identical corpora serialize to identical bytes.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open for write: " + path);
        out.write(kMagic, 8);
        write_u32(out, kVersion);
        write_f64(out, params_.k1);
        write_f64(out, params_.b);
        write_f64(out, avg_len_);
        write_u64(out, docs_.size());
        for (size_t i = 0; i < docs_.size(); ++i) {
            write_str(out, docs_[i].id);
            write_str(out, docs_[i].title);
            write_str(out, docs_[i].text);
            write_u32(out, doc_lens_[i]);
        }
        write_u64(out, postings_.size());
        for (const auto& [term, plist] : postings_) {
            write_str(out, term);
            write_u64(out, plist.size());
            for (const auto& [d, tf] : plist) {
                write_u32(out, d);
                write_u32(out, tf);
            }
        }
        if (!out) throw IoError("write failed: " + path);
    }

    static Bm25Index load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open for read: " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::string_view(magic, 8) != std::string_view(kMagic, 8))
            throw IoError("not a bm25 index file: " + path);
        if (read_u32(in) != kVersion) throw IoError("unsupported index version: " + path);
        Bm25Index idx;
        idx.params_.k1 = read_f64(in);
        idx.params_.b = read_f64(in);
        idx.avg_len_ = read_f64(in);
        uint64_t n_docs = read_u64(in);
        idx.docs_.resize(n_docs);
        idx.doc_lens_.resize(n_docs);
        for (uint64_t i = 0; i < n_docs; ++i) {
            idx.docs_[i].id = read_str(in);
            idx.docs_[i].title = read_str(in);
            idx.docs_[i].text = read_str(in);
            idx.doc_lens_[i] = read_u32(in);
        }
        uint64_t n_terms = read_u64(in);
        for (uint64_t i = 0; i < n_terms; ++i) {
            std::string term = read_str(in);
            uint64_t n_posts = read_u64(in);
            auto& plist = idx.postings_[term];
            plist.reserve(n_posts);
            for (uint64_t p = 0; p < n_posts; ++p) {
                uint32_t d = read_u32(in);
                uint32_t tf = read_u32(in);
                plist.emplace_back(d, tf);
            }
        }
        if (!in) throw IoError("truncated index file: " + path);
        return idx;
    }

private:
    Bm25Index() = default;

    static constexpr char kMagic[9] = "RRRBM25\x01";
    static constexpr uint32_t kVersion = 1;

    static void write_u32(std::ostream& o, uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
    static void write_u64(std::ostream& o, uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
    static void write_f64(std::ostream& o, double v) { o.write(reinterpret_cast<const char*>(&v), 8); }
    static void write_str(std::ostream& o, const std::string& s) {
        write_u64(o, s.size());
        o.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static uint32_t read_u32(std::istream& i) { uint32_t v = 0; i.read(reinterpret_cast<char*>(&v), 4); return v; }
    static uint64_t read_u64(std::istream& i) { uint64_t v = 0; i.read(reinterpret_cast<char*>(&v), 8); return v; }
    static double read_f64(std::istream& i) { double v = 0; i.read(reinterpret_cast<char*>(&v), 8); return v; }
    static std::string read_str(std::istream& i) {
        uint64_t n = read_u64(i);
        std::string s(n, '\0');
        i.read(s.data(), static_cast<std::streamsize>(n));
        return s;
    }

    Bm25Params params_;
    std::vector<Document> docs_;
    std::vector<uint32_t> doc_lens_;
    // term -> (doc index, term frequency), doc indices ascending
    std::map<std::string, std::vector<std::pair<uint32_t, uint32_t>>> postings_;
    double avg_len_ = 0.0;
};

/// Loads a JSON-lines corpus, one {"id","title","text"} object per line.
inline std::vector<Document> load_corpus_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus: " + path);
    std::vector<Document> docs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("id") || !j.contains("text"))
            throw IoError("corpus line " + std::to_string(line_no) + ": missing id/text");
        docs.push_back(Document{j["id"].get<std::string>(),
                                j.value("title", std::string()),
                                j["text"].get<std::string>()});
    }
    return docs;
}

}  // namespace rrr
