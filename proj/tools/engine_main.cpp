// Command-line front end: index / run / rerank-eval / distill over one JSON
// config. Exit codes: 0 success, 2 usage or configuration problem, 3 remote
// dependency unreachable, 4 runtime failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rrr/rrr.hpp"

namespace {

void write_text(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw rrr::IoError("cannot open for write: " + path);
    out << body;
    if (!out) throw rrr::IoError("write failed: " + path);
}

nlohmann::json strip_records(nlohmann::json j) {
    j.erase("records");
    return j;
}

int cmd_index(const rrr::EngineConfig& cfg, const std::string& out) {
    std::cout << rrr::run_index_build(cfg, out).dump(2) << "\n";
    return 0;
}

int cmd_run(const rrr::EngineConfig& cfg, const std::string& dataset_path,
            const std::string& mode_name, const std::string& out, int parallel) {
    const rrr::RunMode mode = rrr::run_mode_from_string(mode_name);
    const auto items = rrr::load_dataset_jsonl(dataset_path);
    rrr::probe_connectivity(cfg);
    rrr::EngineRuntime rt = rrr::make_runtime(cfg);
    const rrr::RunReport report = rrr::run_dataset(rt, cfg, mode, items, dataset_path, parallel);
    const nlohmann::json j = rrr::report_to_json(report, cfg);
    if (out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        write_text(out, j.dump(2) + "\n");
        rrr::write_run_trace(report, out + ".trace.jsonl");
        std::cout << strip_records(j).dump(2) << "\n";
    }
    return 0;
}

int cmd_rerank_eval(const rrr::EngineConfig& cfg, const std::string& dataset_path,
                    const std::string& out) {
    if (cfg.eval.qrels.empty())
        throw rrr::ConfigError("eval.qrels", "required for rerank evaluation");
    const auto items = rrr::load_dataset_jsonl(dataset_path);
    rrr::probe_connectivity(cfg);
    rrr::EngineRuntime rt = rrr::make_runtime(cfg);
    const nlohmann::json j = rrr::run_rerank_eval(rt, cfg, items);
    if (out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        write_text(out, j.dump(2) + "\n");
        std::cout << strip_records(j).dump(2) << "\n";
    }
    return 0;
}

int cmd_distill(const rrr::EngineConfig& cfg, const std::string& dataset_path,
                const std::string& out_dir, uint64_t seed) {
    const auto items = rrr::load_dataset_jsonl(dataset_path);
    rrr::probe_connectivity(cfg);
    rrr::EngineRuntime rt = rrr::make_runtime(cfg);
    std::cout << rrr::run_distill(rt, cfg, items, out_dir, seed).dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieve-rerank-reason engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::string dataset_path;
    std::string mode_name = "single";
    std::string out;
    uint64_t seed = 0;
    int parallel = 1;

    auto* index = app.add_subcommand("index", "build and save the lexical index");
    index->add_option("--config", config_path, "engine config json")->required();
    index->add_option("--out", out, "index output path (default: retrieval.index)");

    auto* run = app.add_subcommand("run", "answer a dataset and report metrics");
    run->add_option("--config", config_path, "engine config json")->required();
    run->add_option("--dataset", dataset_path, "questions jsonl")->required();
    run->add_option("--mode", mode_name, "single|tts|naive-mv-uqe|naive-mv-full");
    auto* seed_opt = run->add_option("--seed", seed, "override tts.seed");
    run->add_option("--parallel", parallel, "worker threads (live backends only)");
    run->add_option("--out", out, "report path; also writes <out>.trace.jsonl");

    auto* rerank_eval = app.add_subcommand("rerank-eval", "nDCG before vs after reranking");
    rerank_eval->add_option("--config", config_path, "engine config json")->required();
    rerank_eval->add_option("--dataset", dataset_path, "queries jsonl")->required();
    rerank_eval->add_option("--out", out, "metrics output path");

    auto* distill = app.add_subcommand("distill", "collect teacher relevance triplets");
    distill->add_option("--config", config_path, "engine config json")->required();
    distill->add_option("--dataset", dataset_path, "questions jsonl")->required();
    auto* dseed_opt = distill->add_option("--seed", seed, "override split seed");
    distill->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const rrr::EngineConfig cfg = rrr::load_config(config_path);
        if (index->parsed()) return cmd_index(cfg, out);
        if (run->parsed()) {
            rrr::EngineConfig effective = cfg;
            if (seed_opt->count() > 0) effective.tts.seed = seed;
            return cmd_run(effective, dataset_path, mode_name, out, parallel);
        }
        if (rerank_eval->parsed()) return cmd_rerank_eval(cfg, dataset_path, out);
        if (distill->parsed())
            return cmd_distill(cfg, dataset_path, out,
                               dseed_opt->count() > 0 ? seed : cfg.tts.seed);
        return 2;
    } catch (const rrr::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const rrr::ScriptParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const rrr::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const rrr::BackendTimeout& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const rrr::BackendError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const rrr::RetrieverUnavailable& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const rrr::ProtocolError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const rrr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
