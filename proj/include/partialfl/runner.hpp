#pragma once

#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "partialfl/config.hpp"
#include "partialfl/data.hpp"
#include "partialfl/federation.hpp"

namespace partialfl {

inline constexpr const char* kVersionString = "partialfl 0.1.0";

struct ReportDocument {
    ExperimentConfig config;  // echo, reconstructs the run
    std::vector<RoundReport> rounds;
    std::vector<std::pair<std::string, double>> final_metrics;
    double wall_clock_seconds = 0.0;
    std::string version = kVersionString;
};

// Builds data -> shards -> engine from one master seed. The master drives
// separate derived streams (data, partition, sampling, init, batching) so a
// sweep over one factor holds the others' draws fixed. An imported dataset
// replaces generation; splitting and partitioning still run seeded.
inline ExperimentData prepare_data(const ExperimentConfig& cfg,
                                   const SyntheticDataset* imported = nullptr) {
    const std::uint64_t master = cfg.federation.seed;

    SyntheticDataset full;
    if (imported) {
        full = *imported;
    } else {
        SyntheticSpec data_spec = cfg.data;
        data_spec.seed = derive_seed(master, "data");
        full = generate_synthetic(data_spec);
    }
    Rng split_rng = derive_rng(master, "data", 1);
    TrainTestSplit split = stratified_split(full, cfg.test_fraction, split_rng);

    Rng part_rng = derive_rng(master, "partition");
    ExperimentData data;
    if (cfg.partition.mode == PartitionMode::dirichlet)
        data.shards =
            dirichlet_partition(split.train, cfg.federation.clients, cfg.partition.alpha, part_rng);
    else
        data.shards = speaker_equal_partition(split.train, cfg.federation.clients, part_rng);
    apply_missing_modality(data.shards, cfg.modality_q, part_rng);

    data.test = std::move(split.test);
    Rng extractor_rng = derive_rng(master, "init", 0);
    data.extractor =
        FrozenExtractor(cfg.model.shareable_raw_dim, cfg.model.shareable_rep_dim, extractor_rng);
    return data;
}

inline ReportDocument run(const ExperimentConfig& cfg, Hooks hooks = {}, unsigned threads = 1,
                          const SyntheticDataset* imported = nullptr) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();

    ExperimentData data = prepare_data(cfg, imported);
    ExperimentResult result =
        run_experiment(cfg.federation, cfg.model, data, cfg.eval, std::move(hooks), threads);

    ReportDocument doc;
    doc.config = cfg;
    doc.rounds = std::move(result.rounds);
    doc.final_metrics = std::move(result.final_metrics);
    doc.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return doc;
}

namespace report_detail {

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string optional_cell(const std::optional<double>& v) {
    return v ? format_double(*v) : "";
}

}  // namespace report_detail

// CSV body: header + one row per round, fixed column order. Metric cells are
// empty on rounds without an evaluation.
inline void write_report_csv(const ReportDocument& doc, std::ostream& os) {
    const ExperimentConfig& cfg = doc.config;
    os << "round,algorithm,alpha,q,tau,beta,seed,loss_glob,loss_loc,loss_server";
    for (const auto& name : cfg.eval.metric_names) os << "," << name;
    os << "\n";
    for (const auto& r : doc.rounds) {
        os << r.round << "," << to_string(cfg.federation.algorithm) << ","
           << report_detail::format_double(cfg.partition.alpha) << ","
           << report_detail::format_double(cfg.modality_q) << ","
           << report_detail::format_double(cfg.federation.temperature) << ","
           << report_detail::format_double(cfg.federation.beta) << "," << cfg.federation.seed
           << "," << report_detail::optional_cell(r.loss_glob) << ","
           << report_detail::optional_cell(r.loss_loc) << ","
           << report_detail::optional_cell(r.loss_server);
        for (std::size_t m = 0; m < cfg.eval.metric_names.size(); ++m) {
            os << ",";
            if (r.evaluated) os << report_detail::format_double(r.metrics[m].second);
        }
        os << "\n";
    }
}

// JSON-lines body: the config object on line 1, then one object per round
// mirroring the CSV columns.
inline void write_report_jsonl(const ReportDocument& doc, std::ostream& os) {
    const ExperimentConfig& cfg = doc.config;
    os << config_to_json(cfg).dump() << "\n";
    for (const auto& r : doc.rounds) {
        nlohmann::json line{{"round", r.round},
                            {"algorithm", to_string(cfg.federation.algorithm)},
                            {"alpha", cfg.partition.alpha},
                            {"q", cfg.modality_q},
                            {"tau", cfg.federation.temperature},
                            {"beta", cfg.federation.beta},
                            {"seed", cfg.federation.seed}};
        line["loss_glob"] = r.loss_glob ? nlohmann::json(*r.loss_glob) : nlohmann::json();
        line["loss_loc"] = r.loss_loc ? nlohmann::json(*r.loss_loc) : nlohmann::json();
        line["loss_server"] = r.loss_server ? nlohmann::json(*r.loss_server) : nlohmann::json();
        if (r.evaluated) {
            nlohmann::json metrics;
            for (const auto& [name, value] : r.metrics) metrics[name] = value;
            line["metrics"] = std::move(metrics);
        } else {
            line["metrics"] = nlohmann::json();
        }
        if (!r.participants.empty()) line["participants"] = r.participants;
        if (!r.skipped_clients.empty()) line["skipped_clients"] = r.skipped_clients;
        os << line.dump() << "\n";
    }
}

// Writes <prefix>.jsonl, or <prefix>.csv plus a <prefix>.config sidecar so a
// CSV report can still reconstruct its full configuration.
inline std::vector<std::string> emit_report(const ReportDocument& doc, const std::string& prefix,
                                            ReportFormat format) {
    std::vector<std::string> written;
    auto open = [](const std::string& path) {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw ValueError("emit_report: cannot open " + path);
        return f;
    };
    if (format == ReportFormat::json_lines) {
        const std::string path = prefix + ".jsonl";
        auto f = open(path);
        write_report_jsonl(doc, f);
        written.push_back(path);
    } else {
        const std::string path = prefix + ".csv";
        auto f = open(path);
        write_report_csv(doc, f);
        written.push_back(path);
        const std::string side = prefix + ".config";
        auto s = open(side);
        s << serialize_config(doc.config);
        written.push_back(side);
    }
    return written;
}

}  // namespace partialfl
