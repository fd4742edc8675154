// Experiment runner: single runs and grid sweeps over the simulator,
// emitting CSV or JSON-lines reports.

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "partialfl/partialfl.hpp"

namespace {

using namespace partialfl;

struct GridAxis {
    std::string key;
    std::vector<std::string> values;
};

GridAxis parse_grid_flag(const std::string& flag) {
    const auto eq = flag.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--grid expects key=v1,v2,..., got '" + flag + "'");
    GridAxis axis;
    axis.key = flag.substr(0, eq);
    std::stringstream ss(flag.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) axis.values.push_back(item);
    if (axis.values.empty()) throw ConfigError("--grid axis '" + axis.key + "' has no values");
    return axis;
}

std::string point_suffix(const std::vector<GridAxis>& axes, const std::vector<std::size_t>& idx) {
    std::string suffix;
    for (std::size_t a = 0; a < axes.size(); ++a) {
        const std::string bare = axes[a].key.substr(axes[a].key.find('.') + 1);
        suffix += "_" + bare + "-" + axes[a].values[idx[a]];
    }
    return suffix;
}

void print_final_metrics(const ReportDocument& doc) {
    for (const auto& [name, value] : doc.final_metrics)
        std::cout << " " << name << "=" << value;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PartialFL synthetic federated-learning simulator"};

    std::string config_path;
    std::string out_prefix;
    std::string format_str;
    std::vector<std::string> grid_flags;
    std::uint64_t seed = 0;
    bool seed_given = false;
    unsigned threads = 1;
    std::string export_dataset_path;
    std::string import_dataset_path;

    app.add_option("--config", config_path, "experiment config file (key = value with sections)")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed, overrides the config")
        ->each([&](const std::string&) { seed_given = true; });
    app.add_option("--grid", grid_flags,
                   "sweep axis key=v1,v2,... (repeatable; cartesian product)");
    app.add_option("--out", out_prefix, "output path prefix, overrides the config");
    app.add_option("--format", format_str, "report format: json_lines or csv")
        ->check(CLI::IsMember({"json_lines", "csv"}));
    app.add_option("--threads", threads, "worker threads for client training");
    app.add_option("--export-dataset", export_dataset_path,
                   "also write the generated dataset as columnar CSV");
    app.add_option("--import-dataset", import_dataset_path,
                   "load the dataset from columnar CSV instead of generating")
        ->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig base =
            config_path.empty() ? ExperimentConfig{} : parse_config_file(config_path);
        base.finalize();
        if (seed_given) base.federation.seed = seed;
        if (!out_prefix.empty()) base.output_path = out_prefix;
        if (!format_str.empty())
            base.output_format =
                format_str == "csv" ? ReportFormat::csv : ReportFormat::json_lines;
        base.validate();

        // Dataset dims come from the file when importing.
        std::optional<SyntheticDataset> imported;
        if (!import_dataset_path.empty()) {
            imported = read_dataset_csv(import_dataset_path);
            base.data.num_samples = imported->size();
            base.data.non_shareable_dim = imported->non_shareable.cols();
            base.data.shareable_dim = imported->shareable.cols();
            int max_label = 0;
            for (int y : imported->labels) max_label = std::max(max_label, y);
            base.data.num_classes = static_cast<std::size_t>(max_label) + 1;
            base.finalize();
            base.validate();
        }
        const SyntheticDataset* dataset = imported ? &*imported : nullptr;

        if (!export_dataset_path.empty()) {
            if (imported) {
                write_dataset_csv(*imported, export_dataset_path);
            } else {
                SyntheticSpec spec = base.data;
                spec.seed = derive_seed(base.federation.seed, "data");
                write_dataset_csv(generate_synthetic(spec), export_dataset_path);
            }
            std::cout << "dataset -> " << export_dataset_path << "\n";
        }

        std::vector<GridAxis> axes;
        for (const auto& flag : grid_flags) axes.push_back(parse_grid_flag(flag));

        if (axes.empty()) {
            ReportDocument doc = run(base, {}, threads, dataset);
            auto files = emit_report(doc, base.output_path, base.output_format);
            std::cout << "completed " << doc.rounds.size() << " rounds in "
                      << doc.wall_clock_seconds << "s;";
            print_final_metrics(doc);
            for (const auto& f : files) std::cout << " -> " << f;
            std::cout << "\n";
            return 0;
        }

        // Cartesian sweep. Reports per point plus a summary marking the best
        // point by the first configured metric.
        std::vector<std::size_t> idx(axes.size(), 0);
        struct PointResult {
            std::string suffix;
            std::vector<double> finals;
        };
        std::vector<PointResult> points;
        bool done = false;
        while (!done) {
            ExperimentConfig cfg = base;
            for (std::size_t a = 0; a < axes.size(); ++a)
                apply_override(cfg, axes[a].key, axes[a].values[idx[a]]);
            cfg.validate();
            const std::string suffix = point_suffix(axes, idx);
            ReportDocument doc = run(cfg, {}, threads, dataset);
            emit_report(doc, base.output_path + suffix, base.output_format);

            PointResult pr;
            pr.suffix = suffix;
            for (const auto& [name, value] : doc.final_metrics) pr.finals.push_back(value);
            points.push_back(std::move(pr));
            std::cout << "grid" << suffix << ": " << doc.rounds.size() << " rounds in "
                      << doc.wall_clock_seconds << "s;";
            print_final_metrics(doc);
            std::cout << "\n";

            for (std::size_t a = axes.size(); a-- > 0;) {
                if (++idx[a] < axes[a].values.size()) break;
                idx[a] = 0;
                if (a == 0) done = true;
            }
        }

        std::size_t best = 0;
        for (std::size_t p = 1; p < points.size(); ++p)
            if (points[p].finals[0] > points[best].finals[0]) best = p;

        const std::string summary_path = base.output_path + "_grid_summary.csv";
        std::ofstream summary(summary_path, std::ios::binary);
        summary << "point";
        for (const auto& name : base.eval.metric_names) summary << "," << name;
        summary << ",best\n";
        for (std::size_t p = 0; p < points.size(); ++p) {
            summary << points[p].suffix;
            for (double v : points[p].finals) {
                summary.precision(17);
                summary << "," << v;
            }
            summary << "," << (p == best ? 1 : 0) << "\n";
        }
        std::cout << "best" << points[best].suffix << " by " << base.eval.metric_names[0]
                  << " -> " << summary_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
