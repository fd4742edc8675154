#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "partialfl/errors.hpp"
#include "partialfl/rng.hpp"
#include "partialfl/tensor.hpp"

namespace partialfl {

// Both modality views are deterministic functions of one class-conditional
// latent, so cross-modal alignment is learnable by construction.
struct SyntheticSpec {
    std::size_t num_classes = 4;
    std::size_t num_samples = 4000;
    std::size_t latent_dim = 8;
    std::size_t non_shareable_dim = 32;
    std::size_t shareable_dim = 32;
    double non_shareable_noise = 0.5;
    double shareable_noise = 0.5;
    double class_separation = 3.0;
    std::uint64_t seed = 1;

    bool operator==(const SyntheticSpec&) const = default;

    void validate() const {
        if (num_classes < 2) throw ValueError("SyntheticSpec: need at least 2 classes");
        if (num_samples < num_classes)
            throw ValueError("SyntheticSpec: need at least one sample per class");
        if (non_shareable_noise < 0.0 || shareable_noise < 0.0)
            throw ValueError("SyntheticSpec: noise scales must be nonnegative");
        if (latent_dim == 0 || non_shareable_dim == 0 || shareable_dim == 0)
            throw ValueError("SyntheticSpec: dims must be positive");
    }
};

struct SyntheticDataset {
    Tensor non_shareable;  // [N x non_shareable_dim]
    Tensor shareable;      // [N x shareable_dim]
    std::vector<int> labels;
    std::vector<std::int64_t> sample_ids;  // global ids, preserved through partitioning

    std::size_t size() const { return labels.size(); }
};

// One edge device's local data. `shareable` is empty once the modality has
// been masked away.
struct ClientShard {
    int client_id = -1;
    Tensor non_shareable;
    Tensor shareable;
    std::vector<int> labels;
    std::vector<std::int64_t> sample_ids;
    bool has_shareable = true;

    std::size_t size() const { return labels.size(); }
};

enum class PartitionMode { dirichlet, speaker_equal };

struct PartitionSpec {
    PartitionMode mode = PartitionMode::dirichlet;
    double alpha = 1.0;
    std::size_t clients = 200;  // K
    std::uint64_t seed = 1;

    bool operator==(const PartitionSpec&) const = default;

    void validate() const {
        if (clients < 1) throw ValueError("PartitionSpec: need at least one client");
        if (mode == PartitionMode::dirichlet && !(alpha > 0.0))
            throw ValueError("PartitionSpec: alpha must be positive");
    }
};

// Unit-direction class centers scaled by the configured separation.
inline std::vector<std::vector<double>> make_class_centers(const SyntheticSpec& spec, Rng& rng) {
    std::vector<std::vector<double>> centers(spec.num_classes,
                                             std::vector<double>(spec.latent_dim));
    for (auto& c : centers) {
        double norm_sq = 0.0;
        for (double& v : c) {
            v = rng.normal();
            norm_sq += v * v;
        }
        const double norm = std::sqrt(norm_sq);
        for (double& v : c) v = norm > 0.0 ? spec.class_separation * v / norm : 0.0;
    }
    return centers;
}

inline Tensor make_view_matrix(std::size_t latent_dim, std::size_t feature_dim, Rng& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
    Tensor m(latent_dim, feature_dim);
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

// Modality view of the given latents: tanh(u . M) + noise.
inline Tensor render_view(const std::vector<std::vector<double>>& latents, const Tensor& view,
                          double noise, Rng& rng) {
    Tensor out(latents.size(), view.cols());
    for (std::size_t i = 0; i < latents.size(); ++i)
        for (std::size_t c = 0; c < view.cols(); ++c) {
            double z = 0.0;
            for (std::size_t k = 0; k < view.rows(); ++k) z += latents[i][k] * view.at(k, c);
            out.at(i, c) = std::tanh(z) + noise * rng.normal();
        }
    return out;
}

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t n = spec.num_samples;

    // Balanced labels by construction; partitioning reshuffles anyway.
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i)
        labels[i] = static_cast<int>(i % spec.num_classes);

    // Fixed draw order: centers, view matrices, latents, per-modality noise.
    const auto centers = make_class_centers(spec, rng);
    const Tensor view_ns = make_view_matrix(spec.latent_dim, spec.non_shareable_dim, rng);
    const Tensor view_sh = make_view_matrix(spec.latent_dim, spec.shareable_dim, rng);

    std::vector<std::vector<double>> latents(n, std::vector<double>(spec.latent_dim));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < spec.latent_dim; ++k)
            latents[i][k] = centers[static_cast<std::size_t>(labels[i])][k] + rng.normal();

    SyntheticDataset ds;
    ds.labels = std::move(labels);
    ds.sample_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.sample_ids[i] = static_cast<std::int64_t>(i);
    ds.non_shareable = render_view(latents, view_ns, spec.non_shareable_noise, rng);
    ds.shareable = render_view(latents, view_sh, spec.shareable_noise, rng);
    return ds;
}

struct TrainTestSplit {
    SyntheticDataset train;
    SyntheticDataset test;
};

namespace detail {

inline SyntheticDataset take_rows(const SyntheticDataset& ds, const std::vector<std::size_t>& rows) {
    SyntheticDataset out;
    out.non_shareable = Tensor(rows.size(), ds.non_shareable.cols());
    out.shareable = Tensor(rows.size(), ds.shareable.cols());
    out.labels.reserve(rows.size());
    out.sample_ids.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t i = rows[r];
        for (std::size_t c = 0; c < ds.non_shareable.cols(); ++c)
            out.non_shareable.at(r, c) = ds.non_shareable.at(i, c);
        for (std::size_t c = 0; c < ds.shareable.cols(); ++c)
            out.shareable.at(r, c) = ds.shareable.at(i, c);
        out.labels.push_back(ds.labels[i]);
        out.sample_ids.push_back(ds.sample_ids[i]);
    }
    return out;
}

}  // namespace detail

// Class-stratified held-out split, fixed at generation time.
inline TrainTestSplit stratified_split(const SyntheticDataset& ds, double test_fraction,
                                       Rng& rng) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ValueError("stratified_split: test fraction must be in [0, 1)");
    int max_label = 0;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    std::vector<std::size_t> train_rows, test_rows;
    for (auto& rows : by_class) {
        rng.shuffle(rows);
        const std::size_t n_test =
            static_cast<std::size_t>(test_fraction * static_cast<double>(rows.size()) + 0.5);
        for (std::size_t r = 0; r < rows.size(); ++r)
            (r < n_test ? test_rows : train_rows).push_back(rows[r]);
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {detail::take_rows(ds, train_rows), detail::take_rows(ds, test_rows)};
}

// Per class c: p ~ Dir(alpha * 1_K), then that class's (shuffled) samples are
// split proportionally to p. Returns per-client row indices. Attempts that
// leave a client empty are redrawn, up to `max_retries`.
inline std::vector<std::vector<std::size_t>> dirichlet_assignment(const std::vector<int>& labels,
                                                                  std::size_t k_clients,
                                                                  double alpha, Rng& rng,
                                                                  int max_retries = 100) {
    if (!(alpha > 0.0)) throw ValueError("dirichlet_assignment: alpha must be positive");
    if (k_clients == 0) throw ValueError("dirichlet_assignment: need at least one client");
    if (k_clients > labels.size())
        throw ValueError("dirichlet_assignment: more clients (" + std::to_string(k_clients) +
                         ") than samples (" + std::to_string(labels.size()) + ")");

    int max_label = 0;
    for (int y : labels) max_label = std::max(max_label, y);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);

    for (int attempt = 0; attempt < max_retries; ++attempt) {
        std::vector<std::vector<std::size_t>> assignment(k_clients);
        for (auto& rows : by_class) {
            if (rows.empty()) continue;
            rng.shuffle(rows);
            const std::vector<double> p = rng.dirichlet(alpha, k_clients);
            // Proportional boundaries over the shuffled class rows.
            double cum = 0.0;
            std::size_t start = 0;
            for (std::size_t k = 0; k < k_clients; ++k) {
                cum += p[k];
                const std::size_t end =
                    (k + 1 == k_clients)
                        ? rows.size()
                        : std::min(rows.size(),
                                   static_cast<std::size_t>(cum * static_cast<double>(rows.size())));
                for (std::size_t r = start; r < end; ++r) assignment[k].push_back(rows[r]);
                start = std::max(start, end);
            }
        }
        bool any_empty = false;
        for (const auto& rows : assignment)
            if (rows.empty()) any_empty = true;
        if (!any_empty) {
            for (auto& rows : assignment) std::sort(rows.begin(), rows.end());
            return assignment;
        }
    }
    throw ValueError("dirichlet_assignment: could not produce nonempty shards after " +
                     std::to_string(max_retries) + " attempts (alpha=" + std::to_string(alpha) +
                     ", K=" + std::to_string(k_clients) + ")");
}

inline std::vector<ClientShard> make_shards(const SyntheticDataset& ds,
                                            const std::vector<std::vector<std::size_t>>& assignment) {
    std::vector<ClientShard> shards;
    shards.reserve(assignment.size());
    for (std::size_t k = 0; k < assignment.size(); ++k) {
        const auto& rows = assignment[k];
        ClientShard shard;
        shard.client_id = static_cast<int>(k);
        shard.non_shareable = Tensor(rows.size(), ds.non_shareable.cols());
        shard.shareable = Tensor(rows.size(), ds.shareable.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < ds.non_shareable.cols(); ++c)
                shard.non_shareable.at(r, c) = ds.non_shareable.at(rows[r], c);
            for (std::size_t c = 0; c < ds.shareable.cols(); ++c)
                shard.shareable.at(r, c) = ds.shareable.at(rows[r], c);
            shard.labels.push_back(ds.labels[rows[r]]);
            shard.sample_ids.push_back(ds.sample_ids[rows[r]]);
        }
        shards.push_back(std::move(shard));
    }
    return shards;
}

inline std::vector<ClientShard> dirichlet_partition(const SyntheticDataset& ds,
                                                    std::size_t k_clients, double alpha,
                                                    Rng& rng) {
    return make_shards(ds, dirichlet_assignment(ds.labels, k_clients, alpha, rng));
}

// Equal-size (+-1) random split, standing in for one-speaker-per-client data.
inline std::vector<ClientShard> speaker_equal_partition(const SyntheticDataset& ds,
                                                        std::size_t k_clients, Rng& rng) {
    if (k_clients == 0) throw ValueError("speaker_equal_partition: need at least one client");
    if (k_clients > ds.size())
        throw ValueError("speaker_equal_partition: more clients than samples");
    std::vector<std::size_t> order = rng.permutation(ds.size());
    const std::size_t base = ds.size() / k_clients;
    const std::size_t extra = ds.size() % k_clients;
    std::vector<std::vector<std::size_t>> assignment(k_clients);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < k_clients; ++k) {
        const std::size_t take = base + (k < extra ? 1 : 0);
        assignment[k].assign(order.begin() + pos, order.begin() + pos + take);
        std::sort(assignment[k].begin(), assignment[k].end());
        pos += take;
    }
    return make_shards(ds, assignment);
}

// Exactly round(q * K) shards keep the shareable modality; the rest lose the
// features and the flag.
inline void apply_missing_modality(std::vector<ClientShard>& shards, double q, Rng& rng) {
    if (!(q >= 0.0 && q <= 1.0))
        throw ValueError("apply_missing_modality: q must be in [0, 1]");
    const std::size_t keep =
        static_cast<std::size_t>(std::llround(q * static_cast<double>(shards.size())));
    std::vector<std::size_t> kept = rng.sample_without_replacement(shards.size(), keep);
    std::vector<bool> has(shards.size(), false);
    for (std::size_t k : kept) has[k] = true;
    for (std::size_t k = 0; k < shards.size(); ++k) {
        shards[k].has_shareable = has[k];
        if (!has[k]) shards[k].shareable = Tensor();
    }
}

namespace detail {

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

// Flat columnar text export: header `id,label,ns_0..,sh_0..`, one row per
// sample, '.' decimal separator, LF endings.
inline void write_dataset_csv(const SyntheticDataset& ds, std::ostream& os) {
    os << "id,label";
    for (std::size_t c = 0; c < ds.non_shareable.cols(); ++c) os << ",ns_" << c;
    for (std::size_t c = 0; c < ds.shareable.cols(); ++c) os << ",sh_" << c;
    os << "\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        os << ds.sample_ids[i] << "," << ds.labels[i];
        for (std::size_t c = 0; c < ds.non_shareable.cols(); ++c)
            os << "," << detail::format_double(ds.non_shareable.at(i, c));
        for (std::size_t c = 0; c < ds.shareable.cols(); ++c)
            os << "," << detail::format_double(ds.shareable.at(i, c));
        os << "\n";
    }
}

inline void write_dataset_csv(const SyntheticDataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValueError("write_dataset_csv: cannot open " + path);
    write_dataset_csv(ds, f);
}

inline SyntheticDataset read_dataset_csv(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw ValueError("read_dataset_csv: empty input");
    std::size_t ns_cols = 0, sh_cols = 0;
    {
        std::stringstream hs(header);
        std::string col;
        std::size_t index = 0;
        while (std::getline(hs, col, ',')) {
            if (index == 0 && col != "id")
                throw ValueError("read_dataset_csv: first column must be 'id'");
            if (index == 1 && col != "label")
                throw ValueError("read_dataset_csv: second column must be 'label'");
            if (col.rfind("ns_", 0) == 0) ++ns_cols;
            if (col.rfind("sh_", 0) == 0) ++sh_cols;
            ++index;
        }
    }
    std::vector<std::vector<double>> ns_rows, sh_rows;
    SyntheticDataset ds;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        ds.sample_ids.push_back(std::stoll(cell));
        std::getline(ls, cell, ',');
        ds.labels.push_back(std::stoi(cell));
        std::vector<double> ns(ns_cols), sh(sh_cols);
        for (std::size_t c = 0; c < ns_cols; ++c) {
            std::getline(ls, cell, ',');
            ns[c] = std::stod(cell);
        }
        for (std::size_t c = 0; c < sh_cols; ++c) {
            std::getline(ls, cell, ',');
            sh[c] = std::stod(cell);
        }
        ns_rows.push_back(std::move(ns));
        sh_rows.push_back(std::move(sh));
    }
    ds.non_shareable = Tensor(ns_rows.size(), ns_cols);
    ds.shareable = Tensor(sh_rows.size(), sh_cols);
    for (std::size_t i = 0; i < ns_rows.size(); ++i) {
        for (std::size_t c = 0; c < ns_cols; ++c) ds.non_shareable.at(i, c) = ns_rows[i][c];
        for (std::size_t c = 0; c < sh_cols; ++c) ds.shareable.at(i, c) = sh_rows[i][c];
    }
    return ds;
}

inline SyntheticDataset read_dataset_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValueError("read_dataset_csv: cannot open " + path);
    return read_dataset_csv(f);
}

}  // namespace partialfl
