#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "partialfl/data.hpp"
#include "partialfl/errors.hpp"
#include "partialfl/losses.hpp"
#include "partialfl/metrics.hpp"
#include "partialfl/models.hpp"
#include "partialfl/nn.hpp"
#include "partialfl/rng.hpp"

namespace partialfl {

enum class Algorithm { partialfl, fedavg, fedprox, centralized };
enum class Aggregation { uniform, size_weighted };

inline const char* to_string(Algorithm a) {
    switch (a) {
        case Algorithm::partialfl: return "partialfl";
        case Algorithm::fedavg: return "fedavg";
        case Algorithm::fedprox: return "fedprox";
        case Algorithm::centralized: return "centralized";
    }
    return "?";
}

inline const char* to_string(Aggregation a) {
    return a == Aggregation::uniform ? "uniform" : "size_weighted";
}

struct FederationConfig {
    std::size_t clients = 200;   // K
    double sample_rate = 0.1;    // fraction of clients per round
    std::size_t rounds = 150;    // T
    std::size_t local_epochs = 1;
    std::size_t batch_size = 16;
    double learning_rate = 1e-4;
    double temperature = 0.1;  // tau
    double beta = 0.01;
    double proximal_mu = 0.01;        // mu, used by fedprox
    bool prox_in_partialfl = false;   // also apply the proximal term inside partialfl
    Aggregation aggregation = Aggregation::uniform;
    Algorithm algorithm = Algorithm::partialfl;
    ModalityMode global_modality_mode = ModalityMode::uni_modal;
    bool include_inter_modal_negatives = false;
    bool normalize_embeddings = false;
    std::uint64_t seed = 1;

    bool operator==(const FederationConfig&) const = default;

    bool contrastive_active() const {
        return algorithm == Algorithm::partialfl && beta != 0.0;
    }

    void validate() const {
        if (clients < 1) throw ValueError("FederationConfig: need at least one client");
        if (!(sample_rate > 0.0 && sample_rate <= 1.0))
            throw ValueError("FederationConfig: sample_rate must be in (0, 1]");
        if (!(temperature > 0.0))
            throw ValueError("FederationConfig: temperature must be positive");
        if (beta < 0.0) throw ValueError("FederationConfig: beta must be nonnegative");
        if (proximal_mu < 0.0) throw ValueError("FederationConfig: mu must be nonnegative");
        if (learning_rate < 0.0)
            throw ValueError("FederationConfig: learning rate must be nonnegative");
        if (local_epochs < 1) throw ValueError("FederationConfig: need at least one local epoch");
        if (contrastive_active() && batch_size < 2)
            throw ValueError("FederationConfig: batch_size must be >= 2 while a contrastive "
                             "loss is active");
        if (batch_size < 1) throw ValueError("FederationConfig: batch_size must be positive");
    }
};

// ---------------------------------------------------------------------------
// Messages crossing the edge -> server boundary. These are the only payloads
// a client ever sends; to_json() is their wire form and what the privacy
// tests inspect. Labels, non-shareable features and local classifier
// parameters have no field here by construction.
// ---------------------------------------------------------------------------

struct SharedRepresentationUpload {
    int client_id = -1;
    std::vector<std::int64_t> sample_ids;
    Tensor representations;  // frozen-extractor output, never raw features

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t i = 0; i < representations.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < representations.cols(); ++c)
                row.push_back(representations.at(i, c));
            rows.push_back(std::move(row));
        }
        return {{"type", "shared_representation_upload"},
                {"client_id", client_id},
                {"sample_ids", sample_ids},
                {"representations", std::move(rows)}};
    }
};

struct ClientUpdate {
    int client_id = -1;
    ModelParams global_params;             // theta_{g,k}
    EmbeddingBatch local_text_embeddings;  // z'_T; empty when no shareable modality
    std::size_t num_samples = 0;           // n_k, for size-weighted aggregation

    nlohmann::json to_json() const {
        nlohmann::json emb_rows = nlohmann::json::array();
        if (local_text_embeddings.vectors.rank() == 2) {
            for (std::size_t i = 0; i < local_text_embeddings.vectors.rows(); ++i) {
                nlohmann::json row = nlohmann::json::array();
                for (std::size_t c = 0; c < local_text_embeddings.vectors.cols(); ++c)
                    row.push_back(local_text_embeddings.vectors.at(i, c));
                emb_rows.push_back(std::move(row));
            }
        }
        return {{"type", "client_update"},
                {"client_id", client_id},
                {"num_samples", num_samples},
                {"global_params", global_params.values},
                {"local_text_embeddings",
                 {{"sample_ids", local_text_embeddings.sample_ids},
                  {"vectors", std::move(emb_rows)}}}};
    }
};

struct RoundReport {
    std::size_t round = 0;
    std::vector<int> participants;
    std::vector<int> skipped_clients;  // empty shards, warned and excluded
    std::optional<double> loss_glob;
    std::optional<double> loss_loc;
    std::optional<double> loss_server;
    bool evaluated = false;
    std::vector<std::pair<std::string, double>> metrics;  // fixed order from EvalSpec
};

struct EvalSpec {
    std::vector<std::string> metric_names = {"uar", "top1"};
    std::size_t eval_interval = 1;

    bool operator==(const EvalSpec&) const = default;
};

struct ExperimentResult {
    std::vector<RoundReport> rounds;
    std::vector<std::pair<std::string, double>> final_metrics;
};

// Everything the protocol engine consumes; produced by the data module.
struct ExperimentData {
    std::vector<ClientShard> shards;
    SyntheticDataset test;
    FrozenExtractor extractor;
};

// Uniform sampling without replacement; floor(rate*K) participants, at least
// one, returned ascending.
inline std::vector<int> sample_clients(std::size_t k_clients, double sample_rate, Rng& rng) {
    const double raw = sample_rate * static_cast<double>(k_clients);
    // Guard against 0.1 * 200 style representation noise before flooring.
    std::size_t count = static_cast<std::size_t>(raw + 1e-9);
    count = std::max<std::size_t>(1, std::min(count, k_clients));
    std::vector<std::size_t> picked = rng.sample_without_replacement(k_clients, count);
    std::vector<int> ids(picked.begin(), picked.end());
    return ids;
}

// Mean of parameter vectors, computed as an offset from the first entry so
// that identical inputs (and a single input) aggregate to themselves exactly.
inline ModelParams aggregate(const std::vector<ModelParams>& params,
                             const std::vector<std::size_t>& sizes, Aggregation mode) {
    if (params.empty()) throw ProtocolError("aggregate: empty parameter list");
    for (const auto& p : params) require_same_size(p, params.front(), "aggregate");
    if (mode == Aggregation::size_weighted && sizes.size() != params.size())
        throw ProtocolError("aggregate: sizes list does not match parameter list");

    ModelParams out = params.front();
    const std::size_t n = out.values.size();
    std::vector<double> weights(params.size());
    if (mode == Aggregation::uniform) {
        std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(params.size()));
    } else {
        double total = 0.0;
        for (std::size_t s : sizes) total += static_cast<double>(s);
        if (total <= 0.0) throw ProtocolError("aggregate: size-weighted mode with zero total");
        for (std::size_t k = 0; k < sizes.size(); ++k)
            weights[k] = static_cast<double>(sizes[k]) / total;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double delta = 0.0;
        for (std::size_t k = 0; k < params.size(); ++k)
            delta += weights[k] * (params[k].values[i] - params.front().values[i]);
        out.values[i] += delta;
    }
    return out;
}

// Observation points for tests: message capture, z_T freshness, per-round
// parameter snapshots.
struct Hooks {
    std::function<void(const SharedRepresentationUpload&)> on_representation_upload;
    std::function<void(const ClientUpdate&)> on_client_update;
    std::function<void(std::size_t round, int client_id, std::size_t z_version)> on_distribute;
    std::function<void(std::size_t round, const ModelParams&)> on_round_end;
};

namespace detail {

// Mini-batch index chunks over a shuffled permutation. Trailing chunks of a
// single sample are dropped in every algorithm so the batch structure never
// depends on whether a contrastive term is active.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        if (end - start < 2) continue;
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

inline std::size_t batch_count(std::size_t n, std::size_t batch_size) {
    std::size_t count = 0;
    for (std::size_t start = 0; start < n; start += batch_size)
        if (std::min(n, start + batch_size) - start >= 2) ++count;
    return count;
}

inline Tensor take_tensor_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
    Tensor out(rows.size(), t.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) out.at(r, c) = t.at(rows[r], c);
    return out;
}

struct LossAccumulator {
    double sum = 0.0;
    std::size_t steps = 0;
    void add(double loss) {
        sum += loss;
        ++steps;
    }
    std::optional<double> mean() const {
        if (steps == 0) return std::nullopt;
        return sum / static_cast<double>(steps);
    }
};

}  // namespace detail

// Server-side store of uploaded shareable representations and the current
// z_T embeddings per client. `version` counts refreshes: version t means
// "refreshed at the end of round t-1".
class ServerEmbeddingStore {
public:
    struct Entry {
        std::vector<std::int64_t> sample_ids;
        Tensor representations;
        EmbeddingBatch embeddings;
    };

    bool has(int client_id) const { return entries_.count(client_id) > 0; }
    std::size_t size() const { return entries_.size(); }
    std::size_t version() const { return version_; }

    void put(int client_id, std::vector<std::int64_t> ids, Tensor reps) {
        Entry e;
        e.sample_ids = std::move(ids);
        e.representations = std::move(reps);
        entries_[client_id] = std::move(e);
    }

    const Entry& entry(int client_id) const {
        auto it = entries_.find(client_id);
        if (it == entries_.end())
            throw PairingError("ServerEmbeddingStore: no representations for client " +
                               std::to_string(client_id));
        return it->second;
    }

    // Re-encode z_T for every stored client (Algorithm step: refresh for all
    // K, participants or not). Version v means "the embeddings round v
    // distributes": 0 after the initial encode, t+1 after round t's training.
    void refresh(const ServerModel& server, std::size_t version) {
        for (auto& [id, e] : entries_)
            e.embeddings = server.encode(e.representations, e.sample_ids);
        version_ = version;
    }

    // Rows of a client's z_T for the requested sample ids, in that order.
    EmbeddingBatch slice(int client_id, const std::vector<std::int64_t>& ids) const {
        const Entry& e = entry(client_id);
        std::unordered_map<std::int64_t, std::size_t> index;
        index.reserve(e.sample_ids.size());
        for (std::size_t i = 0; i < e.sample_ids.size(); ++i) index[e.sample_ids[i]] = i;
        EmbeddingBatch out;
        out.sample_ids = ids;
        out.vectors = Tensor(ids.size(), e.embeddings.vectors.cols());
        for (std::size_t r = 0; r < ids.size(); ++r) {
            auto it = index.find(ids[r]);
            if (it == index.end())
                throw PairingError("ServerEmbeddingStore: sample id " + std::to_string(ids[r]) +
                                   " not found for client " + std::to_string(client_id));
            for (std::size_t c = 0; c < out.vectors.cols(); ++c)
                out.vectors.at(r, c) = e.embeddings.vectors.at(it->second, c);
        }
        return out;
    }

    std::vector<int> client_ids() const {
        std::vector<int> ids;
        ids.reserve(entries_.size());
        for (const auto& [id, e] : entries_) ids.push_back(id);
        return ids;
    }

private:
    std::map<int, Entry> entries_;  // ordered: refresh/iteration order is fixed
    std::size_t version_ = 0;
};

// The protocol engine. One instance simulates one federated run; centralized
// training is handled by run_experiment directly.
class Simulation {
public:
    Simulation(FederationConfig fed, ModelConfig model_cfg, const ExperimentData& data,
               Hooks hooks = {}, unsigned threads = 1)
        : fed_(fed), model_cfg_(model_cfg), data_(&data), hooks_(std::move(hooks)),
          threads_(std::max(1u, threads)) {
        fed_.validate();
        if (data.shards.size() != fed_.clients)
            throw ProtocolError("Simulation: config expects " + std::to_string(fed_.clients) +
                                " clients, got " + std::to_string(data.shards.size()) +
                                " shards");
        initialize();
    }

    std::size_t round() const { return round_; }
    ModelParams global_params() const { return global_model_.params(); }
    ModelParams server_params() const { return server_model_.params(); }
    const ServerEmbeddingStore& store() const { return store_; }

    RoundReport run_round() {
        RoundReport report;
        report.round = round_;

        Rng sample_rng = derive_rng(fed_.seed, "sample", round_);
        report.participants = sample_clients(fed_.clients, fed_.sample_rate, sample_rng);

        // Distribute theta_g and the client's current z_T slice.
        const ModelParams round_start = global_model_.params();
        std::vector<std::optional<EmbeddingBatch>> z_slices(report.participants.size());
        for (std::size_t p = 0; p < report.participants.size(); ++p) {
            const int k = report.participants[p];
            if (fed_.algorithm == Algorithm::partialfl && store_.has(k))
                z_slices[p] = store_.slice(k, data_->shards[static_cast<std::size_t>(k)].sample_ids);
            if (hooks_.on_distribute)
                hooks_.on_distribute(round_, k, store_.version());
        }

        // Client training, parallelizable; results land in fixed slots so the
        // reduction order never depends on the thread count.
        std::vector<ClientTrainResult> results(report.participants.size());
        auto work = [&](std::size_t p) {
            results[p] = client_train(report.participants[p], round_start, z_slices[p]);
        };
        if (threads_ == 1 || report.participants.size() <= 1) {
            for (std::size_t p = 0; p < report.participants.size(); ++p) work(p);
        } else {
            std::vector<std::thread> pool;
            const unsigned n_threads =
                std::min<unsigned>(threads_, static_cast<unsigned>(report.participants.size()));
            for (unsigned tid = 0; tid < n_threads; ++tid)
                pool.emplace_back([&, tid] {
                    for (std::size_t p = tid; p < report.participants.size(); p += n_threads)
                        work(p);
                });
            for (auto& t : pool) t.join();
        }

        detail::LossAccumulator glob_acc, loc_acc, server_acc;
        std::vector<ModelParams> updates;
        std::vector<std::size_t> update_sizes;
        std::vector<const ClientUpdate*> round_updates;
        for (auto& r : results) {
            if (r.skipped) {
                report.skipped_clients.push_back(r.update.client_id);
                continue;
            }
            if (hooks_.on_client_update) hooks_.on_client_update(r.update);
            glob_acc.sum += r.glob_loss_sum;
            glob_acc.steps += r.glob_steps;
            loc_acc.sum += r.loc_loss_sum;
            loc_acc.steps += r.loc_steps;
            updates.push_back(std::move(r.update.global_params));
            update_sizes.push_back(r.update.num_samples);
            round_updates.push_back(&r.update);
        }

        if (fed_.algorithm == Algorithm::partialfl)
            server_train(round_updates, server_acc);

        if (!updates.empty())
            global_model_.set_params(aggregate(updates, update_sizes, fed_.aggregation));

        report.loss_glob = glob_acc.mean();
        report.loss_loc = loc_acc.mean();
        report.loss_server = server_acc.mean();

        if (hooks_.on_round_end) hooks_.on_round_end(round_, global_model_.params());
        ++round_;
        return report;
    }

    std::vector<std::pair<std::string, double>> evaluate(const EvalSpec& eval) const {
        return evaluate_model(global_model_, eval);
    }

    ExperimentResult run(const EvalSpec& eval) {
        ExperimentResult result;
        for (std::size_t t = 0; t < fed_.rounds; ++t) {
            RoundReport report = run_round();
            const bool due = ((t + 1) % std::max<std::size_t>(1, eval.eval_interval) == 0) ||
                             (t + 1 == fed_.rounds);
            if (due) {
                report.metrics = evaluate(eval);
                report.evaluated = true;
            }
            result.rounds.push_back(std::move(report));
        }
        result.final_metrics = evaluate(eval);
        return result;
    }

    std::vector<std::pair<std::string, double>> evaluate_model(const GlobalModel& model,
                                                               const EvalSpec& eval) const {
        const SyntheticDataset& test = data_->test;
        std::optional<Tensor> reps;
        if (model.mode() == ModalityMode::multi_modal)
            reps = data_->extractor.apply(test.shareable);
        GlobalModel::Forward f =
            model.forward(test.non_shareable, reps, test.sample_ids, /*impute_missing=*/false);
        return compute_metrics(f.logits, test.labels, eval);
    }

    static std::vector<std::pair<std::string, double>> compute_metrics(
        const Tensor& logits, const std::vector<int>& labels, const EvalSpec& eval) {
        std::vector<std::pair<std::string, double>> out;
        std::vector<int> preds = argmax_predictions(logits);
        for (const std::string& name : eval.metric_names) {
            if (name == "uar") {
                out.emplace_back(name, uar(preds, labels));
            } else if (name.rfind("top", 0) == 0) {
                const std::size_t k = static_cast<std::size_t>(std::stoul(name.substr(3)));
                out.emplace_back(name, top_k_accuracy(logits, labels, k));
            } else {
                throw ValueError("unknown metric '" + name + "'");
            }
        }
        return out;
    }

private:
    struct ClientTrainResult {
        ClientUpdate update;
        double glob_loss_sum = 0.0;
        std::size_t glob_steps = 0;
        double loc_loss_sum = 0.0;
        std::size_t loc_steps = 0;
        bool skipped = false;
    };

    struct ClientState {
        Tensor text_reps;  // frozen-extractor output over the shard
        std::optional<LocalModel> local_model;
    };

    void initialize() {
        Rng init_global = derive_rng(fed_.seed, "init", 1);
        global_model_ = GlobalModel(model_cfg_, fed_.global_modality_mode, init_global);

        clients_.resize(fed_.clients);
        for (std::size_t k = 0; k < fed_.clients; ++k) {
            const ClientShard& shard = data_->shards[k];
            if (shard.has_shareable && shard.size() > 0)
                clients_[k].text_reps = data_->extractor.apply(shard.shareable);
        }

        if (fed_.algorithm == Algorithm::partialfl) {
            Rng init_server = derive_rng(fed_.seed, "init", 2);
            server_model_ = ServerModel(model_cfg_, init_server);
            server_adam_.emplace(server_model_.param_count(), fed_.learning_rate);

            for (std::size_t k = 0; k < fed_.clients; ++k) {
                const ClientShard& shard = data_->shards[k];
                if (!shard.has_shareable || shard.size() == 0) continue;
                Rng init_local = derive_rng(fed_.seed, "init", 3, k);
                clients_[k].local_model.emplace(model_cfg_, init_local);

                // Upload X_T (frozen representations, never raw features).
                SharedRepresentationUpload upload;
                upload.client_id = shard.client_id;
                upload.sample_ids = shard.sample_ids;
                upload.representations = clients_[k].text_reps;
                if (hooks_.on_representation_upload) hooks_.on_representation_upload(upload);
                store_.put(shard.client_id, upload.sample_ids, upload.representations);
            }
            store_.refresh(server_model_, 0);  // initial z_T
        }
    }

    bool prox_active() const {
        if (fed_.proximal_mu == 0.0) return false;
        return fed_.algorithm == Algorithm::fedprox ||
               (fed_.algorithm == Algorithm::partialfl && fed_.prox_in_partialfl);
    }

    ClientTrainResult client_train(int client_id, const ModelParams& round_start,
                                   const std::optional<EmbeddingBatch>& z_slice) {
        const ClientShard& shard = data_->shards[static_cast<std::size_t>(client_id)];
        ClientTrainResult result;
        result.update.client_id = client_id;
        result.update.num_samples = shard.size();
        if (shard.size() == 0) {
            result.skipped = true;
            return result;
        }

        GlobalModel model = global_model_;  // theta_g^t copy; server copy is immutable
        model.set_params(round_start);
        AdamState adam_g(model.param_count(), fed_.learning_rate);
        ClientState& state = clients_[static_cast<std::size_t>(client_id)];
        std::optional<AdamState> adam_l;
        if (state.local_model)
            adam_l.emplace(state.local_model->param_count(), fed_.learning_rate);

        ContrastiveConfig ccfg;
        ccfg.temperature = fed_.temperature;
        ccfg.beta = fed_.beta;
        ccfg.include_inter_modal_negatives = fed_.include_inter_modal_negatives;
        ccfg.normalize_embeddings = fed_.normalize_embeddings;

        // z_T rows keyed by sample id for positive-pair lookup.
        std::unordered_map<std::int64_t, std::size_t> z_index;
        if (z_slice) {
            z_index.reserve(z_slice->size());
            for (std::size_t i = 0; i < z_slice->size(); ++i)
                z_index[z_slice->sample_ids[i]] = i;
        }
        const bool use_contrastive = fed_.contrastive_active() && z_slice.has_value();

        Rng batch_rng = derive_rng(fed_.seed, "batch", round_, static_cast<std::uint64_t>(client_id));
        const bool multi = model.mode() == ModalityMode::multi_modal;

        for (std::size_t epoch = 0; epoch < fed_.local_epochs; ++epoch) {
            const auto batches = detail::make_batches(shard.size(), fed_.batch_size, batch_rng);
            for (const auto& rows : batches) {
                Tensor ns = detail::take_tensor_rows(shard.non_shareable, rows);
                std::vector<int> labels(rows.size());
                std::vector<std::int64_t> ids(rows.size());
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    labels[r] = shard.labels[rows[r]];
                    ids[r] = shard.sample_ids[rows[r]];
                }
                std::optional<Tensor> sh;
                if (multi && shard.has_shareable)
                    sh = detail::take_tensor_rows(state.text_reps, rows);

                EmbeddingBatch z_batch;
                if (use_contrastive) {
                    z_batch.sample_ids = ids;
                    z_batch.vectors = Tensor(ids.size(), z_slice->vectors.cols());
                    for (std::size_t r = 0; r < ids.size(); ++r) {
                        auto it = z_index.find(ids[r]);
                        if (it == z_index.end())
                            throw PairingError("client_train: no z_T for sample id " +
                                               std::to_string(ids[r]));
                        for (std::size_t c = 0; c < z_batch.vectors.cols(); ++c)
                            z_batch.vectors.at(r, c) = z_slice->vectors.at(it->second, c);
                    }
                }

                // Global-model step, holding the local model fixed.
                {
                    GlobalModel::Forward f =
                        model.forward_cached(ns, sh, ids, /*impute_missing=*/multi);
                    double loss;
                    ModelParams grads;
                    if (use_contrastive) {
                        ObjectiveResult obj =
                            global_objective(f.logits, labels, f.emb, z_batch, ccfg);
                        grads = model.backward(obj.logit_grad, obj.model_emb_grad);
                        loss = obj.loss;
                    } else {
                        CrossEntropyResult ce = softmax_cross_entropy(f.logits, labels);
                        Tensor zero_emb(f.emb.vectors.rows(), f.emb.vectors.cols());
                        grads = model.backward(ce.logit_grad, zero_emb);
                        loss = ce.loss;
                    }
                    ModelParams params = model.params();
                    if (prox_active()) {
                        ProximalResult prox = fedprox_term(params, round_start, fed_.proximal_mu);
                        loss += prox.loss;
                        for (std::size_t i = 0; i < grads.values.size(); ++i)
                            grads.values[i] += prox.grad.values[i];
                    }
                    adam_step(adam_g, params, grads);
                    model.set_params(params);
                    result.glob_loss_sum += loss;
                    ++result.glob_steps;
                }

                // Local-model step, holding the global model fixed.
                if (state.local_model) {
                    Tensor text_batch = detail::take_tensor_rows(state.text_reps, rows);
                    LocalModel::Forward f = state.local_model->forward_cached(text_batch, ids);
                    double loss;
                    ModelParams grads;
                    if (use_contrastive) {
                        ObjectiveResult obj =
                            local_objective(f.logits, labels, f.emb, z_batch, ccfg);
                        grads = state.local_model->backward(obj.logit_grad, obj.model_emb_grad);
                        loss = obj.loss;
                    } else {
                        CrossEntropyResult ce = softmax_cross_entropy(f.logits, labels);
                        Tensor zero_emb(f.emb.vectors.rows(), f.emb.vectors.cols());
                        grads = state.local_model->backward(ce.logit_grad, zero_emb);
                        loss = ce.loss;
                    }
                    ModelParams params = state.local_model->params();
                    adam_step(*adam_l, params, grads);
                    state.local_model->set_params(params);
                    result.loc_loss_sum += loss;
                    ++result.loc_steps;
                }
            }
        }

        result.update.global_params = model.params();
        if (state.local_model)
            result.update.local_text_embeddings =
                state.local_model->encode(state.text_reps, shard.sample_ids);
        return result;
    }

    // Step 4.1: align z_T toward the uploaded z'_T, one participant at a
    // time in ascending client id, then refresh z_T for every stored client.
    void server_train(const std::vector<const ClientUpdate*>& updates,
                      detail::LossAccumulator& acc) {
        for (const ClientUpdate* update : updates) {
            if (update->local_text_embeddings.size() == 0) continue;
            const auto& entry = store_.entry(update->client_id);

            std::unordered_map<std::int64_t, std::size_t> zprime_index;
            for (std::size_t i = 0; i < update->local_text_embeddings.size(); ++i)
                zprime_index[update->local_text_embeddings.sample_ids[i]] = i;

            Rng batch_rng = derive_rng(fed_.seed, "server-batch", round_,
                                       static_cast<std::uint64_t>(update->client_id));
            const auto batches =
                detail::make_batches(entry.sample_ids.size(), fed_.batch_size, batch_rng);
            for (const auto& rows : batches) {
                Tensor reps = detail::take_tensor_rows(entry.representations, rows);
                std::vector<std::int64_t> ids(rows.size());
                for (std::size_t r = 0; r < rows.size(); ++r)
                    ids[r] = entry.sample_ids[rows[r]];

                EmbeddingBatch zprime;
                zprime.sample_ids = ids;
                zprime.vectors =
                    Tensor(ids.size(), update->local_text_embeddings.vectors.cols());
                for (std::size_t r = 0; r < ids.size(); ++r) {
                    auto it = zprime_index.find(ids[r]);
                    if (it == zprime_index.end())
                        throw PairingError("server_train: no z'_T for sample id " +
                                           std::to_string(ids[r]));
                    for (std::size_t c = 0; c < zprime.vectors.cols(); ++c)
                        zprime.vectors.at(r, c) =
                            update->local_text_embeddings.vectors.at(it->second, c);
                }

                EmbeddingBatch z_batch = server_model_.encode_cached(reps, ids);
                AlignmentResult align = embedding_alignment(
                    z_batch, zprime, fed_.temperature, AlignDirection::local_to_server,
                    fed_.include_inter_modal_negatives, fed_.normalize_embeddings);
                ModelParams grads = server_model_.backward(align.server_grad);
                ModelParams params = server_model_.params();
                adam_step(*server_adam_, params, grads);
                server_model_.set_params(params);
                acc.add(align.loss);
            }
        }
        // Refresh even when nothing trained; distribution next round must see
        // embeddings stamped for this round.
        store_.refresh(server_model_, round_ + 1);
    }

    FederationConfig fed_;
    ModelConfig model_cfg_;
    const ExperimentData* data_;
    Hooks hooks_;
    unsigned threads_;

    GlobalModel global_model_;
    ServerModel server_model_;
    std::optional<AdamState> server_adam_;
    ServerEmbeddingStore store_;
    std::vector<ClientState> clients_;
    std::size_t round_ = 0;
};

// Centralized baseline: one model over the pooled shards, trained for the
// same number of optimizer steps the federated schedule would take, reported
// in T equal chunks.
inline ExperimentResult run_centralized(const FederationConfig& fed, const ModelConfig& model_cfg,
                                        const ExperimentData& data, const EvalSpec& eval) {
    fed.validate();

    // Pool the shards; missing shareable rows stay zero (imputation).
    std::size_t total = 0;
    for (const auto& s : data.shards) total += s.size();
    Tensor ns(total, data.shards.front().non_shareable.cols());
    Tensor sh_reps(total, 0);
    std::vector<int> labels(total);
    std::vector<std::int64_t> ids(total);
    const bool multi = fed.global_modality_mode == ModalityMode::multi_modal;
    if (multi) sh_reps = Tensor(total, data.extractor.rep_dim());
    std::size_t row = 0;
    for (const auto& s : data.shards) {
        Tensor reps;
        if (multi && s.has_shareable && s.size() > 0) reps = data.extractor.apply(s.shareable);
        for (std::size_t i = 0; i < s.size(); ++i, ++row) {
            for (std::size_t c = 0; c < ns.cols(); ++c) ns.at(row, c) = s.non_shareable.at(i, c);
            if (multi && s.has_shareable)
                for (std::size_t c = 0; c < sh_reps.cols(); ++c)
                    sh_reps.at(row, c) = reps.at(i, c);
            labels[row] = s.labels[i];
            ids[row] = s.sample_ids[i];
        }
    }

    // Step budget: what the federated schedule would run, derived from the
    // same sampling stream.
    std::size_t budget = 0;
    for (std::size_t t = 0; t < fed.rounds; ++t) {
        Rng sample_rng = derive_rng(fed.seed, "sample", t);
        for (int k : sample_clients(fed.clients, fed.sample_rate, sample_rng))
            budget += fed.local_epochs *
                      detail::batch_count(data.shards[static_cast<std::size_t>(k)].size(),
                                          fed.batch_size);
    }

    Rng init_global = derive_rng(fed.seed, "init", 1);
    GlobalModel model(model_cfg, fed.global_modality_mode, init_global);
    AdamState adam(model.param_count(), fed.learning_rate);

    ExperimentResult result;
    std::size_t epoch_index = 0;
    std::vector<std::vector<std::size_t>> batches;
    std::size_t batch_pos = 0;

    auto evaluate_now = [&]() {
        std::optional<Tensor> test_reps;
        if (multi) test_reps = data.extractor.apply(data.test.shareable);
        GlobalModel::Forward f =
            model.forward(data.test.non_shareable, test_reps, data.test.sample_ids);
        return Simulation::compute_metrics(f.logits, data.test.labels, eval);
    };

    for (std::size_t t = 0; t < fed.rounds; ++t) {
        const std::size_t chunk =
            budget / fed.rounds + (t < budget % fed.rounds ? 1 : 0);
        detail::LossAccumulator acc;
        for (std::size_t s = 0; s < chunk; ++s) {
            if (batch_pos >= batches.size()) {
                Rng epoch_rng = derive_rng(fed.seed, "batch", epoch_index++);
                batches = detail::make_batches(total, fed.batch_size, epoch_rng);
                batch_pos = 0;
                if (batches.empty()) break;
            }
            const auto& rows = batches[batch_pos++];
            Tensor ns_b = detail::take_tensor_rows(ns, rows);
            std::vector<int> labels_b(rows.size());
            std::vector<std::int64_t> ids_b(rows.size());
            for (std::size_t r = 0; r < rows.size(); ++r) {
                labels_b[r] = labels[rows[r]];
                ids_b[r] = ids[rows[r]];
            }
            std::optional<Tensor> sh_b;
            if (multi) sh_b = detail::take_tensor_rows(sh_reps, rows);

            GlobalModel::Forward f = model.forward_cached(ns_b, sh_b, ids_b);
            CrossEntropyResult ce = softmax_cross_entropy(f.logits, labels_b);
            Tensor zero_emb(f.emb.vectors.rows(), f.emb.vectors.cols());
            ModelParams grads = model.backward(ce.logit_grad, zero_emb);
            ModelParams params = model.params();
            adam_step(adam, params, grads);
            model.set_params(params);
            acc.add(ce.loss);
        }

        RoundReport report;
        report.round = t;
        report.loss_glob = acc.mean();
        const bool due = ((t + 1) % std::max<std::size_t>(1, eval.eval_interval) == 0) ||
                         (t + 1 == fed.rounds);
        if (due) {
            report.metrics = evaluate_now();
            report.evaluated = true;
        }
        result.rounds.push_back(std::move(report));
    }
    result.final_metrics = evaluate_now();
    return result;
}

// Entry point used by the CLI: dispatches on algorithm.
inline ExperimentResult run_experiment(const FederationConfig& fed, const ModelConfig& model_cfg,
                                       const ExperimentData& data, const EvalSpec& eval,
                                       Hooks hooks = {}, unsigned threads = 1) {
    if (fed.algorithm == Algorithm::centralized)
        return run_centralized(fed, model_cfg, data, eval);
    Simulation sim(fed, model_cfg, data, std::move(hooks), threads);
    return sim.run(eval);
}

}  // namespace partialfl
