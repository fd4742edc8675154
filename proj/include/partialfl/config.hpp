#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "partialfl/data.hpp"
#include "partialfl/errors.hpp"
#include "partialfl/federation.hpp"
#include "partialfl/models.hpp"

namespace partialfl {

enum class ReportFormat { json_lines, csv };

inline const char* to_string(ReportFormat f) {
    return f == ReportFormat::json_lines ? "json_lines" : "csv";
}

// One document that fixes a whole experiment. The [model] dims that must
// match the data (feature dims, class count) are derived in finalize() rather
// than duplicated as keys.
struct ExperimentConfig {
    int format_version = 1;
    SyntheticSpec data;
    double test_fraction = 0.2;
    PartitionSpec partition;
    double modality_q = 1.0;  // fraction of clients keeping the shareable modality
    ModelConfig model;
    FederationConfig federation;
    EvalSpec eval;
    std::string output_path = "report";
    ReportFormat output_format = ReportFormat::json_lines;

    bool operator==(const ExperimentConfig&) const = default;

    // Copies the coupled fields into their derived locations.
    void finalize() {
        model.num_classes = data.num_classes;
        model.non_shareable_dim = data.non_shareable_dim;
        model.shareable_raw_dim = data.shareable_dim;
        partition.clients = federation.clients;
    }

    void validate() const {
        data.validate();
        partition.validate();
        federation.validate();
        // Evaluation always runs at least once, so the held-out split cannot
        // be empty.
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw ConfigError("test_fraction must be in (0, 1)");
        if (!(modality_q >= 0.0 && modality_q <= 1.0))
            throw ConfigError("q must be in [0, 1]");
        if (eval.eval_interval < 1) throw ConfigError("eval interval must be >= 1");
        if (eval.metric_names.empty()) throw ConfigError("need at least one metric");
        for (const auto& name : eval.metric_names) {
            if (name == "uar") continue;
            if (name.rfind("top", 0) == 0) {
                const std::string digits = name.substr(3);
                if (digits.empty() ||
                    digits.find_first_not_of("0123456789") != std::string::npos)
                    throw ConfigError("bad metric name '" + name + "'");
                const std::size_t k = std::stoul(digits);
                if (k < 1 || k > data.num_classes)
                    throw ConfigError("metric '" + name + "' out of range for " +
                                      std::to_string(data.num_classes) + " classes");
                continue;
            }
            throw ConfigError("unknown metric '" + name + "'");
        }
        if (format_version != 1)
            throw ConfigError("unsupported format_version " + std::to_string(format_version));
    }
};

namespace config_detail {

// One entry per config key: how to set it from text, print it back, and move
// it through JSON. Everything (parser, serializer, report echo) is driven off
// this single table.
struct KeyBinding {
    std::string section;
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set_text;
    std::function<std::string(const ExperimentConfig&)> get_text;
    std::function<nlohmann::json(const ExperimentConfig&)> get_json;
    std::function<void(ExperimentConfig&, const nlohmann::json&)> set_json;
};

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& text) {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw ValueError("not a number: '" + text + "'");
    return v;
}

inline std::size_t parse_size(const std::string& text) {
    if (!text.empty() && text[0] == '-') throw ValueError("expected nonnegative: '" + text + "'");
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(text, &pos);
    if (pos != text.size()) throw ValueError("not an integer: '" + text + "'");
    return static_cast<std::size_t>(v);
}

inline bool parse_bool(const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw ValueError("expected true/false: '" + text + "'");
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <typename Ref>
KeyBinding bind_double(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_double(v); },
            [ref](const ExperimentConfig& c) {
                return format_double(ref(const_cast<ExperimentConfig&>(c)));
            },
            [ref](const ExperimentConfig& c) {
                return nlohmann::json(ref(const_cast<ExperimentConfig&>(c)));
            },
            [ref](ExperimentConfig& c, const nlohmann::json& j) { ref(c) = j.get<double>(); }};
}

template <typename Ref>
KeyBinding bind_size(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_size(v); },
            [ref](const ExperimentConfig& c) {
                return std::to_string(ref(const_cast<ExperimentConfig&>(c)));
            },
            [ref](const ExperimentConfig& c) {
                return nlohmann::json(ref(const_cast<ExperimentConfig&>(c)));
            },
            [ref](ExperimentConfig& c, const nlohmann::json& j) {
                ref(c) = j.get<std::size_t>();
            }};
}

template <typename Ref>
KeyBinding bind_bool(std::string section, std::string key, Ref ref) {
    return {std::move(section), std::move(key),
            [ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(v); },
            [ref](const ExperimentConfig& c) {
                return ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false";
            },
            [ref](const ExperimentConfig& c) {
                return nlohmann::json(ref(const_cast<ExperimentConfig&>(c)));
            },
            [ref](ExperimentConfig& c, const nlohmann::json& j) { ref(c) = j.get<bool>(); }};
}

// String-choice fields (enums).
inline KeyBinding bind_choice(std::string section, std::string key,
                              std::function<std::string(const ExperimentConfig&)> get_name,
                              std::function<void(ExperimentConfig&, const std::string&)> set_name,
                              std::vector<std::string> options) {
    auto check = [options](const std::string& text) {
        for (const auto& o : options)
            if (o == text) return;
        std::string joined;
        for (const auto& o : options) joined += (joined.empty() ? "" : "|") + o;
        throw ValueError("expected one of {" + joined + "}: '" + text + "'");
    };
    return {std::move(section), std::move(key),
            [check, set_name](ExperimentConfig& c, const std::string& v) {
                check(v);
                set_name(c, v);
            },
            get_name,
            [get_name](const ExperimentConfig& c) { return nlohmann::json(get_name(c)); },
            [check, set_name](ExperimentConfig& c, const nlohmann::json& j) {
                const auto v = j.get<std::string>();
                check(v);
                set_name(c, v);
            }};
}

inline const std::vector<KeyBinding>& bindings() {
    static const std::vector<KeyBinding> table = [] {
        std::vector<KeyBinding> b;

        b.push_back({"", "format_version",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.format_version = static_cast<int>(parse_size(v));
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.format_version); },
                     [](const ExperimentConfig& c) { return nlohmann::json(c.format_version); },
                     [](ExperimentConfig& c, const nlohmann::json& j) {
                         c.format_version = j.get<int>();
                     }});

        b.push_back(bind_size("data", "classes",
                              [](ExperimentConfig& c) -> std::size_t& { return c.data.num_classes; }));
        b.push_back(bind_size("data", "samples",
                              [](ExperimentConfig& c) -> std::size_t& { return c.data.num_samples; }));
        b.push_back(bind_size("data", "latent_dim",
                              [](ExperimentConfig& c) -> std::size_t& { return c.data.latent_dim; }));
        b.push_back(bind_size("data", "non_shareable_dim", [](ExperimentConfig& c) -> std::size_t& {
            return c.data.non_shareable_dim;
        }));
        b.push_back(bind_size("data", "shareable_dim", [](ExperimentConfig& c) -> std::size_t& {
            return c.data.shareable_dim;
        }));
        b.push_back(bind_double("data", "non_shareable_noise", [](ExperimentConfig& c) -> double& {
            return c.data.non_shareable_noise;
        }));
        b.push_back(bind_double("data", "shareable_noise", [](ExperimentConfig& c) -> double& {
            return c.data.shareable_noise;
        }));
        b.push_back(bind_double("data", "separation", [](ExperimentConfig& c) -> double& {
            return c.data.class_separation;
        }));
        b.push_back(bind_double("data", "test_fraction",
                                [](ExperimentConfig& c) -> double& { return c.test_fraction; }));

        b.push_back(bind_choice(
            "partition", "mode",
            [](const ExperimentConfig& c) -> std::string {
                return c.partition.mode == PartitionMode::dirichlet ? "dirichlet"
                                                                    : "speaker_equal";
            },
            [](ExperimentConfig& c, const std::string& v) {
                c.partition.mode =
                    v == "dirichlet" ? PartitionMode::dirichlet : PartitionMode::speaker_equal;
            },
            {"dirichlet", "speaker_equal"}));
        b.push_back(bind_double("partition", "alpha",
                                [](ExperimentConfig& c) -> double& { return c.partition.alpha; }));
        b.push_back(bind_double("partition", "q",
                                [](ExperimentConfig& c) -> double& { return c.modality_q; }));

        b.push_back(bind_size("model", "embedding_dim", [](ExperimentConfig& c) -> std::size_t& {
            return c.model.embedding_dim;
        }));
        b.push_back(bind_size("model", "shareable_rep_dim", [](ExperimentConfig& c) -> std::size_t& {
            return c.model.shareable_rep_dim;
        }));
        b.push_back(bind_size("model", "server_hidden", [](ExperimentConfig& c) -> std::size_t& {
            return c.model.server_hidden;
        }));
        b.push_back(bind_size("model", "edge_hidden", [](ExperimentConfig& c) -> std::size_t& {
            return c.model.edge_hidden;
        }));
        b.push_back(bind_size("model", "classifier_hidden", [](ExperimentConfig& c) -> std::size_t& {
            return c.model.classifier_hidden;
        }));

        b.push_back(bind_choice(
            "federation", "algorithm",
            [](const ExperimentConfig& c) { return std::string(to_string(c.federation.algorithm)); },
            [](ExperimentConfig& c, const std::string& v) {
                c.federation.algorithm = v == "partialfl"   ? Algorithm::partialfl
                                         : v == "fedavg"    ? Algorithm::fedavg
                                         : v == "fedprox"   ? Algorithm::fedprox
                                                            : Algorithm::centralized;
            },
            {"partialfl", "fedavg", "fedprox", "centralized"}));
        b.push_back(bind_size("federation", "clients", [](ExperimentConfig& c) -> std::size_t& {
            return c.federation.clients;
        }));
        b.push_back(bind_double("federation", "sample_rate", [](ExperimentConfig& c) -> double& {
            return c.federation.sample_rate;
        }));
        b.push_back(bind_size("federation", "rounds", [](ExperimentConfig& c) -> std::size_t& {
            return c.federation.rounds;
        }));
        b.push_back(bind_size("federation", "local_epochs", [](ExperimentConfig& c) -> std::size_t& {
            return c.federation.local_epochs;
        }));
        b.push_back(bind_size("federation", "batch_size", [](ExperimentConfig& c) -> std::size_t& {
            return c.federation.batch_size;
        }));
        b.push_back(bind_double("federation", "learning_rate", [](ExperimentConfig& c) -> double& {
            return c.federation.learning_rate;
        }));
        b.push_back(bind_double("federation", "tau", [](ExperimentConfig& c) -> double& {
            return c.federation.temperature;
        }));
        b.push_back(bind_double("federation", "beta", [](ExperimentConfig& c) -> double& {
            return c.federation.beta;
        }));
        b.push_back(bind_double("federation", "mu", [](ExperimentConfig& c) -> double& {
            return c.federation.proximal_mu;
        }));
        b.push_back(bind_bool("federation", "prox_in_partialfl", [](ExperimentConfig& c) -> bool& {
            return c.federation.prox_in_partialfl;
        }));
        b.push_back(bind_choice(
            "federation", "aggregation",
            [](const ExperimentConfig& c) {
                return std::string(to_string(c.federation.aggregation));
            },
            [](ExperimentConfig& c, const std::string& v) {
                c.federation.aggregation =
                    v == "uniform" ? Aggregation::uniform : Aggregation::size_weighted;
            },
            {"uniform", "size_weighted"}));
        b.push_back(bind_choice(
            "federation", "modality_mode",
            [](const ExperimentConfig& c) {
                return std::string(to_string(c.federation.global_modality_mode));
            },
            [](ExperimentConfig& c, const std::string& v) {
                c.federation.global_modality_mode =
                    v == "uni_modal" ? ModalityMode::uni_modal : ModalityMode::multi_modal;
            },
            {"uni_modal", "multi_modal"}));
        b.push_back(bind_bool("federation", "inter_modal_negatives",
                              [](ExperimentConfig& c) -> bool& {
                                  return c.federation.include_inter_modal_negatives;
                              }));
        b.push_back(bind_bool("federation", "normalize_embeddings",
                              [](ExperimentConfig& c) -> bool& {
                                  return c.federation.normalize_embeddings;
                              }));
        b.push_back({"federation", "seed",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.federation.seed = parse_size(v);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.federation.seed); },
                     [](const ExperimentConfig& c) { return nlohmann::json(c.federation.seed); },
                     [](ExperimentConfig& c, const nlohmann::json& j) {
                         c.federation.seed = j.get<std::uint64_t>();
                     }});

        // [eval]
        b.push_back({"eval", "metrics",
                     [](ExperimentConfig& c, const std::string& v) {
                         c.eval.metric_names.clear();
                         std::stringstream ss(v);
                         std::string item;
                         while (std::getline(ss, item, ','))
                             if (!trim(item).empty()) c.eval.metric_names.push_back(trim(item));
                     },
                     [](const ExperimentConfig& c) {
                         std::string joined;
                         for (const auto& m : c.eval.metric_names)
                             joined += (joined.empty() ? "" : ",") + m;
                         return joined;
                     },
                     [](const ExperimentConfig& c) { return nlohmann::json(c.eval.metric_names); },
                     [](ExperimentConfig& c, const nlohmann::json& j) {
                         c.eval.metric_names = j.get<std::vector<std::string>>();
                     }});
        b.push_back(bind_size("eval", "interval", [](ExperimentConfig& c) -> std::size_t& {
            return c.eval.eval_interval;
        }));

        b.push_back({"output", "path",
                     [](ExperimentConfig& c, const std::string& v) { c.output_path = v; },
                     [](const ExperimentConfig& c) { return c.output_path; },
                     [](const ExperimentConfig& c) { return nlohmann::json(c.output_path); },
                     [](ExperimentConfig& c, const nlohmann::json& j) {
                         c.output_path = j.get<std::string>();
                     }});
        b.push_back(bind_choice(
            "output", "format",
            [](const ExperimentConfig& c) { return std::string(to_string(c.output_format)); },
            [](ExperimentConfig& c, const std::string& v) {
                c.output_format = v == "json_lines" ? ReportFormat::json_lines : ReportFormat::csv;
            },
            {"json_lines", "csv"}));

        return b;
    }();
    return table;
}

inline const KeyBinding* find_binding(const std::string& section, const std::string& key) {
    for (const auto& b : bindings())
        if (b.section == section && b.key == key) return &b;
    return nullptr;
}

// Bare key lookup for --grid flags; must be unambiguous.
inline const KeyBinding* find_binding_loose(const std::string& key) {
    const std::string dotted_section = key.substr(0, key.find('.'));
    if (key.find('.') != std::string::npos) {
        return find_binding(dotted_section, key.substr(key.find('.') + 1));
    }
    const KeyBinding* found = nullptr;
    for (const auto& b : bindings()) {
        if (b.key != key) continue;
        if (found) throw ConfigError("grid key '" + key + "' is ambiguous; qualify with section");
        found = &b;
    }
    return found;
}

}  // namespace config_detail

// Line-oriented `key = value` document with [section] headers, '#' comments
// and blank lines. Unknown keys and type errors are rejected with the key and
// line number.
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string stripped = config_detail::trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section '" +
                                  stripped + "'");
            section = config_detail::trim(stripped.substr(1, stripped.size() - 2));
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" +
                              stripped + "'");
        const std::string key = config_detail::trim(stripped.substr(0, eq));
        const std::string value = config_detail::trim(stripped.substr(eq + 1));
        const auto* binding = config_detail::find_binding(section, key);
        if (!binding)
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" +
                              (section.empty() ? key : section + "." + key) + "'");
        try {
            binding->set_text(cfg, value);
        } catch (const std::exception& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": key '" + key +
                              "': " + e.what());
        }
    }
    cfg.finalize();
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream buffer;
    buffer << f.rdbuf();
    return parse_config(buffer.str());
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    std::string section;
    bool first = true;
    for (const auto& b : config_detail::bindings()) {
        if (b.section != section || first) {
            if (!b.section.empty()) {
                if (!first) out += "\n";
                if (b.section != section) out += "[" + b.section + "]\n";
            }
            section = b.section;
        }
        out += b.key + " = " + b.get_text(cfg) + "\n";
        first = false;
    }
    return out;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    for (const auto& b : config_detail::bindings()) {
        if (b.section.empty())
            j[b.key] = b.get_json(cfg);
        else
            j[b.section][b.key] = b.get_json(cfg);
    }
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    for (const auto& b : config_detail::bindings()) {
        const nlohmann::json* node = nullptr;
        if (b.section.empty()) {
            if (j.contains(b.key)) node = &j.at(b.key);
        } else if (j.contains(b.section) && j.at(b.section).contains(b.key)) {
            node = &j.at(b.section).at(b.key);
        }
        if (node) b.set_json(cfg, *node);
    }
    cfg.finalize();
    return cfg;
}

// Applies a `key=value` override (grid sweeps); key may be section-qualified.
inline void apply_override(ExperimentConfig& cfg, const std::string& key,
                           const std::string& value) {
    const auto* binding = config_detail::find_binding_loose(key);
    if (!binding) throw ConfigError("unknown grid key '" + key + "'");
    try {
        binding->set_text(cfg, value);
    } catch (const std::exception& e) {
        throw ConfigError("grid key '" + key + "': " + e.what());
    }
    cfg.finalize();
}

}  // namespace partialfl
