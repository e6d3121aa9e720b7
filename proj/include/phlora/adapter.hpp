#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "phlora/checkpoint.hpp"
#include "phlora/errors.hpp"
#include "phlora/factorize.hpp"

namespace phlora {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kAdapterConfigFile = "adapter_config.json";
inline constexpr const char* kAdapterTensorFile = "adapter_model.safetensors";
inline constexpr const char* kLoraASuffix = ".lora_A.weight";
inline constexpr const char* kLoraBSuffix = ".lora_B.weight";

// Adapter descriptor. `r` is the configured rank (the maximum when per-layer
// ranks are active, in which case rank_pattern holds each layer's rank and
// alpha_pattern keeps the per-layer scale alpha/r at exactly 1).
struct AdapterConfig {
    std::size_t r = 0;
    double alpha = 0.0;
    std::vector<std::string> target_modules;
    std::string base_model_id;
    std::string method = "exact";
    std::optional<double> energy_threshold;
    std::string version = kVersion;
    std::optional<std::map<std::string, std::size_t>> rank_pattern;
    std::optional<std::map<std::string, double>> alpha_pattern;
    bool has_meta = true; // false for adapters produced by other tools
};

namespace detail {

inline std::string layer_suffix(const std::string& layer_name) {
    const auto pos = layer_name.rfind('.');
    return pos == std::string::npos ? layer_name : layer_name.substr(pos + 1);
}

inline double unit_roundoff(DType t) {
    switch (t) {
        case DType::F64: return 0x1p-53;
        case DType::F32: return 0x1p-24;
        case DType::F16: return 0x1p-11;
        case DType::BF16: return 0x1p-8;
    }
    return 0.0;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace detail

// Builds a config whose invariants hold for the given factors: alpha equals
// the configured rank so the applied update is exactly b*a, target_modules
// are the distinct layer-name suffixes, and rank_pattern appears only when
// ranks actually differ.
inline AdapterConfig make_adapter_config(const std::vector<LoraFactors>& factors,
                                         const std::string& base_model_id,
                                         const std::string& method,
                                         std::optional<double> energy_threshold = std::nullopt) {
    if (factors.empty()) throw EmptyAdapter("no factors to describe");
    AdapterConfig cfg;
    cfg.base_model_id = base_model_id;
    cfg.method = method;
    cfg.energy_threshold = energy_threshold;

    std::set<std::string> modules;
    std::set<std::size_t> ranks;
    std::size_t max_rank = 0;
    for (const auto& f : factors) {
        modules.insert(detail::layer_suffix(f.layer_name));
        ranks.insert(f.rank);
        max_rank = std::max(max_rank, f.rank);
    }
    cfg.target_modules.assign(modules.begin(), modules.end());
    cfg.r = max_rank;
    cfg.alpha = static_cast<double>(max_rank);
    if (ranks.size() > 1) {
        std::map<std::string, std::size_t> pattern;
        for (const auto& f : factors) pattern[f.layer_name] = f.rank;
        cfg.rank_pattern = std::move(pattern);
    }
    return cfg;
}

namespace detail {

inline void validate_export(const std::vector<LoraFactors>& factors, const AdapterConfig& cfg) {
    if (factors.empty()) throw EmptyAdapter("refusing to write an adapter with no layers");
    if (cfg.target_modules.empty()) throw ValidationError("target_modules must not be empty");
    if (cfg.alpha != static_cast<double>(cfg.r)) {
        throw ValidationError("exported adapters use alpha == r (scale 1); got alpha " +
                              std::to_string(cfg.alpha) + " with r " + std::to_string(cfg.r));
    }
    std::size_t max_rank = 0;
    for (const auto& f : factors) {
        if (f.scale != 1.0) {
            throw ValidationError("layer '" + f.layer_name + "' carries scale " +
                                  std::to_string(f.scale) +
                                  "; bake it into the factors before exporting");
        }
        bool covered = false;
        for (const auto& suffix : cfg.target_modules) {
            if (ends_with(f.layer_name, suffix)) {
                covered = true;
                break;
            }
        }
        if (!covered) {
            throw ValidationError("layer '" + f.layer_name +
                                  "' does not match any entry in target_modules");
        }
        max_rank = std::max(max_rank, f.rank);
        if (cfg.rank_pattern) {
            auto it = cfg.rank_pattern->find(f.layer_name);
            if (it == cfg.rank_pattern->end() || it->second != f.rank) {
                throw InconsistentRank("rank_pattern entry for '" + f.layer_name +
                                       "' missing or inconsistent");
            }
        } else if (f.rank != cfg.r) {
            throw InconsistentRank("layer '" + f.layer_name + "' has rank " +
                                   std::to_string(f.rank) + " but the config declares uniform rank " +
                                   std::to_string(cfg.r));
        }
    }
    if (max_rank != cfg.r) {
        throw InconsistentRank("config rank " + std::to_string(cfg.r) +
                               " is not the maximum layer rank " + std::to_string(max_rank));
    }
}

inline nlohmann::json config_to_json(const AdapterConfig& cfg) {
    nlohmann::json j;
    j["r"] = cfg.r;
    j["lora_alpha"] = cfg.alpha;
    j["target_modules"] = cfg.target_modules;
    j["base_model_name_or_path"] = cfg.base_model_id;
    if (cfg.rank_pattern) {
        j["rank_pattern"] = *cfg.rank_pattern;
        // keep per-layer scale at alpha/r == 1 for consumers that scale by
        // the per-layer rank
        nlohmann::json alpha_pattern = nlohmann::json::object();
        for (const auto& [layer, r] : *cfg.rank_pattern) alpha_pattern[layer] = r;
        j["alpha_pattern"] = alpha_pattern;
    }
    if (cfg.has_meta) {
        j["phlora_meta"] = {{"method", cfg.method},
                            {"energy_threshold", cfg.energy_threshold
                                                     ? nlohmann::json(*cfg.energy_threshold)
                                                     : nlohmann::json(nullptr)},
                            {"version", cfg.version}};
    }
    return j;
}

} // namespace detail

// Writes <dir>/adapter_config.json and <dir>/adapter_model.safetensors with
// tensors <layer>.lora_A.weight (r x k) and <layer>.lora_B.weight (d x r).
inline void export_adapter(const std::vector<LoraFactors>& factors, const AdapterConfig& cfg,
                           const std::filesystem::path& dir, DType storage_dtype = DType::F32) {
    detail::validate_export(factors, cfg);
    std::filesystem::create_directories(dir);

    Checkpoint tensor_file;
    for (const auto& f : factors) {
        auto [rec_a, bytes_a] = from_matrix(f.a, f.layer_name + kLoraASuffix, storage_dtype);
        auto [rec_b, bytes_b] = from_matrix(f.b, f.layer_name + kLoraBSuffix, storage_dtype);
        tensor_file.add_tensor(rec_a.name, rec_a.dtype, rec_a.shape, bytes_a);
        tensor_file.add_tensor(rec_b.name, rec_b.dtype, rec_b.shape, bytes_b);
    }
    save_checkpoint(tensor_file, dir / kAdapterTensorFile);

    std::ofstream out(dir / kAdapterConfigFile, std::ios::trunc);
    if (!out) throw IoError("cannot write adapter config in '" + dir.string() + "'");
    out << detail::config_to_json(cfg).dump(2) << "\n";
    if (!out) throw IoError("write failure on adapter config");
}

namespace detail {

inline AdapterConfig config_from_json(const nlohmann::json& j) {
    AdapterConfig cfg;
    try {
        if (!j.is_object()) throw MalformedConfig("adapter config is not a JSON object");
        if (!j.contains("r") || !j["r"].is_number_unsigned()) {
            throw MalformedConfig("missing or invalid 'r'");
        }
        cfg.r = j["r"].get<std::size_t>();
        if (!j.contains("lora_alpha") || !j["lora_alpha"].is_number()) {
            throw MalformedConfig("missing or invalid 'lora_alpha'");
        }
        cfg.alpha = j["lora_alpha"].get<double>();
        if (!j.contains("target_modules") || !j["target_modules"].is_array()) {
            throw MalformedConfig("missing or invalid 'target_modules'");
        }
        for (const auto& m : j["target_modules"]) {
            if (!m.is_string()) throw MalformedConfig("target_modules entries must be strings");
            cfg.target_modules.push_back(m.get<std::string>());
        }
        if (cfg.target_modules.empty()) throw MalformedConfig("target_modules is empty");
        if (j.contains("base_model_name_or_path") && j["base_model_name_or_path"].is_string()) {
            cfg.base_model_id = j["base_model_name_or_path"].get<std::string>();
        }
        if (j.contains("rank_pattern")) {
            if (!j["rank_pattern"].is_object()) throw MalformedConfig("rank_pattern must be an object");
            std::map<std::string, std::size_t> pattern;
            for (const auto& [k, v] : j["rank_pattern"].items()) {
                if (!v.is_number_unsigned()) throw MalformedConfig("rank_pattern values must be unsigned");
                pattern[k] = v.get<std::size_t>();
            }
            cfg.rank_pattern = std::move(pattern);
        }
        if (j.contains("alpha_pattern")) {
            if (!j["alpha_pattern"].is_object()) throw MalformedConfig("alpha_pattern must be an object");
            std::map<std::string, double> pattern;
            for (const auto& [k, v] : j["alpha_pattern"].items()) {
                if (!v.is_number()) throw MalformedConfig("alpha_pattern values must be numbers");
                pattern[k] = v.get<double>();
            }
            cfg.alpha_pattern = std::move(pattern);
        }
        if (j.contains("phlora_meta") && j["phlora_meta"].is_object()) {
            const auto& meta = j["phlora_meta"];
            cfg.has_meta = true;
            if (meta.contains("method") && meta["method"].is_string()) {
                cfg.method = meta["method"].get<std::string>();
            }
            if (meta.contains("energy_threshold") && meta["energy_threshold"].is_number()) {
                cfg.energy_threshold = meta["energy_threshold"].get<double>();
            }
            if (meta.contains("version") && meta["version"].is_string()) {
                cfg.version = meta["version"].get<std::string>();
            }
        } else {
            cfg.has_meta = false;
        }
    } catch (const MalformedConfig&) {
        throw;
    } catch (const std::exception& e) {
        throw MalformedConfig(e.what());
    }
    return cfg;
}

} // namespace detail

// Reads an adapter directory back into factors plus its config. Singular
// values are recovered as squared column norms of B, which is exact for the
// balanced split written by export_adapter and an estimate for adapters from
// other tools.
inline std::pair<std::vector<LoraFactors>, AdapterConfig> import_adapter(
    const std::filesystem::path& dir) {
    const auto config_path = dir / kAdapterConfigFile;
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open '" + config_path.string() + "'");
    nlohmann::json config_json;
    try {
        in >> config_json;
    } catch (const std::exception& e) {
        throw MalformedConfig(e.what());
    }
    AdapterConfig cfg = detail::config_from_json(config_json);

    Checkpoint tensor_file = load_checkpoint(dir / kAdapterTensorFile);

    std::map<std::string, std::pair<std::optional<Matrix>, std::optional<Matrix>>> grouped;
    for (const auto& [name, rec] : tensor_file.tensors) {
        if (detail::ends_with(name, kLoraASuffix)) {
            const std::string layer = name.substr(0, name.size() - std::string(kLoraASuffix).size());
            grouped[layer].first = to_matrix(rec, tensor_file.data);
        } else if (detail::ends_with(name, kLoraBSuffix)) {
            const std::string layer = name.substr(0, name.size() - std::string(kLoraBSuffix).size());
            grouped[layer].second = to_matrix(rec, tensor_file.data);
        } else {
            throw MalformedConfig("tensor '" + name + "' is neither a lora_A nor a lora_B weight");
        }
    }

    std::vector<LoraFactors> factors;
    for (auto& [layer, pair] : grouped) {
        if (!pair.first) throw MissingCounterpart("layer '" + layer + "' has lora_B but no lora_A");
        if (!pair.second) throw MissingCounterpart("layer '" + layer + "' has lora_A but no lora_B");
        Matrix& a = *pair.first;  // r x k
        Matrix& b = *pair.second; // d x r
        if (a.rows() != b.cols()) {
            throw DimensionMismatch("layer '" + layer + "': lora_A has " + std::to_string(a.rows()) +
                                    " rows but lora_B has " + std::to_string(b.cols()) + " columns");
        }
        const std::size_t r = a.rows();

        bool covered = false;
        for (const auto& suffix : cfg.target_modules) {
            if (detail::ends_with(layer, suffix)) {
                covered = true;
                break;
            }
        }
        if (!covered) {
            throw MalformedConfig("layer '" + layer + "' is not covered by target_modules");
        }

        const std::size_t declared = cfg.rank_pattern && cfg.rank_pattern->count(layer)
                                         ? cfg.rank_pattern->at(layer)
                                         : cfg.r;
        if (r != declared) {
            throw DimensionMismatch("layer '" + layer + "': tensors have rank " + std::to_string(r) +
                                    " but the config declares " + std::to_string(declared));
        }

        LoraFactors f;
        f.layer_name = layer;
        f.rank = r;
        const double layer_alpha = cfg.alpha_pattern && cfg.alpha_pattern->count(layer)
                                       ? cfg.alpha_pattern->at(layer)
                                       : cfg.alpha;
        f.scale = layer_alpha / static_cast<double>(declared);
        f.sigma_is_estimate = !cfg.has_meta;
        f.storage_eps = std::max(detail::unit_roundoff(tensor_file.at(layer + kLoraASuffix).dtype),
                                 detail::unit_roundoff(tensor_file.at(layer + kLoraBSuffix).dtype));
        f.retained_sigma.resize(r);
        for (std::size_t j = 0; j < r; ++j) {
            double col_sq = 0.0;
            for (std::size_t i = 0; i < b.rows(); ++i) col_sq += b(i, j) * b(i, j);
            f.retained_sigma[j] = col_sq;
        }
        // Restore the descending order invariant; column j of b and row j of
        // a move together so b*a is unchanged.
        std::vector<std::size_t> order(r);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            return f.retained_sigma[x] > f.retained_sigma[y];
        });
        f.b = Matrix(b.rows(), r);
        f.a = Matrix(r, a.cols());
        std::vector<double> sigma_sorted(r);
        for (std::size_t jj = 0; jj < r; ++jj) {
            const std::size_t j = order[jj];
            sigma_sorted[jj] = f.retained_sigma[j];
            for (std::size_t i = 0; i < b.rows(); ++i) f.b(i, jj) = b(i, j);
            for (std::size_t i = 0; i < a.cols(); ++i) f.a(jj, i) = a(j, i);
        }
        f.retained_sigma = std::move(sigma_sorted);
        f.total_sq_energy = 0.0; // unknown without the source delta
        factors.push_back(std::move(f));
    }
    if (factors.empty()) throw EmptyAdapter("adapter directory contains no lora tensors");
    return {std::move(factors), std::move(cfg)};
}

} // namespace phlora
