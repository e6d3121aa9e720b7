#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "phlora/adapter.hpp"
#include "phlora/checkpoint.hpp"
#include "phlora/delta.hpp"
#include "phlora/energy.hpp"
#include "phlora/errors.hpp"
#include "phlora/factorize.hpp"
#include "phlora/svd.hpp"

namespace phlora {

// Exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitHardError = 1;
inline constexpr int kExitPartial = 2;

enum class MethodChoice { Auto, Exact, Randomized };

inline const char* to_string(MethodChoice m) {
    switch (m) {
        case MethodChoice::Auto: return "auto";
        case MethodChoice::Exact: return "exact";
        case MethodChoice::Randomized: return "randomized";
    }
    return "?";
}

inline MethodChoice method_choice_from_string(const std::string& s) {
    if (s == "auto") return MethodChoice::Auto;
    if (s == "exact") return MethodChoice::Exact;
    if (s == "randomized") return MethodChoice::Randomized;
    throw ValidationError("unknown method '" + s + "' (expected auto|exact|randomized)");
}

// Exact SVD cost grows cubically; large layers switch to the sketch unless
// the caller forces a method.
inline constexpr std::size_t kRandomizedAutoThreshold = 2048;

inline SvdMethod resolve_method(MethodChoice choice, std::size_t d, std::size_t k) {
    if (choice == MethodChoice::Exact) return SvdMethod::Exact;
    if (choice == MethodChoice::Randomized) return SvdMethod::Randomized;
    return std::min(d, k) > kRandomizedAutoThreshold ? SvdMethod::Randomized : SvdMethod::Exact;
}

inline std::uint64_t default_seed() {
    if (const char* env = std::getenv("PHLORA_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ValidationError("PHLORA_SEED is not an unsigned integer");
        }
    }
    return 42;
}

inline unsigned default_jobs() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

struct ExtractOptions {
    std::filesystem::path base;
    std::filesystem::path finetuned;
    std::filesystem::path out;
    std::optional<std::size_t> rank;             // mutually exclusive with
    std::optional<double> energy_threshold;      // each other; rank 32 default
    TargetSpec targets{{"*"}, {}, 1};
    MethodChoice method = MethodChoice::Auto;
    std::filesystem::path report;                // default: <out>/run_manifest.json
    unsigned jobs = 0;                           // 0 = hardware concurrency
    std::uint64_t seed = 0;                      // 0 = PHLORA_SEED or 42
    DType factor_dtype = DType::F32;
};

struct MergeOptions {
    std::filesystem::path base;
    std::filesystem::path adapter;
    std::filesystem::path out;
    std::optional<DType> dtype; // applied to modified layers only
    std::filesystem::path report; // default: <out>.manifest.json
};

struct AnalyzeOptions {
    std::filesystem::path base;
    std::filesystem::path finetuned;
    std::vector<std::size_t> probe_ranks;
    std::filesystem::path csv;
    TargetSpec targets{{"*"}, {}, 1};
    std::filesystem::path report; // default: <csv>.manifest.json
    unsigned jobs = 0;
};

struct VerifyOptions {
    std::filesystem::path base;
    std::filesystem::path finetuned;
    std::filesystem::path adapter;
    std::filesystem::path report; // default: phlora_verify_manifest.json in cwd
    unsigned jobs = 0;
};

namespace detail {

class PhaseTimer {
public:
    void start(const std::string& phase) {
        current_ = phase;
        t0_ = std::chrono::steady_clock::now();
    }
    void stop() {
        if (current_.empty()) return;
        const auto dt = std::chrono::steady_clock::now() - t0_;
        timings_[current_] =
            std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(dt).count();
        current_.clear();
    }
    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        double total = 0.0;
        for (const auto& [k, v] : timings_) {
            j[k] = v;
            total += v;
        }
        j["total"] = total;
        return j;
    }

private:
    std::string current_;
    std::chrono::steady_clock::time_point t0_;
    std::map<std::string, double> timings_;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// wins and is rethrown on the calling thread.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (!failed.load(std::memory_order_relaxed)) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed.store(true);
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline void write_manifest(const nlohmann::json& manifest, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("write failure on manifest '" + path.string() + "'");
}

inline nlohmann::json report_to_json(const PairingReport& report) {
    auto skip_list = [](const std::vector<SkipEntry>& entries) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : entries) arr.push_back({{"name", e.name}, {"reason", e.reason}});
        return arr;
    };
    return {{"matched", report.matched},
            {"only_in_base", report.only_in_base},
            {"only_in_ft", report.only_in_ft},
            {"skipped_non_2d", skip_list(report.skipped_non_2d)},
            {"skipped_by_pattern", skip_list(report.skipped_by_pattern)},
            {"skipped_zero_delta", skip_list(report.skipped_zero_delta)}};
}

inline nlohmann::json target_spec_json(const TargetSpec& spec) {
    return {{"include", spec.include_patterns},
            {"exclude", spec.exclude_patterns},
            {"min_dim", spec.min_dim}};
}

// Partial success means something the user likely wanted was left out:
// unmatched tensors or layers skipped for structural reasons. Pattern skips
// are an explicit user choice and do not demote the exit code.
inline bool is_partial(const PairingReport& report) {
    return !report.skipped_zero_delta.empty() || !report.skipped_non_2d.empty() ||
           !report.only_in_base.empty() || !report.only_in_ft.empty();
}

// Rank selection under the sketched kernel: the total energy comes from the
// Frobenius identity, the prefix from a sketch that grows until the
// threshold is reached (falling back to the exact kernel at full width).
inline std::pair<std::size_t, SvdResult> select_rank_randomized(const WeightDelta& delta,
                                                                double threshold,
                                                                std::uint64_t seed) {
    const std::size_t p = std::min(delta.d(), delta.k());
    const double total = frobenius_norm_sq(delta.delta);
    if (total == 0.0) {
        return {1, svd_randomized(delta.delta, 1, {10, 2, seed})};
    }
    std::size_t sketch = std::min<std::size_t>(8, p);
    while (true) {
        SvdResult svd = svd_randomized(delta.delta, sketch, {10, 2, seed});
        double prefix = 0.0;
        for (std::size_t r = 1; r <= svd.sigma.size(); ++r) {
            prefix += svd.sigma[r - 1] * svd.sigma[r - 1];
            const double energy = (r == p) ? 1.0 : prefix / total;
            if (energy >= threshold) return {r, std::move(svd)};
        }
        if (sketch >= p) {
            // sketch covers the full spectrum; threshold forces full rank
            return {p, std::move(svd)};
        }
        sketch = std::min(sketch * 2, p);
    }
}

} // namespace detail

struct LayerOutcome {
    std::string name;
    std::size_t d = 0;
    std::size_t k = 0;
    std::size_t rank = 0;
    std::string method;
    double energy = 0.0;
    double abs_error = 0.0;
    double rel_error = 0.0;
};

struct ExtractResult {
    int exit_code = kExitOk;
    std::vector<LayerOutcome> layers;
    PairingReport report;
    std::vector<std::string> warnings;
    nlohmann::json manifest;
};

inline ExtractResult run_extract(ExtractOptions opts, std::ostream& log = std::cerr) {
    if (opts.rank && opts.energy_threshold) {
        throw ValidationError("--rank and --energy-threshold are mutually exclusive");
    }
    if (opts.rank && *opts.rank < 1) throw ValidationError("--rank must be >= 1");
    if (opts.energy_threshold && (!(*opts.energy_threshold > 0.0) || *opts.energy_threshold > 1.0)) {
        throw InvalidThreshold("--energy-threshold must be in (0, 1]");
    }
    if (!opts.rank && !opts.energy_threshold) opts.rank = 32; // default rank
    if (opts.jobs == 0) opts.jobs = default_jobs();
    if (opts.seed == 0) opts.seed = default_seed();
    if (opts.report.empty()) opts.report = opts.out / "run_manifest.json";
    opts.targets.validate();

    detail::PhaseTimer timer;
    timer.start("load_ms");
    Checkpoint base = load_checkpoint(opts.base);
    Checkpoint ft = load_checkpoint(opts.finetuned);
    timer.stop();

    timer.start("pair_ms");
    auto [pairs, report] = pair_layers(base, ft, opts.targets);
    timer.stop();

    struct PerLayer {
        bool zero_delta = false;
        LoraFactors factors;
        LayerOutcome outcome;
        std::vector<std::string> warnings;
    };
    std::vector<PerLayer> results(pairs.size());

    timer.start("factorize_ms");
    detail::parallel_for(pairs.size(), opts.jobs, [&](std::size_t i) {
        const LayerPair& pair = pairs[i];
        PerLayer& slot = results[i];
        Matrix w_base = to_matrix(pair.base, base.data);
        Matrix w_ft = to_matrix(pair.ft, ft.data);
        WeightDelta delta = compute_delta(w_base, w_ft, pair.name);
        if (is_zero_delta(delta, w_base)) {
            slot.zero_delta = true;
            return;
        }
        const SvdMethod method = resolve_method(opts.method, delta.d(), delta.k());
        if (opts.energy_threshold) {
            if (method == SvdMethod::Randomized) {
                auto [rank, svd] =
                    detail::select_rank_randomized(delta, *opts.energy_threshold, opts.seed);
                slot.factors = factors_from_svd(delta, svd, rank);
            } else {
                SvdResult svd = svd_thin(delta.delta);
                const std::size_t rank = select_rank(svd.sigma, *opts.energy_threshold);
                slot.factors = factors_from_svd(delta, svd, rank);
            }
        } else {
            slot.factors = factorize(delta, *opts.rank, method, opts.seed, &slot.warnings);
        }
        const ReconstructionError err = reconstruction_error(delta, slot.factors);
        double retained = 0.0;
        for (double s : slot.factors.retained_sigma) retained += s * s;
        LayerOutcome& out = slot.outcome;
        out.name = pair.name;
        out.d = delta.d();
        out.k = delta.k();
        out.rank = slot.factors.rank;
        out.method = to_string(method);
        out.energy = slot.factors.total_sq_energy == 0.0
                         ? 1.0
                         : std::min(1.0, retained / slot.factors.total_sq_energy);
        out.abs_error = err.abs_frobenius;
        out.rel_error = err.rel_frobenius;
    });
    timer.stop();

    ExtractResult result;
    std::vector<LoraFactors> factors;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        PerLayer& slot = results[i];
        if (slot.zero_delta) {
            report.mark_zero_delta(pairs[i].name);
            continue;
        }
        for (auto& w : slot.warnings) result.warnings.push_back(pairs[i].name + ": " + w);
        factors.push_back(std::move(slot.factors));
        result.layers.push_back(slot.outcome);
    }

    timer.start("export_ms");
    std::filesystem::create_directories(opts.out);
    if (!factors.empty()) {
        AdapterConfig cfg = make_adapter_config(factors, opts.base.string(),
                                                to_string(opts.method), opts.energy_threshold);
        export_adapter(factors, cfg, opts.out, opts.factor_dtype);
    } else {
        result.warnings.push_back("no layers extracted; adapter files not written");
        log << "phlora: no layers extracted; adapter files not written\n";
    }
    timer.stop();

    result.exit_code = detail::is_partial(report) || factors.empty() ? kExitPartial : kExitOk;
    result.report = report;

    nlohmann::json layers_json = nlohmann::json::array();
    for (const auto& l : result.layers) {
        layers_json.push_back({{"name", l.name},
                               {"d", l.d},
                               {"k", l.k},
                               {"rank", l.rank},
                               {"method", l.method},
                               {"energy", l.energy},
                               {"abs_error", l.abs_error},
                               {"rel_error", l.rel_error}});
    }

    std::uintmax_t base_bytes = std::filesystem::file_size(opts.base);
    std::uintmax_t adapter_bytes = 0;
    if (!factors.empty()) {
        adapter_bytes = std::filesystem::file_size(opts.out / kAdapterTensorFile) +
                        std::filesystem::file_size(opts.out / kAdapterConfigFile);
    }

    result.manifest = {
        {"command", "extract"},
        {"inputs", {{"base", opts.base.string()}, {"finetuned", opts.finetuned.string()}}},
        {"output", opts.out.string()},
        {"target_spec", detail::target_spec_json(opts.targets)},
        {"settings",
         {{"rank", opts.rank ? nlohmann::json(*opts.rank) : nlohmann::json(nullptr)},
          {"energy_threshold",
           opts.energy_threshold ? nlohmann::json(*opts.energy_threshold) : nlohmann::json(nullptr)},
          {"method", to_string(opts.method)},
          {"seed", opts.seed},
          {"jobs", opts.jobs},
          {"factor_dtype", dtype_name(opts.factor_dtype)}}},
        {"layers", layers_json},
        {"pairing", detail::report_to_json(report)},
        {"warnings", result.warnings},
        {"sizes",
         {{"base_bytes", base_bytes},
          {"adapter_bytes", adapter_bytes},
          {"compression_ratio",
           adapter_bytes == 0 ? 0.0
                              : static_cast<double>(base_bytes) / static_cast<double>(adapter_bytes)}}},
        {"timings_ms", timer.to_json()},
        {"exit_code", result.exit_code}};
    detail::write_manifest(result.manifest, opts.report);
    return result;
}

struct MergeResult {
    int exit_code = kExitOk;
    std::vector<std::string> merged_layers;
    nlohmann::json manifest;
};

inline MergeResult run_merge(MergeOptions opts, std::ostream& log = std::cerr) {
    if (opts.report.empty()) opts.report = opts.out.string() + ".manifest.json";

    detail::PhaseTimer timer;
    timer.start("load_ms");
    Checkpoint base = load_checkpoint(opts.base);
    auto [factors, cfg] = import_adapter(opts.adapter);
    timer.stop();

    std::vector<std::string> missing;
    for (const auto& f : factors) {
        if (!base.has(f.layer_name)) missing.push_back(f.layer_name);
    }
    if (!missing.empty()) {
        std::string names;
        for (const auto& n : missing) names += (names.empty() ? "" : ", ") + n;
        throw ValidationError("adapter layers missing from base checkpoint: " + names);
    }

    timer.start("merge_ms");
    Checkpoint merged;
    merged.metadata = base.metadata;
    std::map<std::string, const LoraFactors*> by_name;
    for (const auto& f : factors) by_name[f.layer_name] = &f;

    MergeResult result;
    for (const auto& [name, rec] : base.tensors) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            // untouched tensors are copied bit-exact
            merged.add_tensor(name, rec.dtype, rec.shape, base.tensor_bytes(name));
            continue;
        }
        Matrix w_base = to_matrix(rec, base.data);
        Matrix w_merged = merge(w_base, *it->second);
        const DType out_dtype = opts.dtype ? *opts.dtype : rec.dtype;
        auto [new_rec, bytes] = from_matrix(w_merged, name, out_dtype);
        merged.add_tensor(name, new_rec.dtype, new_rec.shape, bytes);
        result.merged_layers.push_back(name);
    }
    timer.stop();

    timer.start("save_ms");
    save_checkpoint(merged, opts.out);
    timer.stop();

    nlohmann::json layers_json = nlohmann::json::array();
    for (const auto& f : factors) {
        layers_json.push_back({{"name", f.layer_name},
                               {"rank", f.rank},
                               {"scale", f.scale},
                               {"dtype", dtype_name(opts.dtype ? *opts.dtype
                                                               : base.at(f.layer_name).dtype)}});
    }
    result.manifest = {{"command", "merge"},
                       {"inputs",
                        {{"base", opts.base.string()}, {"adapter", opts.adapter.string()}}},
                       {"output", opts.out.string()},
                       {"settings",
                        {{"dtype", opts.dtype ? nlohmann::json(dtype_name(*opts.dtype))
                                              : nlohmann::json(nullptr)}}},
                       {"layers", layers_json},
                       {"warnings", nlohmann::json::array()},
                       {"timings_ms", timer.to_json()},
                       {"exit_code", kExitOk}};
    detail::write_manifest(result.manifest, opts.report);
    log << "phlora: merged " << result.merged_layers.size() << " layers into '"
        << opts.out.string() << "'\n";
    return result;
}

struct AnalyzeResult {
    int exit_code = kExitOk;
    EnergyReport energy;
    PairingReport report;
    std::vector<std::string> warnings;
    nlohmann::json manifest;
};

inline AnalyzeResult run_analyze(AnalyzeOptions opts, std::ostream& log = std::cerr) {
    if (opts.probe_ranks.empty()) throw ValidationError("--ranks must list at least one rank");
    if (opts.csv.empty()) throw ValidationError("--csv output path is required");
    if (opts.jobs == 0) opts.jobs = default_jobs();
    if (opts.report.empty()) opts.report = opts.csv.string() + ".manifest.json";
    opts.targets.validate();

    AnalyzeResult result;

    // normalize probes: sorted, deduplicated
    std::vector<std::size_t> probes = opts.probe_ranks;
    std::sort(probes.begin(), probes.end());
    probes.erase(std::unique(probes.begin(), probes.end()), probes.end());
    if (probes != opts.probe_ranks) {
        result.warnings.push_back("probe ranks normalized to sorted unique list");
    }
    for (std::size_t r : probes) {
        if (r < 1) throw ValidationError("probe ranks must be >= 1");
    }

    detail::PhaseTimer timer;
    timer.start("load_ms");
    Checkpoint base = load_checkpoint(opts.base);
    Checkpoint ft = load_checkpoint(opts.finetuned);
    timer.stop();

    timer.start("pair_ms");
    auto [pairs, report] = pair_layers(base, ft, opts.targets);
    timer.stop();

    struct PerLayer {
        bool zero_delta = false;
        EnergyCurve curve;
    };
    std::vector<PerLayer> slots(pairs.size());

    timer.start("svd_ms");
    detail::parallel_for(pairs.size(), opts.jobs, [&](std::size_t i) {
        const LayerPair& pair = pairs[i];
        Matrix w_base = to_matrix(pair.base, base.data);
        Matrix w_ft = to_matrix(pair.ft, ft.data);
        WeightDelta delta = compute_delta(w_base, w_ft, pair.name);
        if (is_zero_delta(delta, w_base)) {
            slots[i].zero_delta = true;
            return;
        }
        SvdResult svd = svd_thin(delta.delta);
        slots[i].curve = EnergyCurve::from_sigma(pair.name, delta.d(), delta.k(), svd.sigma);
    });
    timer.stop();

    std::vector<EnergyCurve> curves;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (slots[i].zero_delta) {
            report.mark_zero_delta(pairs[i].name);
        } else {
            curves.push_back(std::move(slots[i].curve));
        }
    }

    timer.start("report_ms");
    result.energy = build_report(std::move(curves), probes);
    write_energy_csv(result.energy, opts.csv);
    std::filesystem::path json_path = opts.csv;
    json_path.replace_extension(".json");
    write_energy_json(result.energy, json_path);
    timer.stop();

    result.exit_code =
        detail::is_partial(report) || result.energy.curves.empty() ? kExitPartial : kExitOk;
    result.report = report;

    nlohmann::json layers_json = nlohmann::json::array();
    for (const auto& c : result.energy.curves) {
        nlohmann::json per_rank = nlohmann::json::array();
        for (std::size_t r : probes) per_rank.push_back({{"rank", r}, {"energy", c.at_rank(r)}});
        layers_json.push_back(
            {{"name", c.layer_name}, {"d", c.d}, {"k", c.k}, {"energy", per_rank}});
    }
    result.manifest = {
        {"command", "analyze"},
        {"inputs", {{"base", opts.base.string()}, {"finetuned", opts.finetuned.string()}}},
        {"output", opts.csv.string()},
        {"target_spec", detail::target_spec_json(opts.targets)},
        {"settings", {{"probe_ranks", probes}, {"jobs", opts.jobs}}},
        {"layers", layers_json},
        {"pairing", detail::report_to_json(report)},
        {"warnings", result.warnings},
        {"timings_ms", timer.to_json()},
        {"exit_code", result.exit_code}};
    detail::write_manifest(result.manifest, opts.report);
    if (result.energy.curves.empty()) {
        log << "phlora: all layers skipped; energy report is empty\n";
    }
    return result;
}

struct VerifyLayer {
    std::string name;
    double error_sq = 0.0;
    double tail_sq = 0.0;
    bool pass = false;
};

struct VerifyResult {
    int exit_code = kExitOk;
    std::vector<VerifyLayer> layers;
    nlohmann::json manifest;
};

// Checks that each adapter layer achieves the error the spectrum of a fresh
// delta SVD dictates for its rank.
inline VerifyResult run_verify(VerifyOptions opts, std::ostream& log = std::cerr) {
    if (opts.report.empty()) opts.report = "phlora_verify_manifest.json";
    if (opts.jobs == 0) opts.jobs = default_jobs();

    Checkpoint base = load_checkpoint(opts.base);
    Checkpoint ft = load_checkpoint(opts.finetuned);
    auto [factors, cfg] = import_adapter(opts.adapter);

    // validation pass before any numeric checks
    for (const auto& f : factors) {
        if (!base.has(f.layer_name) || !ft.has(f.layer_name)) {
            throw ValidationError("adapter layer '" + f.layer_name +
                                  "' missing from base or fine-tuned checkpoint");
        }
        const auto& shape = base.at(f.layer_name).shape;
        if (shape.size() == 2 && f.rank > std::min(shape[0], shape[1])) {
            throw ValidationError("adapter layer '" + f.layer_name + "' declares rank " +
                                  std::to_string(f.rank) + " above min(d,k) = " +
                                  std::to_string(std::min(shape[0], shape[1])));
        }
    }

    VerifyResult result;
    result.layers.resize(factors.size());
    detail::parallel_for(factors.size(), opts.jobs, [&](std::size_t i) {
        const LoraFactors& f = factors[i];
        Matrix w_base = to_matrix(base, f.layer_name);
        Matrix w_ft = to_matrix(ft, f.layer_name);
        WeightDelta delta = compute_delta(w_base, w_ft, f.layer_name);

        const Matrix residual = subtract(delta.delta, f.apply());
        const double err_sq = frobenius_norm_sq(residual);

        SvdResult svd = svd_thin(delta.delta);
        double tail = 0.0, total = 0.0;
        for (std::size_t j = 0; j < svd.sigma.size(); ++j) {
            const double sq = svd.sigma[j] * svd.sigma[j];
            total += sq;
            if (j >= f.rank) tail += sq;
        }
        // 1e-6 relative agreement, plus an allowance for the precision the
        // factors were stored at: a rank-r product of matrices rounded at
        // unit roundoff eps deviates from the exact one by O(sqrt(r)*eps) in
        // Frobenius norm, which dominates when the true tail is near zero.
        const double storage_noise =
            16.0 * (static_cast<double>(f.rank) + 4.0) * f.storage_eps * f.storage_eps * total;
        const double tol = 1e-6 * std::max(tail, err_sq) + storage_noise;
        VerifyLayer& v = result.layers[i];
        v.name = f.layer_name;
        v.error_sq = err_sq;
        v.tail_sq = tail;
        v.pass = std::abs(err_sq - tail) <= tol;
    });

    bool all_pass = true;
    nlohmann::json layers_json = nlohmann::json::array();
    for (const auto& v : result.layers) {
        all_pass = all_pass && v.pass;
        layers_json.push_back({{"name", v.name},
                               {"error_sq", v.error_sq},
                               {"tail_energy_sq", v.tail_sq},
                               {"pass", v.pass}});
        if (!v.pass) {
            log << "phlora: verify FAILED for '" << v.name << "': ||delta - BA||_F^2 = "
                << v.error_sq << " but tail energy = " << v.tail_sq << "\n";
        }
    }
    result.exit_code = all_pass ? kExitOk : kExitHardError;
    result.manifest = {{"command", "verify"},
                       {"inputs",
                        {{"base", opts.base.string()},
                         {"finetuned", opts.finetuned.string()},
                         {"adapter", opts.adapter.string()}}},
                       {"layers", layers_json},
                       {"warnings", nlohmann::json::array()},
                       {"exit_code", result.exit_code}};
    detail::write_manifest(result.manifest, opts.report);
    return result;
}

} // namespace phlora
