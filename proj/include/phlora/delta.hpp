#pragma once

#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "phlora/checkpoint.hpp"
#include "phlora/errors.hpp"
#include "phlora/matrix.hpp"

namespace phlora {

// Which tensors take part in extraction. A tensor is targeted when its name
// matches at least one include pattern and no exclude pattern. min_dim drops
// 2-D layers whose smaller dimension falls below it.
struct TargetSpec {
    std::vector<std::string> include_patterns;
    std::vector<std::string> exclude_patterns;
    std::size_t min_dim = 1;

    void validate() const {
        if (include_patterns.empty()) {
            throw ValidationError("target spec needs at least one include pattern");
        }
    }
};

struct WeightDelta {
    std::string layer_name;
    Matrix delta;

    std::size_t d() const { return delta.rows(); }
    std::size_t k() const { return delta.cols(); }
};

struct SkipEntry {
    std::string name;
    std::string reason;
};

// Every tensor name across both checkpoints lands in exactly one of these
// lists. skipped_zero_delta starts empty; the extraction pipeline moves
// matched entries there once deltas are computed.
struct PairingReport {
    std::vector<std::string> matched;
    std::vector<std::string> only_in_base;
    std::vector<std::string> only_in_ft;
    std::vector<SkipEntry> skipped_non_2d;
    std::vector<SkipEntry> skipped_by_pattern;
    std::vector<SkipEntry> skipped_zero_delta;

    void mark_zero_delta(const std::string& name) {
        auto it = std::find(matched.begin(), matched.end(), name);
        if (it != matched.end()) matched.erase(it);
        skipped_zero_delta.push_back({name, "||delta||_F below zero threshold"});
    }
};

struct LayerPair {
    std::string name;
    TensorRecord base;
    TensorRecord ft;
};

// Glob with `*` (any substring) and `?` (one character), case-sensitive.
inline bool glob_match(const std::string& pattern, const std::string& text) {
    std::size_t p = 0, t = 0;
    std::size_t star = std::string::npos, star_t = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            star_t = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++star_t;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

inline bool matches_target(const TargetSpec& spec, const std::string& name) {
    bool included = false;
    for (const auto& pat : spec.include_patterns) {
        if (glob_match(pat, name)) {
            included = true;
            break;
        }
    }
    if (!included) return false;
    for (const auto& pat : spec.exclude_patterns) {
        if (glob_match(pat, name)) return false;
    }
    return true;
}

// Pair tensors by exact name across the two checkpoints and classify each
// name. A name present in both with different shapes is a hard error: it
// signals the checkpoints do not belong to the same architecture.
inline std::pair<std::vector<LayerPair>, PairingReport> pair_layers(const Checkpoint& base,
                                                                    const Checkpoint& ft,
                                                                    const TargetSpec& spec) {
    spec.validate();
    std::vector<LayerPair> pairs;
    PairingReport report;

    std::set<std::string> all_names;
    for (const auto& [name, rec] : base.tensors) all_names.insert(name);
    for (const auto& [name, rec] : ft.tensors) all_names.insert(name);

    for (const auto& name : all_names) {
        const bool in_base = base.has(name);
        const bool in_ft = ft.has(name);
        if (in_base && !in_ft) {
            report.only_in_base.push_back(name);
            continue;
        }
        if (!in_base && in_ft) {
            report.only_in_ft.push_back(name);
            continue;
        }
        const TensorRecord& b = base.at(name);
        const TensorRecord& f = ft.at(name);
        if (b.shape != f.shape) {
            std::string bs, fs;
            for (auto d : b.shape) bs += std::to_string(d) + " ";
            for (auto d : f.shape) fs += std::to_string(d) + " ";
            throw ShapeMismatch("tensor '" + name + "' has shape [" + bs + "] in base but [" +
                                fs + "] in fine-tuned (wrong checkpoint pairing?)");
        }
        if (!matches_target(spec, name)) {
            report.skipped_by_pattern.push_back({name, "does not match target patterns"});
            continue;
        }
        if (b.shape.size() != 2 || b.shape[0] == 0 || b.shape[1] == 0) {
            std::string dims;
            for (std::size_t i = 0; i < b.shape.size(); ++i) {
                dims += (i ? "x" : "") + std::to_string(b.shape[i]);
            }
            report.skipped_non_2d.push_back({name, "shape [" + dims + "] is not a positive 2-D matrix"});
            continue;
        }
        if (std::min(b.shape[0], b.shape[1]) < spec.min_dim) {
            report.skipped_by_pattern.push_back(
                {name, "min(d,k) = " + std::to_string(std::min(b.shape[0], b.shape[1])) +
                           " below min_dim " + std::to_string(spec.min_dim)});
            continue;
        }
        report.matched.push_back(name);
        pairs.push_back({name, b, f});
    }
    return {std::move(pairs), std::move(report)};
}

// Element-wise w_ft - w_base in double precision.
inline WeightDelta compute_delta(const Matrix& w_base, const Matrix& w_ft,
                                 const std::string& layer_name = "") {
    if (w_base.rows() != w_ft.rows() || w_base.cols() != w_ft.cols()) {
        throw ShapeMismatch("delta for '" + layer_name + "': base is " +
                            std::to_string(w_base.rows()) + "x" + std::to_string(w_base.cols()) +
                            ", fine-tuned is " + std::to_string(w_ft.rows()) + "x" +
                            std::to_string(w_ft.cols()));
    }
    return {layer_name, subtract(w_ft, w_base)};
}

// A delta is treated as zero (layer untouched by fine-tuning) when its norm
// is negligible against the base weight.
inline bool is_zero_delta(const WeightDelta& delta, const Matrix& w_base) {
    return frobenius_norm(delta.delta) <= 1e-12 * frobenius_norm(w_base);
}

} // namespace phlora
