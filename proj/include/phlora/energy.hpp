#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "phlora/errors.hpp"

namespace phlora {

// Cumulative energy fraction per rank for one layer. cumulative[r-1] is the
// fraction of total squared singular mass captured by the top r directions.
struct EnergyCurve {
    std::string layer_name;
    std::size_t d = 0;
    std::size_t k = 0;
    std::vector<double> sigma_sq;   // descending
    std::vector<double> cumulative; // non-decreasing, last entry 1.0

    static EnergyCurve from_sigma(const std::string& layer, std::size_t d, std::size_t k,
                                  const std::vector<double>& sigma) {
        EnergyCurve c;
        c.layer_name = layer;
        c.d = d;
        c.k = k;
        c.sigma_sq.reserve(sigma.size());
        double total = 0.0;
        for (double s : sigma) {
            c.sigma_sq.push_back(s * s);
            total += s * s;
        }
        c.cumulative.reserve(sigma.size());
        double prefix = 0.0;
        for (std::size_t i = 0; i < c.sigma_sq.size(); ++i) {
            prefix += c.sigma_sq[i];
            // a zero-energy layer is perfectly preserved at every rank
            c.cumulative.push_back(total == 0.0 ? 1.0 : prefix / total);
        }
        if (total != 0.0 && !c.cumulative.empty()) c.cumulative.back() = 1.0;
        return c;
    }

    double at_rank(std::size_t r) const {
        if (cumulative.empty()) return 1.0;
        const std::size_t idx = std::min(r, cumulative.size()) - 1;
        return cumulative[idx];
    }
};

// Fraction of squared singular mass captured by the top r values. Returns 1.0
// for zero total energy; r is clamped to the spectrum length.
inline double preserved_energy(const std::vector<double>& sigma, std::size_t r) {
    if (r < 1) throw ValidationError("rank must be >= 1");
    double total = 0.0;
    for (double s : sigma) total += s * s;
    if (total == 0.0) return 1.0;
    const std::size_t top = std::min(r, sigma.size());
    double prefix = 0.0;
    for (std::size_t i = 0; i < top; ++i) prefix += sigma[i] * sigma[i];
    if (top == sigma.size()) return 1.0;
    return prefix / total;
}

// Smallest rank whose preserved energy reaches tau. A zero-energy spectrum
// selects rank 1.
inline std::size_t select_rank(const std::vector<double>& sigma, double threshold) {
    if (!(threshold > 0.0) || threshold > 1.0) {
        throw InvalidThreshold("energy threshold must be in (0, 1], got " +
                               std::to_string(threshold));
    }
    if (sigma.empty()) return 1;
    double total = 0.0;
    for (double s : sigma) total += s * s;
    if (total == 0.0) return 1;
    double prefix = 0.0;
    for (std::size_t r = 1; r <= sigma.size(); ++r) {
        prefix += sigma[r - 1] * sigma[r - 1];
        const double energy = (r == sigma.size()) ? 1.0 : prefix / total;
        if (energy >= threshold) return r;
    }
    return sigma.size();
}

// Model-level view: per-layer curves, per-probe-rank means, and selected
// ranks when threshold mode was active.
struct EnergyReport {
    std::vector<EnergyCurve> curves;
    std::vector<std::size_t> probe_ranks;
    std::vector<double> model_mean;          // unweighted layer mean per probe
    std::vector<double> model_weighted_mean; // weighted by layer size d*k
    std::map<std::string, std::size_t> selected_ranks; // threshold mode only
};

// Layers shorter than a probe rank contribute their full-rank value 1.0.
inline EnergyReport build_report(std::vector<EnergyCurve> curves,
                                 std::vector<std::size_t> probe_ranks) {
    if (probe_ranks.empty()) throw ValidationError("probe rank list is empty");
    for (std::size_t r : probe_ranks) {
        if (r < 1) throw ValidationError("probe ranks must be positive");
    }
    EnergyReport report;
    report.curves = std::move(curves);
    report.probe_ranks = std::move(probe_ranks);
    for (std::size_t r : report.probe_ranks) {
        double sum = 0.0, wsum = 0.0, wtotal = 0.0;
        for (const auto& c : report.curves) {
            const double e = c.at_rank(r);
            const double w = static_cast<double>(c.d) * static_cast<double>(c.k);
            sum += e;
            wsum += e * w;
            wtotal += w;
        }
        const std::size_t n = report.curves.size();
        report.model_mean.push_back(n == 0 ? 0.0 : sum / static_cast<double>(n));
        report.model_weighted_mean.push_back(wtotal == 0.0 ? 0.0 : wsum / wtotal);
    }
    return report;
}

namespace detail {

inline std::string format_6sig(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

} // namespace detail

// CSV schema: layer,rank,energy with __model_mean__ and
// __model_weighted_mean__ pseudo-layers. Six significant digits.
inline void write_energy_csv(const EnergyReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "layer,rank,energy\n";
    for (const auto& c : report.curves) {
        for (std::size_t r : report.probe_ranks) {
            out << c.layer_name << "," << r << "," << detail::format_6sig(c.at_rank(r)) << "\n";
        }
    }
    for (std::size_t i = 0; i < report.probe_ranks.size(); ++i) {
        out << "__model_mean__," << report.probe_ranks[i] << ","
            << detail::format_6sig(report.model_mean[i]) << "\n";
    }
    for (std::size_t i = 0; i < report.probe_ranks.size(); ++i) {
        out << "__model_weighted_mean__," << report.probe_ranks[i] << ","
            << detail::format_6sig(report.model_weighted_mean[i]) << "\n";
    }
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

// JSON mirror keeps full double precision.
inline nlohmann::json energy_report_json(const EnergyReport& report) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& c : report.curves) {
        nlohmann::json entry;
        entry["layer"] = c.layer_name;
        entry["d"] = c.d;
        entry["k"] = c.k;
        nlohmann::json per_rank = nlohmann::json::array();
        for (std::size_t r : report.probe_ranks) {
            per_rank.push_back({{"rank", r}, {"energy", c.at_rank(r)}});
        }
        entry["energy"] = per_rank;
        if (report.selected_ranks.count(c.layer_name)) {
            entry["selected_rank"] = report.selected_ranks.at(c.layer_name);
        }
        layers.push_back(entry);
    }
    nlohmann::json means = nlohmann::json::array();
    for (std::size_t i = 0; i < report.probe_ranks.size(); ++i) {
        means.push_back({{"rank", report.probe_ranks[i]},
                         {"model_mean", report.model_mean[i]},
                         {"model_weighted_mean", report.model_weighted_mean[i]}});
    }
    return {{"layers", layers}, {"model", means}};
}

inline void write_energy_json(const EnergyReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << energy_report_json(report).dump(2) << "\n";
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

} // namespace phlora
