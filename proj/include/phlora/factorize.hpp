#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "phlora/delta.hpp"
#include "phlora/errors.hpp"
#include "phlora/matrix.hpp"
#include "phlora/svd.hpp"

namespace phlora {

// Low-rank factors for one layer: delta ~ b * a with the singular values
// split evenly between the two factors, so column i of b and row i of a each
// carry sqrt(sigma_i) of scale.
struct LoraFactors {
    std::string layer_name;
    Matrix a;                          // r x k
    Matrix b;                          // d x r
    std::size_t rank = 0;
    std::vector<double> retained_sigma; // descending, length r
    double total_sq_energy = 0.0;       // sum of sigma_i^2 over the full spectrum
    double scale = 1.0;                 // alpha / r; 1 for adapters produced here
    bool sigma_is_estimate = false;     // true when sigma was recovered from factor norms
    double storage_eps = 0.0;           // unit roundoff of the on-disk factors; 0 in memory

    // b * a, including the effective scale.
    Matrix apply() const {
        Matrix ba = matmul(b, a);
        return scale == 1.0 ? ba : phlora::scale(ba, scale);
    }
};

// Builds factors from the leading r triplets of an already-computed SVD.
inline LoraFactors factors_from_svd(const WeightDelta& delta, const SvdResult& svd,
                                    std::size_t r) {
    const std::size_t eff_r = std::min(r, svd.sigma.size());
    LoraFactors f;
    f.layer_name = delta.layer_name;
    f.rank = eff_r;
    f.retained_sigma.assign(svd.sigma.begin(), svd.sigma.begin() + eff_r);
    // Frobenius identity: total energy equals ||delta||_F^2 without needing
    // the full spectrum, which the randomized path never computes.
    f.total_sq_energy = frobenius_norm_sq(delta.delta);

    f.b = Matrix(delta.d(), eff_r);
    f.a = Matrix(eff_r, delta.k());
    for (std::size_t j = 0; j < eff_r; ++j) {
        const double root = std::sqrt(svd.sigma[j]);
        for (std::size_t i = 0; i < delta.d(); ++i) f.b(i, j) = svd.u(i, j) * root;
        for (std::size_t i = 0; i < delta.k(); ++i) f.a(j, i) = svd.vt(j, i) * root;
    }
    return f;
}

// Split a truncated SVD into balanced LoRA factors:
//   b = u_r * diag(sqrt(sigma_r)),  a = diag(sqrt(sigma_r)) * vt_r.
inline LoraFactors factorize(const WeightDelta& delta, std::size_t r,
                             SvdMethod method = SvdMethod::Exact,
                             std::uint64_t seed = 42,
                             std::vector<std::string>* warnings = nullptr) {
    if (r < 1) throw ValidationError("rank must be >= 1 for layer '" + delta.layer_name + "'");
    SvdResult svd;
    try {
        svd = svd_truncated(delta.delta, r, method, seed, warnings);
    } catch (const ConvergenceFailure& e) {
        throw ConvergenceFailure(std::string(e.what()) + " (layer '" + delta.layer_name + "')");
    }
    return factors_from_svd(delta, svd, svd.sigma.size());
}

struct ReconstructionError {
    double abs_frobenius = 0.0;
    double rel_frobenius = 0.0;
};

// ||delta - b*a||_F, and the same relative to ||delta||_F (0 for a zero delta).
inline ReconstructionError reconstruction_error(const WeightDelta& delta, const LoraFactors& f) {
    if (f.b.rows() != delta.d() || f.a.cols() != delta.k()) {
        throw ShapeMismatch("factors for '" + f.layer_name + "' do not match delta " +
                            std::to_string(delta.d()) + "x" + std::to_string(delta.k()));
    }
    const double abs = frobenius_norm(subtract(delta.delta, f.apply()));
    const double denom = frobenius_norm(delta.delta);
    return {abs, denom == 0.0 ? 0.0 : abs / denom};
}

// w_base + scale * (b * a).
inline Matrix merge(const Matrix& w_base, const LoraFactors& f) {
    if (f.b.rows() != w_base.rows() || f.a.cols() != w_base.cols()) {
        throw ShapeMismatch("merge for '" + f.layer_name + "': factors give " +
                            std::to_string(f.b.rows()) + "x" + std::to_string(f.a.cols()) +
                            " but base is " + std::to_string(w_base.rows()) + "x" +
                            std::to_string(w_base.cols()));
    }
    return add(w_base, f.apply());
}

} // namespace phlora
