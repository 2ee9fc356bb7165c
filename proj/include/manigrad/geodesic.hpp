#pragma once
// Discrete geodesics on the decoder-induced manifold: energy, its gradient
// (exact vector-Jacobian form or the encoder-approximated variant), and the
// fixed-endpoint gradient-descent solver with Armijo backtracking.
//
// Conventions, pinned by the finite-difference oracle in the tests:
//   E(z)      = (T/2) sum_i ||g(z_{i+1}) - g(z_i)||^2        (delta t = 1/T)
//   dE/dz_i   = -T * J_g(z_i)^T (g(z_{i+1}) - 2 g(z_i) + g(z_{i-1}))
//   length    = sum_i ||g(z_{i+1}) - g(z_i)||
#include "manifolds.hpp"
#include "tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace manigrad {

struct LatentCurve {
    Tensor points; // [T+1, d]; rows 0 and T are fixed endpoints

    std::int64_t steps() const { return points.shape.empty() ? 0 : points.shape[0] - 1; }
    std::int64_t dim() const { return points.shape.size() == 2 ? points.shape[1] : 0; }

    Tensor point(std::int64_t i) const {
        Tensor z(Shape{1, dim()});
        for (std::int64_t j = 0; j < dim(); ++j) z.at(0, j) = points.at(i, j);
        return z;
    }
    void check() const {
        if (points.shape.size() != 2 || steps() < 2)
            fail("LatentCurve: need a [T+1,d] tensor with T >= 2");
    }
};

inline LatentCurve curve_init_linear(const Tensor& z0, const Tensor& zT, std::int64_t T) {
    if (T < 2) fail("curve_init_linear: T must be >= 2");
    if (!(z0.shape == zT.shape) || z0.shape.size() != 2 || z0.shape[0] != 1)
        fail("curve_init_linear: endpoints must be matching [1,d] tensors");
    const std::int64_t d = z0.shape[1];
    LatentCurve c;
    c.points = Tensor(Shape{T + 1, d});
    for (std::int64_t i = 0; i <= T; ++i) {
        const double a = static_cast<double>(i) / static_cast<double>(T);
        for (std::int64_t j = 0; j < d; ++j)
            c.points.at(i, j) = z0.at(0, j) + a * (zT.at(0, j) - z0.at(0, j));
    }
    // endpoints exactly, immune to rounding in the interpolation above
    for (std::int64_t j = 0; j < d; ++j) {
        c.points.at(0, j) = z0.at(0, j);
        c.points.at(T, j) = zT.at(0, j);
    }
    return c;
}

// Piecewise-linear resample in the index parameter: the point at fraction
// s = j/newT of the new curve interpolates the old curve at index s*T.
inline LatentCurve curve_resample(const LatentCurve& c, std::int64_t newT) {
    c.check();
    if (newT < 2) fail("curve_resample: T must be >= 2");
    const std::int64_t T = c.steps(), d = c.dim();
    LatentCurve out;
    out.points = Tensor(Shape{newT + 1, d});
    for (std::int64_t j = 0; j <= newT; ++j) {
        const double s = static_cast<double>(j) / static_cast<double>(newT) *
                         static_cast<double>(T);
        std::int64_t i0 = static_cast<std::int64_t>(std::floor(s));
        if (i0 >= T) i0 = T - 1;
        const double a = s - static_cast<double>(i0);
        for (std::int64_t k = 0; k < d; ++k)
            out.points.at(j, k) =
                (1.0 - a) * c.points.at(i0, k) + a * c.points.at(i0 + 1, k);
    }
    for (std::int64_t k = 0; k < d; ++k) {
        out.points.at(0, k) = c.points.at(0, k);
        out.points.at(newT, k) = c.points.at(T, k);
    }
    return out;
}

namespace detail {

// Sum of squared row differences of G = decoder(points), and the per-segment
// norms when asked.
inline double seg_sq_sum(const Tensor& G, std::vector<double>* seg_norms = nullptr) {
    const std::int64_t T1 = G.shape[0], D = G.shape[1];
    double acc = 0;
    if (seg_norms) seg_norms->clear();
    for (std::int64_t i = 0; i + 1 < T1; ++i) {
        double s = 0;
        for (std::int64_t j = 0; j < D; ++j) {
            const double dd = G.at(i + 1, j) - G.at(i, j);
            s += dd * dd;
        }
        acc += s;
        if (seg_norms) seg_norms->push_back(std::sqrt(s));
    }
    return acc;
}

} // namespace detail

inline double discrete_energy(const LatentCurve& c, const Decoder& dec) {
    c.check();
    Tensor G = dec.fwd(c.points);
    return 0.5 * static_cast<double>(c.steps()) * detail::seg_sq_sum(G);
}

inline double curve_length(const LatentCurve& c, const Decoder& dec) {
    c.check();
    Tensor G = dec.fwd(c.points);
    std::vector<double> seg;
    detail::seg_sq_sum(G, &seg);
    double L = 0;
    for (double s : seg) L += s;
    return L;
}

// Coefficient of variation of the mapped segment lengths; ~0 at constant speed.
inline double speed_variation(const LatentCurve& c, const Decoder& dec) {
    c.check();
    Tensor G = dec.fwd(c.points);
    std::vector<double> seg;
    detail::seg_sq_sum(G, &seg);
    double mean = 0;
    for (double s : seg) mean += s;
    mean /= static_cast<double>(seg.size());
    if (mean == 0) return 0;
    double var = 0;
    for (double s : seg) var += (s - mean) * (s - mean);
    var /= static_cast<double>(seg.size());
    return std::sqrt(var) / mean;
}

enum class GradMode { exact, encoder_approx };

// Gradient of the discrete energy for the interior points z_1..z_{T-1},
// returned as a [T-1, d] tensor. In encoder_approx mode the decoder
// transpose-Jacobian is replaced by the encoder Jacobian (the paper's Eq.-(5)
// surrogate), evaluated at the decoded points.
inline Tensor energy_gradient(const LatentCurve& c, const Decoder& dec,
                              GradMode mode = GradMode::exact,
                              const Decoder* encoder = nullptr,
                              const Tensor* fwd_cache = nullptr) {
    c.check();
    if (mode == GradMode::encoder_approx && !encoder)
        fail("energy_gradient: encoder-approx mode needs an encoder");
    const std::int64_t T = c.steps(), d = c.dim();
    Tensor G = fwd_cache ? *fwd_cache : dec.fwd(c.points);
    const std::int64_t D = G.shape[1];

    Tensor R(Shape{T - 1, D}); // -T * (g_{i+1} - 2 g_i + g_{i-1}), i = 1..T-1
    for (std::int64_t i = 1; i < T; ++i)
        for (std::int64_t j = 0; j < D; ++j)
            R.at(i - 1, j) = -static_cast<double>(T) *
                             (G.at(i + 1, j) - 2.0 * G.at(i, j) + G.at(i - 1, j));

    Tensor Zin(Shape{T - 1, d});
    for (std::int64_t i = 1; i < T; ++i)
        for (std::int64_t j = 0; j < d; ++j) Zin.at(i - 1, j) = c.points.at(i, j);

    if (mode == GradMode::exact) return dec.vjp(Zin, R);

    // encoder-approx: eta_i = J_e(g(z_i)) * R_i
    Tensor Xin(Shape{T - 1, D});
    for (std::int64_t i = 1; i < T; ++i)
        for (std::int64_t j = 0; j < D; ++j) Xin.at(i - 1, j) = G.at(i, j);
    if (encoder->dim_in() != D || encoder->dim_out() != d)
        fail("energy_gradient: encoder dimensions do not invert the decoder");
    return encoder->jvp(Xin, R);
}

struct GeodesicOptions {
    std::int64_t T = 16;
    std::int64_t maxIterations = 300;
    double tolerance = 1e-3;   // stop when |stat_k - stat_{k-1}| <= tolerance * stat_k
    double armijoInit = 1.0;
    double armijoShrink = 0.5;
    double armijoC = 1e-4;
    std::int64_t maxBacktracks = 30;
    GradMode mode = GradMode::exact;
    const Decoder* encoder = nullptr;       // required for encoder_approx
    const LatentCurve* warmStart = nullptr; // optional; endpoints are reset
};

struct GeodesicReport {
    bool converged = false;
    std::int64_t iterations = 0; // accepted descent steps
    double finalEnergy = 0;
    std::vector<double> energyHistory; // initial energy, then one entry per accepted step
    double speedVariation = 0;
    double gradStat = 0; // sum_i ||dE/dz_i||^2 at exit
    std::string message;
};

struct GeodesicResult {
    LatentCurve curve;
    GeodesicReport report;
};

inline GeodesicResult geodesic_solve(const Tensor& z0, const Tensor& zT,
                                     const Decoder& dec,
                                     const GeodesicOptions& opt = {}) {
    if (!(z0.shape == zT.shape) || z0.shape.size() != 2 || z0.shape[0] != 1)
        fail("geodesic_solve: endpoints must be matching [1,d] tensors");
    if (z0.shape[1] != dec.dim_in())
        fail("geodesic_solve: endpoint dimension != decoder latent dimension");
    if (opt.T < 2) fail("geodesic_solve: T must be >= 2");

    GeodesicResult res;
    if (opt.warmStart) {
        opt.warmStart->check();
        if (opt.warmStart->steps() != opt.T || opt.warmStart->dim() != z0.shape[1])
            fail("geodesic_solve: warm start has wrong shape");
        res.curve = *opt.warmStart;
        for (std::int64_t j = 0; j < z0.shape[1]; ++j) {
            res.curve.points.at(0, j) = z0.at(0, j);
            res.curve.points.at(opt.T, j) = zT.at(0, j);
        }
    } else {
        res.curve = curve_init_linear(z0, zT, opt.T);
    }

    const std::int64_t T = opt.T, d = z0.shape[1];

    // Degenerate endpoints: the constant curve is already the geodesic.
    if (max_abs_diff(z0, zT) == 0.0 && !opt.warmStart) {
        res.report.converged = true;
        res.report.finalEnergy = 0;
        res.report.energyHistory = {0.0};
        res.report.message = "degenerate endpoints";
        return res;
    }

    Tensor G = dec.fwd(res.curve.points);
    double E = 0.5 * static_cast<double>(T) * detail::seg_sq_sum(G);
    res.report.energyHistory.push_back(E);

    double prev_stat = -1.0;
    for (std::int64_t k = 0; k < opt.maxIterations; ++k) {
        Tensor Grd = energy_gradient(res.curve, dec, opt.mode, opt.encoder, &G);
        double stat = 0;
        for (double v : Grd.data) stat += v * v;
        res.report.gradStat = stat;

        // Exact or near-exact starts sit at the f64 noise floor, where the
        // relative-change rule chatters; call that converged outright.
        if (stat <= 1e-20 * std::max(1.0, E * E)) {
            res.report.converged = true;
            res.report.message = "gradient vanished";
            break;
        }
        if (prev_stat >= 0 && std::abs(stat - prev_stat) <= opt.tolerance * stat) {
            res.report.converged = true;
            res.report.message = "gradient statistic stabilized";
            break;
        }
        prev_stat = stat;

        // Armijo backtracking along -Grd.
        double alpha = opt.armijoInit;
        bool accepted = false;
        LatentCurve trial = res.curve;
        for (std::int64_t b = 0; b <= opt.maxBacktracks; ++b) {
            for (std::int64_t i = 1; i < T; ++i)
                for (std::int64_t j = 0; j < d; ++j)
                    trial.points.at(i, j) =
                        res.curve.points.at(i, j) - alpha * Grd.at(i - 1, j);
            Tensor Gtrial = dec.fwd(trial.points);
            const double Etrial =
                0.5 * static_cast<double>(T) * detail::seg_sq_sum(Gtrial);
            if (Etrial <= E - opt.armijoC * alpha * stat) {
                res.curve.points = trial.points;
                G = std::move(Gtrial);
                E = Etrial;
                accepted = true;
                break;
            }
            alpha *= opt.armijoShrink;
        }
        if (!accepted) {
            res.report.converged = false;
            res.report.message = "line search failed";
            break;
        }
        ++res.report.iterations;
        res.report.energyHistory.push_back(E);
        if (k == opt.maxIterations - 1) res.report.message = "iteration cap reached";
    }

    res.report.finalEnergy = E;
    res.report.speedVariation = speed_variation(res.curve, dec);
    return res;
}

} // namespace manigrad
