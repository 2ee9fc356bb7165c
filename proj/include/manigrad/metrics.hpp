#pragma once

// Explanation-quality metrics: infidelity (INFD), maximum sensitivity
// (SENS_max), and the structural similarity index (SSIM) on normalized maps.

#include "manigrad/attribution.hpp"
#include "manigrad/rng.hpp"

#include <cmath>
#include <functional>

namespace manigrad {

struct MetricConfig {
    double sigma = 0.2;             // INFD perturbation scale
    std::int64_t samples = 64;      // INFD Monte-Carlo draws
    double radius = 0.1;            // SENS_max infinity-ball radius
    std::int64_t sensSamples = 32;  // SENS_max draws
    std::int64_t ssimWindow = 11;   // SSIM Gaussian window size
    double ssimSigma = 1.5;
    double c1 = 0.01 * 0.01; // SSIM constants for unit dynamic range
    double c2 = 0.03 * 0.03;
    std::uint64_t seed = 2024;

    void validate() const {
        if (sigma <= 0) fail("MetricConfig: sigma must be positive");
        if (samples < 1) fail("MetricConfig: samples must be >= 1");
        if (radius < 0) fail("MetricConfig: radius must be >= 0");
        if (sensSamples < 1) fail("MetricConfig: sensSamples must be >= 1");
        if (ssimWindow < 3 || ssimWindow % 2 == 0)
            fail("MetricConfig: ssimWindow must be odd and >= 3");
        if (ssimSigma <= 0) fail("MetricConfig: ssimSigma must be positive");
    }
};

// Point estimate plus the standard error of its Monte-Carlo estimator.
struct MetricValue {
    double value = 0;
    double se = 0;
};

// INFD = E_eps [ <xi, Phi> - (f(x) - f(x - xi)) ]^2 with xi = x - (x0 + eps),
// eps ~ N(0, sigma^2 I).  Raw signed scores enter the inner product.
template <class Fn>
MetricValue infidelity(const Fn& F, const AttributionMap& phi, const Tensor& x,
                       const Tensor& x0, const MetricConfig& cfg = {}) {
    cfg.validate();
    if (!(phi.scores.shape == x.shape))
        fail("infidelity: map shape " + shape_str(phi.scores.shape) +
             " != input shape " + shape_str(x.shape));
    if (!(x0.shape == x.shape))
        fail("infidelity: baseline shape " + shape_str(x0.shape) +
             " != input shape " + shape_str(x.shape));
    const double fx = F.value(x);
    double acc = 0, acc2 = 0;
    for (std::int64_t m = 0; m < cfg.samples; ++m) {
        Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(m));
        Tensor z0 = x0;
        for (auto& v : z0.data) v += rng.gaussian() * cfg.sigma;
        double dot = 0;
        for (std::size_t i = 0; i < x.data.size(); ++i)
            dot += (x.data[i] - z0.data[i]) * phi.scores.data[i];
        const double t = dot - (fx - F.value(z0));
        acc += t * t;
        acc2 += t * t * t * t;
    }
    const double M = static_cast<double>(cfg.samples);
    MetricValue out;
    out.value = acc / M;
    if (cfg.samples > 1) {
        const double var = std::max(0.0, acc2 / M - out.value * out.value);
        out.se = std::sqrt(var / M);
    }
    return out;
}

// SENS_max = max over draws delta ~ U(infinity-ball of radius r) of
// ||Phi(x + delta) - Phi(x)||_2 on raw scores.  `method` maps an input to
// its AttributionMap; the standard error reported is that of the mean
// deviation (the max itself is the point value).
template <class MapFn>
MetricValue max_sensitivity(const MapFn& method, const Tensor& x,
                            const MetricConfig& cfg = {}) {
    cfg.validate();
    const AttributionMap base = method(x);
    if (!(base.scores.shape == x.shape))
        fail("max_sensitivity: method returned shape " + shape_str(base.scores.shape) +
             " for input shape " + shape_str(x.shape));
    double best = 0, acc = 0, acc2 = 0;
    for (std::int64_t s = 0; s < cfg.sensSamples; ++s) {
        Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(s));
        Tensor xp = x;
        for (auto& v : xp.data) v += rng.uniform(-cfg.radius, cfg.radius);
        const AttributionMap pert = method(xp);
        double d2 = 0;
        for (std::size_t i = 0; i < base.scores.data.size(); ++i) {
            const double d = pert.scores.data[i] - base.scores.data[i];
            d2 += d * d;
        }
        const double dev = std::sqrt(d2);
        best = std::max(best, dev);
        acc += dev;
        acc2 += dev * dev;
    }
    const double S = static_cast<double>(cfg.sensSamples);
    MetricValue out;
    out.value = best;
    if (cfg.sensSamples > 1) {
        const double mean = acc / S;
        const double var = std::max(0.0, acc2 / S - mean * mean);
        out.se = std::sqrt(var / S);
    }
    return out;
}

// Mean local SSIM over all fully in-bounds window positions, Gaussian
// weighting.  Operates on visualization-normalized maps in [0,1].
inline double ssim(const Tensor& a, const Tensor& b, const MetricConfig& cfg = {}) {
    cfg.validate();
    if (!(a.shape == b.shape))
        fail("ssim: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    if (a.shape.size() != 2)
        fail("ssim: maps must be 2-D images, got " + shape_str(a.shape));
    const std::int64_t H = a.shape[0], W = a.shape[1], w = cfg.ssimWindow;
    if (H < w || W < w)
        fail("ssim: image smaller than the " + std::to_string(w) + "x" +
             std::to_string(w) + " window");

    // normalized Gaussian window
    Tensor ker(Shape{w, w});
    {
        const double h = static_cast<double>(w - 1) / 2.0;
        double sum = 0;
        for (std::int64_t i = 0; i < w; ++i)
            for (std::int64_t j = 0; j < w; ++j) {
                const double di = static_cast<double>(i) - h, dj = static_cast<double>(j) - h;
                ker.at(i, j) = std::exp(-0.5 * (di * di + dj * dj) /
                                        (cfg.ssimSigma * cfg.ssimSigma));
                sum += ker.at(i, j);
            }
        for (auto& v : ker.data) v /= sum;
    }

    // The denominators use ma^2 + mb^2 = (ma-mb)^2 + 2*ma*mb and
    // sa + sb = var(a-b) + 2*sab, sharing the doubled cross terms with the
    // numerators so ssim(a, a) == 1.0 holds bitwise even under FMA
    // contraction.
    double total = 0;
    std::int64_t count = 0;
    for (std::int64_t y = 0; y + w <= H; ++y)
        for (std::int64_t x = 0; x + w <= W; ++x) {
            double ma = 0, mb = 0, qab = 0, qd = 0;
            for (std::int64_t i = 0; i < w; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    const double k = ker.at(i, j);
                    const double va = a.at(y + i, x + j), vb = b.at(y + i, x + j);
                    ma += k * va;
                    mb += k * vb;
                    qab += k * va * vb;
                    const double dv = va - vb;
                    qd += k * dv * dv;
                }
            const double md = ma - mb;
            const double cross = ma * mb;
            const double sab = qab - cross;
            const double sd = qd - md * md;
            const double num1 = 2 * cross + cfg.c1, num2 = 2 * sab + cfg.c2;
            total += (num1 * num2) / ((md * md + num1) * (sd + num2));
            ++count;
        }
    return total / static_cast<double>(count);
}

} // namespace manigrad
