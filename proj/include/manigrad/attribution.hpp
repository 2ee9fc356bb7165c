#pragma once

// Feature-attribution methods: generic path attribution plus IG, MIG, EIG,
// Blur IG, Smooth IG, saliency, input x gradient, and guided backprop.  All
// methods attribute one frozen logit (the predicted class of the explained
// input) and return signed per-feature scores in the input's shape.

#include "manigrad/geodesic.hpp"
#include "manigrad/rng.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace manigrad {

enum class PathType { linear_input, latent_linear, latent_geodesic, blur };
enum class QuadRule { left_point, midpoint };

inline const char* path_type_name(PathType p) {
    switch (p) {
        case PathType::linear_input: return "linear_input";
        case PathType::latent_linear: return "latent_linear";
        case PathType::latent_geodesic: return "latent_geodesic";
        case PathType::blur: return "blur";
    }
    return "?";
}

struct AttributionMap {
    Tensor scores;     // same shape as the explained input
    std::string method;
    std::string baseline;
    PathType path = PathType::linear_input;
    std::int64_t steps = 0; // Riemann segments; 0 for pure gradient methods
    std::int64_t cls = -1;  // logit attributed; -1 when not class-based
};

// One frozen classifier logit as a differentiable scalar function of the
// input row.  The attributed class is frozen up front (the native-mode
// prediction of the explained input); `mode` only selects the gradient
// surrogate.
struct LogitFn {
    const Network* net = nullptr;
    std::int64_t cls = 0;
    ActMode mode = ActMode::native;

    std::int64_t logit_index() const { return cls; }

    double value(const Tensor& x) const {
        return net->forward(row_view(x), mode).at(0, cls);
    }
    // rows X [P,D] -> per-row gradient of the logit, [P,D]
    Tensor grads(const Tensor& X) const {
        ForwardTrace tr;
        net->forward(X, mode, &tr);
        Tensor seed = Tensor::zeros({X.shape[0], net->dim_out()});
        for (std::int64_t i = 0; i < X.shape[0]; ++i) seed.at(i, cls) = 1.0;
        return net->input_vjp(tr, seed, mode);
    }
    Tensor grad(const Tensor& x) const { return grads(row_view(x)); }

    static Tensor row_view(const Tensor& x) {
        Tensor r = x;
        r.shape = Shape{1, shape_numel(x.shape)};
        return r;
    }
};

// Freeze the predicted class of x.  Prediction always uses native mode; the
// requested mode applies to gradients only.
inline LogitFn logit_fn(const Network& net, const Tensor& x,
                        ActMode mode = ActMode::native) {
    Tensor y = net.forward(LogitFn::row_view(x), ActMode::native);
    std::int64_t c = 0;
    for (std::int64_t j = 1; j < y.shape[1]; ++j)
        if (y.at(0, j) > y.at(0, c)) c = j;
    return LogitFn{&net, c, mode};
}

namespace detail {
template <class Fn>
std::int64_t fn_cls(const Fn& f) {
    if constexpr (requires { f.logit_index(); }) return f.logit_index();
    return -1;
}
} // namespace detail

// Riemann-sum path attribution over path points given as the rows of a
// [P,D] matrix (P-1 segments).  Left-point rule by default.
template <class Fn>
AttributionMap path_attribution(const Fn& F, const Tensor& pathPoints,
                                QuadRule rule = QuadRule::left_point) {
    if (pathPoints.shape.size() != 2 || pathPoints.shape[0] < 2)
        fail("path_attribution: need a [P,D] matrix with P >= 2 path points, got " +
             shape_str(pathPoints.shape));
    const std::int64_t P = pathPoints.shape[0];
    const std::int64_t D = pathPoints.shape[1];

    Tensor evals(Shape{P - 1, D});
    if (rule == QuadRule::left_point) {
        std::copy_n(pathPoints.data.data(), static_cast<std::size_t>((P - 1) * D),
                    evals.data.data());
    } else {
        for (std::int64_t i = 0; i + 1 < P; ++i)
            for (std::int64_t j = 0; j < D; ++j)
                evals.at(i, j) = 0.5 * (pathPoints.at(i, j) + pathPoints.at(i + 1, j));
    }
    Tensor G = F.grads(evals); // [P-1, D]

    AttributionMap m;
    m.scores = Tensor::zeros({1, D});
    for (std::int64_t i = 0; i + 1 < P; ++i)
        for (std::int64_t j = 0; j < D; ++j)
            m.scores.at(0, j) += G.at(i, j) * (pathPoints.at(i + 1, j) - pathPoints.at(i, j));
    m.method = "path";
    m.steps = P - 1;
    m.cls = detail::fn_cls(F);
    return m;
}

// Same, for a sequence of same-shaped tensors; scores come back in the
// points' shape.
template <class Fn>
AttributionMap path_attribution(const Fn& F, const std::vector<Tensor>& points,
                                QuadRule rule = QuadRule::left_point) {
    if (points.size() < 2) fail("path_attribution: need at least 2 path points");
    for (const Tensor& p : points)
        if (!(p.shape == points[0].shape))
            fail("path_attribution: path points have mismatched shapes " +
                 shape_str(points[0].shape) + " vs " + shape_str(p.shape));
    const std::int64_t P = static_cast<std::int64_t>(points.size());
    const std::int64_t D = shape_numel(points[0].shape);
    Tensor rows(Shape{P, D});
    for (std::int64_t i = 0; i < P; ++i)
        std::copy(points[static_cast<std::size_t>(i)].data.begin(),
                  points[static_cast<std::size_t>(i)].data.end(),
                  rows.data.begin() + static_cast<std::ptrdiff_t>(i * D));
    AttributionMap m = path_attribution(F, rows, rule);
    m.scores.shape = points[0].shape;
    return m;
}

template <class Fn>
AttributionMap integrated_gradients(const Fn& F, const Tensor& x, const Tensor& x0,
                                    std::int64_t N,
                                    QuadRule rule = QuadRule::left_point) {
    if (!(x.shape == x0.shape))
        fail("integrated_gradients: input shape " + shape_str(x.shape) +
             " != baseline shape " + shape_str(x0.shape));
    Tensor a = LogitFn::row_view(x0), b = LogitFn::row_view(x);
    LatentCurve path = curve_init_linear(a, b, N); // straight line, endpoint-exact
    AttributionMap m = path_attribution(F, path.points, rule);
    m.scores.shape = x.shape;
    m.method = "ig";
    m.baseline = "x0";
    m.path = PathType::linear_input;
    return m;
}

// MIG along a latent curve: left-point gradients at the decoded points times
// the decoded increments.  The curve is resampled to N segments when needed.
template <class Fn>
AttributionMap mig(const Fn& F, const Decoder& dec, const LatentCurve& curve,
                   std::int64_t N) {
    curve.check();
    if (curve.dim() != dec.dim_in())
        fail("mig: curve latent dim " + std::to_string(curve.dim()) +
             " != decoder input dim " + std::to_string(dec.dim_in()));
    const LatentCurve& c = curve;
    LatentCurve r;
    if (curve.steps() != N) r = curve_resample(curve, N);
    const Tensor X = dec.fwd(curve.steps() == N ? c.points : r.points); // [N+1, D]
    AttributionMap m = path_attribution(F, X);
    m.method = "mig";
    m.baseline = "g(z0)";
    m.path = PathType::latent_geodesic;
    return m;
}

// EIG: the straight latent segment mapped through the decoder.
template <class Fn>
AttributionMap eig(const Fn& F, const Decoder& dec, const Tensor& z0,
                   const Tensor& zT, std::int64_t N) {
    AttributionMap m = mig(F, dec, curve_init_linear(z0, zT, N), N);
    m.method = "eig";
    m.baseline = "g(z0)";
    m.path = PathType::latent_linear;
    return m;
}

// Truncated discrete Gaussian blur (radius ceil(3 sigma)), separable, with
// weights renormalized over in-bounds taps so constant images are fixed
// points.  sigma <= 0 is the identity.
inline Tensor gaussian_blur(const Tensor& img, double sigma) {
    if (img.shape.size() != 2 || img.shape[0] < 2 || img.shape[1] < 2)
        fail("gaussian_blur: expected an [H,W] image, got " + shape_str(img.shape));
    if (sigma <= 0) return img;
    const std::int64_t H = img.shape[0], W = img.shape[1];
    const std::int64_t r = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    for (std::int64_t i = -r; i <= r; ++i)
        k[static_cast<std::size_t>(i + r)] =
            std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));

    Tensor tmp(Shape{H, W}), out(Shape{H, W});
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
            double acc = 0, wsum = 0;
            for (std::int64_t t = -r; t <= r; ++t) {
                const std::int64_t xx = x + t;
                if (xx < 0 || xx >= W) continue;
                const double w = k[static_cast<std::size_t>(t + r)];
                acc += w * img.at(y, xx);
                wsum += w;
            }
            tmp.at(y, x) = acc / wsum;
        }
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
            double acc = 0, wsum = 0;
            for (std::int64_t t = -r; t <= r; ++t) {
                const std::int64_t yy = y + t;
                if (yy < 0 || yy >= H) continue;
                const double w = k[static_cast<std::size_t>(t + r)];
                acc += w * tmp.at(yy, x);
                wsum += w;
            }
            out.at(y, x) = acc / wsum;
        }
    return out;
}

// Blur IG: path from the fully blurred image to the original, sigma stepped
// down uniformly from maxSigma to 0.
template <class Fn>
AttributionMap blur_ig(const Fn& F, const Tensor& x, double maxSigma,
                       std::int64_t N) {
    if (x.shape.size() != 2 || x.shape[0] < 2 || x.shape[1] < 2)
        fail("blur_ig: input must be an [H,W] image, got " + shape_str(x.shape));
    if (N < 1) fail("blur_ig: N must be >= 1");
    if (maxSigma <= 0) fail("blur_ig: maxSigma must be positive");
    std::vector<Tensor> points(static_cast<std::size_t>(N + 1));
    for (std::int64_t i = 0; i <= N; ++i) {
        const double sigma =
            maxSigma * (1.0 - static_cast<double>(i) / static_cast<double>(N));
        points[static_cast<std::size_t>(i)] = gaussian_blur(x, sigma);
    }
    points[static_cast<std::size_t>(N)] = x; // sigma hits 0 exactly; keep x bitwise
    AttributionMap m = path_attribution(F, points);
    m.method = "blur_ig";
    m.baseline = "blur(sigma=" + std::to_string(maxSigma) + ")";
    m.path = PathType::blur;
    return m;
}

// Pre-drawn noise bank for Smooth IG, one tensor per sample.  Exposed so
// sensitivity metrics can reuse the same draws across nearby inputs.
inline std::vector<Tensor> smooth_ig_noise(Shape shape, std::int64_t samples,
                                           double noiseSigma, std::uint64_t seed) {
    std::vector<Tensor> out(static_cast<std::size_t>(samples));
    for (std::int64_t s = 0; s < samples; ++s) {
        Rng rng(substream_seed(seed, static_cast<std::uint64_t>(s)));
        Tensor e(shape);
        for (auto& v : e.data) v = rng.gaussian() * noiseSigma;
        out[static_cast<std::size_t>(s)] = std::move(e);
    }
    return out;
}

// Mean of IG over noisy copies of x.  Pass `noise` to reuse a common bank;
// otherwise draws are seeded per sample.
template <class Fn>
AttributionMap smooth_ig(const Fn& F, const Tensor& x, const Tensor& x0,
                         std::int64_t N, double noiseSigma, std::int64_t samples,
                         std::uint64_t seed = 7,
                         const std::vector<Tensor>* noise = nullptr) {
    if (samples < 1) fail("smooth_ig: samples must be >= 1");
    std::vector<Tensor> local;
    if (!noise) {
        local = smooth_ig_noise(x.shape, samples, noiseSigma, seed);
        noise = &local;
    }
    if (static_cast<std::int64_t>(noise->size()) < samples)
        fail("smooth_ig: noise bank has " + std::to_string(noise->size()) +
             " draws, need " + std::to_string(samples));
    AttributionMap m;
    m.scores = Tensor::zeros(x.shape);
    for (std::int64_t s = 0; s < samples; ++s) {
        const Tensor& e = (*noise)[static_cast<std::size_t>(s)];
        if (!(e.shape == x.shape))
            fail("smooth_ig: noise shape " + shape_str(e.shape) + " != input shape " +
                 shape_str(x.shape));
        Tensor xs = x;
        for (std::size_t i = 0; i < xs.data.size(); ++i) xs.data[i] += e.data[i];
        AttributionMap ms = integrated_gradients(F, xs, x0, N);
        for (std::size_t i = 0; i < m.scores.data.size(); ++i)
            m.scores.data[i] += ms.scores.data[i];
    }
    for (auto& v : m.scores.data) v /= static_cast<double>(samples);
    m.method = "smooth_ig";
    m.baseline = "x0";
    m.path = PathType::linear_input;
    m.steps = N;
    m.cls = detail::fn_cls(F);
    return m;
}

template <class Fn>
AttributionMap saliency(const Fn& F, const Tensor& x) {
    AttributionMap m;
    m.scores = F.grad(x);
    for (auto& v : m.scores.data) v = std::abs(v);
    m.scores.shape = x.shape;
    m.method = "saliency";
    m.cls = detail::fn_cls(F);
    return m;
}

template <class Fn>
AttributionMap input_x_gradient(const Fn& F, const Tensor& x) {
    AttributionMap m;
    m.scores = F.grad(x);
    for (std::size_t i = 0; i < m.scores.data.size(); ++i) m.scores.data[i] *= x.data[i];
    m.scores.shape = x.shape;
    m.method = "input_x_gradient";
    m.cls = detail::fn_cls(F);
    return m;
}

inline AttributionMap guided_backprop(const LogitFn& F, const Tensor& x) {
    LogitFn G{F.net, F.cls, ActMode::guided};
    AttributionMap m;
    m.scores = G.grad(x);
    m.scores.shape = x.shape;
    m.method = "guided_backprop";
    m.cls = F.cls;
    return m;
}

// Visualization normalization: absolute value, clipped at the 99th
// percentile (sorted |scores| at index floor(0.99 (n-1)), no interpolation),
// scaled to [0,1].  An all-zero map stays all zero.
inline Tensor normalize_map(const Tensor& scores) {
    Tensor out = scores;
    for (auto& v : out.data) v = std::abs(v);
    std::vector<double> sorted = out.data;
    std::sort(sorted.begin(), sorted.end());
    const double thr =
        sorted[static_cast<std::size_t>(0.99 * static_cast<double>(sorted.size() - 1))];
    if (thr <= 0) {
        for (auto& v : out.data) v = 0.0;
        return out;
    }
    for (auto& v : out.data) v = std::min(v, thr) / thr;
    return out;
}

inline double map_sum(const AttributionMap& m) {
    double s = 0;
    for (double v : m.scores.data) s += v;
    return s;
}

// |sum of scores - (F(end) - F(start))|: the completeness gap of a path map.
inline double completeness_gap(const AttributionMap& m, double fStart, double fEnd) {
    return std::abs(map_sum(m) - (fEnd - fStart));
}

} // namespace manigrad
