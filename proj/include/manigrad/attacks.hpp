#pragma once

// Attributional attacks: manipulate the input so its attribution map moves
// (targeted) or its top-k mass collapses (top-k), while the prediction stays
// put.  The attacked attribution is differentiated end to end by recording
// the IG Riemann sum on the tape with ReLU swapped for softplus, then taking
// grad-of-grad through the recorded backward pass.

#include "manigrad/attribution.hpp"
#include "manigrad/metrics.hpp"

#include <algorithm>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace manigrad {

struct AttackConfig {
    double epsilon = 0.1;     // infinity-norm budget
    double gamma = 10.0;      // class-preservation weight (targeted)
    std::int64_t steps = 200; // PGD iterations
    double stepSize = 0.0;    // 0 -> 2.5 * epsilon / steps
    std::string attributionMethod = "ig"; // only differentiable method
    std::int64_t N = 32;      // path steps inside the attacked attribution
    double baselineValue = -1.0; // constant IG baseline (black image)
    std::uint64_t seed = 2024;

    void validate() const {
        if (epsilon < 0) fail("AttackConfig: epsilon must be >= 0");
        if (steps < 0) fail("AttackConfig: steps must be >= 0");
        if (stepSize < 0) fail("AttackConfig: stepSize must be >= 0");
        if (N < 1) fail("AttackConfig: N must be >= 1");
        if (attributionMethod != "ig")
            fail("AttackConfig: only attributionMethod=\"ig\" is differentiable; got \"" +
                 attributionMethod + "\"");
    }
    double step_size() const {
        if (stepSize > 0) return stepSize;
        return steps > 0 ? 2.5 * epsilon / static_cast<double>(steps) : 0.0;
    }
};

struct AttackResult {
    Tensor x;    // original input, kept so downstream evaluation can reuse it
    Tensor xAdv;
    std::vector<double> lossHistory; // objective per iterate; [0] is at x
    double linfNorm = 0;             // ||xAdv - x||_inf
    bool classPreserved = true;      // native argmax unchanged at xAdv
    // targeted: ||I(xAdv) - I(xTarget)||_2^2; top-k: ||I(xAdv) - I(x)||_2^2,
    // both on native-mode maps.
    double attributionDistance = 0;
};

namespace detail {

// Left-point IG of the class-`cls` logit, recorded on the tape in softplus
// swap mode so the result stays differentiable wrt `x` (grad through the
// emitted backward nodes is exact second order).
inline Var tape_ig(Tape& t, const Network& net, Var x, Var x0, std::int64_t cls,
                   std::int64_t N) {
    const std::int64_t D = x.shape()[1];
    Tensor ts(Shape{N, 1});
    for (std::int64_t i = 0; i < N; ++i)
        ts.at(i) = static_cast<double>(i) / static_cast<double>(N);
    Var X0r = bcast_rows(x0, N);
    Var path = add(X0r, mul(bcast_cols(t.leaf(std::move(ts)), D),
                            sub(bcast_rows(x, N), X0r)));
    Var logits = net.forward_tape(t, path, ActMode::softplus_swap);
    Var y = sum_all(slice_cols(logits, cls, 1));
    Var G = t.grad(y, {path})[0];
    return mul(sub(x, x0), scale(sum_rows(G), 1.0 / static_cast<double>(N)));
}

inline Tensor black_like(const Tensor& x, double fill) {
    Tensor t(x.shape);
    for (auto& v : t.data) v = fill;
    return t;
}

// Swap-mode IG map as a plain tensor (for freezing attack targets).
inline Tensor swap_ig_value(const Network& net, const Tensor& x, std::int64_t cls,
                            const AttackConfig& cfg) {
    Tape t;
    Var xv = t.leaf(LogitFn::row_view(x));
    Var x0 = t.leaf(black_like(LogitFn::row_view(x), cfg.baselineValue));
    return tape_ig(t, net, xv, x0, cls, cfg.N).val();
}

// Targeted objective L = ||IG(x) - Itgt||^2 + gamma ||F(x) - Fx||^2 in swap
// mode; writes dL/dx into *g when non-null.
inline double targeted_loss(const Network& net, const Tensor& cur, const Tensor& Itgt,
                            const Tensor& Fx, std::int64_t cls, const AttackConfig& cfg,
                            Tensor* g = nullptr) {
    Tape t;
    Var xv = t.leaf(LogitFn::row_view(cur));
    Var x0 = t.leaf(black_like(LogitFn::row_view(cur), cfg.baselineValue));
    Var ig = tape_ig(t, net, xv, x0, cls, cfg.N);
    Var loss = sum_all(square(sub(ig, t.leaf(Itgt))));
    if (cfg.gamma != 0) {
        Var dF = sub(net.forward_tape(t, xv, ActMode::softplus_swap), t.leaf(Fx));
        loss = add(loss, scale(sum_all(square(dF)), cfg.gamma));
    }
    if (g) *g = t.grad(loss, {xv})[0].val();
    return loss.val().at(0);
}

// Top-k objective C = sum_{j in K} IG_j(x) in swap mode.
inline double topk_loss(const Network& net, const Tensor& cur, const Tensor& mask,
                        std::int64_t cls, const AttackConfig& cfg, Tensor* g = nullptr) {
    Tape t;
    Var xv = t.leaf(LogitFn::row_view(cur));
    Var x0 = t.leaf(black_like(LogitFn::row_view(cur), cfg.baselineValue));
    Var ig = tape_ig(t, net, xv, x0, cls, cfg.N);
    Var obj = sum_all(mul(ig, t.leaf(mask)));
    if (g) *g = t.grad(obj, {xv})[0].val();
    return obj.val().at(0);
}

inline std::int64_t native_argmax(const Network& net, const Tensor& x) {
    Tensor y = net.forward(LogitFn::row_view(x), ActMode::native);
    std::int64_t c = 0;
    for (std::int64_t j = 1; j < y.shape[1]; ++j)
        if (y.at(0, j) > y.at(0, c)) c = j;
    return c;
}

// One PGD sign step followed by the exact projection onto the epsilon
// infinity-ball around x intersected with the data range [-1, 1].
inline void pgd_step(Tensor& cur, const Tensor& g, const Tensor& x, double alpha,
                     double eps) {
    for (std::size_t i = 0; i < cur.data.size(); ++i) {
        const double s = g.data[i] > 0 ? 1.0 : (g.data[i] < 0 ? -1.0 : 0.0);
        double v = cur.data[i] - alpha * s;
        v = std::clamp(v, x.data[i] - eps, x.data[i] + eps);
        cur.data[i] = std::clamp(v, -1.0, 1.0);
    }
}

inline double linf_dist(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline double sq_l2_diff(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s;
}

} // namespace detail

// Drives the IG map of x toward the IG map of xTarget inside the epsilon
// ball, keeping the prediction soft-constrained via gamma.  The attacked
// class is the native prediction at x, frozen for the whole run; I(xTarget)
// is precomputed once in swap mode.
inline AttackResult targeted_attack(const Network& net, const Tensor& x,
                                    const Tensor& xTarget, const AttackConfig& cfg = {}) {
    cfg.validate();
    if (!(LogitFn::row_view(x).shape == LogitFn::row_view(xTarget).shape))
        fail("targeted_attack: x and xTarget shapes differ");

    const std::int64_t cls = detail::native_argmax(net, x);
    const Tensor xRow = LogitFn::row_view(x);
    const Tensor Itgt = detail::swap_ig_value(net, xTarget, cls, cfg);
    const Tensor Fx = net.forward(xRow, ActMode::softplus_swap);

    AttackResult res;
    res.x = x;
    Tensor cur = xRow;
    Tensor best = xRow;
    Tensor g;
    double L = detail::targeted_loss(net, cur, Itgt, Fx, cls, cfg,
                                     cfg.steps > 0 ? &g : nullptr);
    double bestL = L;
    res.lossHistory.push_back(L);
    const double alpha = cfg.step_size();
    for (std::int64_t k = 0; k < cfg.steps; ++k) {
        detail::pgd_step(cur, g, xRow, alpha, cfg.epsilon);
        L = detail::targeted_loss(net, cur, Itgt, Fx, cls, cfg,
                                  k + 1 < cfg.steps ? &g : nullptr);
        res.lossHistory.push_back(L);
        if (L < bestL) {
            bestL = L;
            best = cur;
        }
    }

    res.xAdv = best;
    res.xAdv.shape = x.shape;
    res.linfNorm = detail::linf_dist(best, xRow);
    res.classPreserved = detail::native_argmax(net, res.xAdv) == cls;
    LogitFn F{&net, cls, ActMode::native};
    const Tensor x0 = detail::black_like(xRow, cfg.baselineValue);
    res.attributionDistance =
        detail::sq_l2_diff(integrated_gradients(F, LogitFn::row_view(res.xAdv), x0, cfg.N).scores,
                           integrated_gradients(F, LogitFn::row_view(xTarget), x0, cfg.N).scores);
    return res;
}

// Minimizes the attribution mass on the top-k features of the original map.
// K is frozen from the native-mode I(x); iterates that flip the native class
// are rejected when tracking the best objective.
inline AttackResult topk_attack(const Network& net, const Tensor& x, std::int64_t k,
                                const AttackConfig& cfg = {}) {
    cfg.validate();
    const Tensor xRow = LogitFn::row_view(x);
    const std::int64_t D = xRow.shape[1];
    if (k < 1 || k > D)
        fail("topk_attack: k must be in [1, " + std::to_string(D) + "]");

    const std::int64_t cls = detail::native_argmax(net, x);
    LogitFn F{&net, cls, ActMode::native};
    const Tensor x0 = detail::black_like(xRow, cfg.baselineValue);
    const Tensor I0 = integrated_gradients(F, xRow, x0, cfg.N).scores;

    // top-k indices of I(x) by score
    std::vector<std::int64_t> idx(static_cast<std::size_t>(D));
    for (std::int64_t i = 0; i < D; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                      [&](std::int64_t a, std::int64_t b) {
                          return I0.data[static_cast<std::size_t>(a)] >
                                 I0.data[static_cast<std::size_t>(b)];
                      });
    Tensor mask(Shape{1, D});
    for (std::int64_t i = 0; i < k; ++i)
        mask.at(idx[static_cast<std::size_t>(i)]) = 1.0;

    AttackResult res;
    res.x = x;
    Tensor cur = xRow;
    Tensor best = xRow;
    Tensor g;
    double L = detail::topk_loss(net, cur, mask, cls, cfg, cfg.steps > 0 ? &g : nullptr);
    double bestL = L;
    res.lossHistory.push_back(L);
    const double alpha = cfg.step_size();
    for (std::int64_t s = 0; s < cfg.steps; ++s) {
        detail::pgd_step(cur, g, xRow, alpha, cfg.epsilon);
        L = detail::topk_loss(net, cur, mask, cls, cfg, s + 1 < cfg.steps ? &g : nullptr);
        res.lossHistory.push_back(L);
        if (L < bestL && detail::native_argmax(net, cur) == cls) {
            bestL = L;
            best = cur;
        }
    }

    res.xAdv = best;
    res.xAdv.shape = x.shape;
    res.linfNorm = detail::linf_dist(best, xRow);
    res.classPreserved = detail::native_argmax(net, res.xAdv) == cls;
    res.attributionDistance = detail::sq_l2_diff(
        integrated_gradients(F, LogitFn::row_view(res.xAdv), x0, cfg.N).scores, I0);
    return res;
}

struct RobustnessRow {
    std::int64_t inputId = 0;
    std::string method;
    double ssi = 0;
    bool classPreserved = true;
};

using MethodFn = std::function<AttributionMap(const Tensor&)>;

// For each attacked input and each attribution method, the SSIM between the
// visualization-normalized maps of x and xAdv, viewed as [H,W] images.
inline std::vector<RobustnessRow> evaluate_robustness(
    const std::vector<std::pair<std::string, MethodFn>>& methods,
    const std::vector<AttackResult>& results, std::int64_t H, std::int64_t W,
    const MetricConfig& cfg = {}) {
    std::vector<RobustnessRow> rows;
    rows.reserve(methods.size() * results.size());
    auto as_image = [&](const AttributionMap& m) {
        Tensor img = normalize_map(m.scores);
        if (shape_numel(img.shape) != H * W)
            fail("evaluate_robustness: map has " + std::to_string(shape_numel(img.shape)) +
                 " elements, wanted " + std::to_string(H * W));
        img.shape = Shape{H, W};
        return img;
    };
    for (std::size_t i = 0; i < results.size(); ++i) {
        const AttackResult& r = results[i];
        for (const auto& [name, fn] : methods) {
            RobustnessRow row;
            row.inputId = static_cast<std::int64_t>(i);
            row.method = name;
            row.ssi = ssim(as_image(fn(r.x)), as_image(fn(r.xAdv)), cfg);
            row.classPreserved = r.classPreserved;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

} // namespace manigrad
