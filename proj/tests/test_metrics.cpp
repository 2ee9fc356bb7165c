#include "manigrad/metrics.hpp"
#include "manigrad/network.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace manigrad;

namespace {

struct LinF { // F(x) = w.x + b
    Tensor w;
    double b = 0.3;
    double value(const Tensor& x) const {
        double s = b;
        for (std::size_t i = 0; i < x.data.size(); ++i) s += w.data[i] * x.data[i];
        return s;
    }
};

struct LinProblem {
    LinF F;
    Tensor x, x0;
    LinProblem() : x(Shape{1, 8}), x0(Shape{1, 8}) {
        Rng rng(5);
        F.w = Tensor(Shape{1, 8});
        for (auto& v : F.w.data) v = rng.gaussian();
        for (auto& v : x.data) v = rng.uniform(-1, 1);
        for (auto& v : x0.data) v = rng.uniform(-0.2, 0.2);
    }
    // closed-form IG of a linear model: w * (x - x0)
    AttributionMap ig(const Tensor& xx) const {
        AttributionMap m;
        m.scores = Tensor(xx.shape);
        for (std::size_t i = 0; i < xx.data.size(); ++i)
            m.scores.data[i] = F.w.data[i] * (xx.data[i] - x0.data[i]);
        m.method = "ig";
        return m;
    }
};

Tensor half_plane(std::int64_t H, std::int64_t W, bool splitCols) {
    Tensor t(Shape{H, W});
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            t.at(i, j) = (splitCols ? j < W / 2 : i < H / 2) ? 1.0 : 0.0;
    return t;
}

Tensor smooth_map(std::int64_t H, std::int64_t W, double fy, double fx) {
    Tensor t(Shape{H, W});
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            t.at(i, j) = 0.5 + 0.5 * std::sin(fy * static_cast<double>(i)) *
                                   std::cos(fx * static_cast<double>(j));
    return t;
}

} // namespace

TEST_CASE("MetricConfig validation") {
    MetricConfig ok;
    REQUIRE_NOTHROW(ok.validate());

    MetricConfig c = ok;
    c.sigma = 0.0;
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.samples = 0;
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.radius = -0.1;
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.sensSamples = 0;
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.ssimWindow = 10; // even
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.ssimWindow = 1; // too small
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.ssimSigma = 0.0;
    REQUIRE_THROWS_AS(c.validate(), Error);
}

TEST_CASE("infidelity: exact gradient of a linear model scores zero") {
    LinProblem P;
    AttributionMap grad;
    grad.scores = P.F.w;
    grad.method = "gradient";

    MetricConfig cfg;
    MetricValue mv = infidelity(P.F, grad, P.x, P.x0, cfg);
    // <xi, w> == f(x) - f(x - xi) for every draw; only rounding survives
    REQUIRE(mv.value >= 0.0);
    REQUIRE(mv.value <= 1e-28);

    cfg.samples = 1; // single draw: still zero, and se degenerates to 0
    MetricValue one = infidelity(P.F, grad, P.x, P.x0, cfg);
    REQUIRE(one.value <= 1e-28);
    REQUIRE(one.se == 0.0);
}

TEST_CASE("infidelity: zero map measures the prediction swing") {
    LinProblem P;
    AttributionMap zero;
    zero.scores = Tensor(Shape{1, 8});
    zero.method = "zero";

    MetricConfig cfg;
    MetricValue mv = infidelity(P.F, zero, P.x, P.x0, cfg);
    REQUIRE(mv.value == Catch::Approx(2.548891).epsilon(1e-5));
    REQUIRE(mv.se == Catch::Approx(0.250317).epsilon(1e-4));
    REQUIRE(mv.value > 0.0);
    REQUIRE(mv.se > 0.0);

    // matches a by-hand replay of the same substreams
    double acc = 0, acc2 = 0;
    for (std::int64_t m = 0; m < cfg.samples; ++m) {
        Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(m));
        Tensor z0 = P.x0;
        for (auto& v : z0.data) v += rng.gaussian() * cfg.sigma;
        const double t = -(P.F.value(P.x) - P.F.value(z0)); // <xi, 0> - df
        acc += t * t;
        acc2 += t * t * t * t;
    }
    const double M = static_cast<double>(cfg.samples);
    const double want = acc / M;
    REQUIRE(mv.value == want);
    REQUIRE(mv.se == std::sqrt(std::max(0.0, acc2 / M - want * want) / M));
}

TEST_CASE("infidelity: deterministic per seed, seed-sensitive") {
    LinProblem P;
    AttributionMap zero;
    zero.scores = Tensor(Shape{1, 8});

    MetricConfig cfg;
    MetricValue a = infidelity(P.F, zero, P.x, P.x0, cfg);
    MetricValue b = infidelity(P.F, zero, P.x, P.x0, cfg);
    REQUIRE(a.value == b.value);
    REQUIRE(a.se == b.se);

    cfg.seed = 999;
    REQUIRE(infidelity(P.F, zero, P.x, P.x0, cfg).value != a.value);
}

TEST_CASE("infidelity: shape guards") {
    LinProblem P;
    AttributionMap bad;
    bad.scores = Tensor(Shape{1, 4});
    REQUIRE_THROWS_AS(infidelity(P.F, bad, P.x, P.x0, MetricConfig{}), Error);

    AttributionMap ok;
    ok.scores = Tensor(Shape{1, 8});
    Tensor shortBase(Shape{1, 4});
    REQUIRE_THROWS_AS(infidelity(P.F, ok, P.x, shortBase, MetricConfig{}), Error);
}

TEST_CASE("max_sensitivity: zero radius samples the same point") {
    LinProblem P;
    MetricConfig cfg;
    cfg.radius = 0.0;
    MetricValue mv = max_sensitivity([&](const Tensor& xx) { return P.ig(xx); }, P.x, cfg);
    REQUIRE(mv.value == 0.0);
    REQUIRE(mv.se == 0.0);
}

TEST_CASE("max_sensitivity: linear IG stays under the analytic bound") {
    LinProblem P;
    // Phi(x + d) - Phi(x) = w . d elementwise, so ||.||_2 <= r * ||w||_2
    double wl2 = 0;
    for (double v : P.F.w.data) wl2 += v * v;
    wl2 = std::sqrt(wl2);

    MetricConfig cfg; // radius 0.1
    MetricValue mv = max_sensitivity([&](const Tensor& xx) { return P.ig(xx); }, P.x, cfg);
    REQUIRE(mv.value <= cfg.radius * wl2);
    REQUIRE(mv.value == Catch::Approx(0.26863318346688864).epsilon(1e-10));
    REQUIRE(mv.se > 0.0);
}

TEST_CASE("max_sensitivity: monotone over nested draws") {
    LinProblem P;
    auto method = [&](const Tensor& xx) { return P.ig(xx); };

    // same substreams, so the radius scales every draw linearly
    double prev = 0.0;
    for (double r : {0.05, 0.1, 0.2}) {
        MetricConfig cfg;
        cfg.radius = r;
        const double v = max_sensitivity(method, P.x, cfg).value;
        REQUIRE(v > prev);
        if (prev > 0.0) REQUIRE(v / prev == Catch::Approx(2.0).epsilon(1e-12));
        prev = v;
    }
}

TEST_CASE("max_sensitivity: rejects maps of the wrong shape") {
    LinProblem P;
    auto bad = [&](const Tensor&) {
        AttributionMap m;
        m.scores = Tensor(Shape{1, 3});
        return m;
    };
    REQUIRE_THROWS_AS(max_sensitivity(bad, P.x, MetricConfig{}), Error);
}

TEST_CASE("ssim: identical maps score exactly one") {
    Tensor a = smooth_map(24, 24, 0.37, 0.61);
    REQUIRE(ssim(a, a) == 1.0);

    // minimal image: a single 11x11 window
    Tensor tiny = smooth_map(11, 11, 0.9, 0.4);
    REQUIRE(ssim(tiny, tiny) == 1.0);

    Tensor hp = half_plane(32, 32, true);
    REQUIRE(ssim(hp, hp) == 1.0);
}

TEST_CASE("ssim: inverted half plane is anti-correlated") {
    Tensor a = half_plane(32, 32, true);
    Tensor b = a;
    for (auto& v : b.data) v = 1.0 - v;
    const double s = ssim(a, b);
    REQUIRE(s < 0.1);
    REQUIRE(s == Catch::Approx(-0.1201715928).epsilon(1e-6));

    Tensor c = half_plane(16, 24, false);
    Tensor d = c;
    for (auto& v : d.data) v = 1.0 - v;
    REQUIRE(ssim(c, d) == Catch::Approx(-0.4352968366).epsilon(1e-6));
}

TEST_CASE("ssim: symmetric and bounded") {
    Tensor a = smooth_map(20, 28, 0.45, 0.3);
    Tensor b = smooth_map(20, 28, 0.31, 0.52);
    const double sab = ssim(a, b), sba = ssim(b, a);
    REQUIRE(std::abs(sab - sba) <= 1e-12);
    REQUIRE(sab >= -1.0);
    REQUIRE(sab <= 1.0);
    REQUIRE(sab < 1.0); // genuinely different maps

    Tensor hp = half_plane(32, 32, true);
    Tensor inv = hp;
    for (auto& v : inv.data) v = 1.0 - v;
    REQUIRE(std::abs(ssim(hp, inv) - ssim(inv, hp)) <= 1e-12);
}

TEST_CASE("ssim: input guards") {
    Tensor a = smooth_map(16, 16, 0.5, 0.5);
    Tensor b = smooth_map(16, 20, 0.5, 0.5);
    REQUIRE_THROWS_AS(ssim(a, b), Error);

    Tensor row(Shape{1, 256});
    REQUIRE_THROWS_AS(ssim(row, row), Error);

    Tensor small = smooth_map(8, 8, 0.5, 0.5);
    REQUIRE_THROWS_AS(ssim(small, small), Error); // smaller than the window

    MetricConfig cfg;
    cfg.ssimWindow = 4;
    REQUIRE_THROWS_AS(ssim(a, a, cfg), Error);
}

TEST_CASE("metrics compose with network attribution maps") {
    // small random MLP, no training needed: exercises the closures end to end
    Rng rng(17);
    auto randn = [&](Shape s) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = rng.gaussian();
        return t;
    };
    Network net;
    net.add_layer(randn({9, 6}), Tensor::zeros({1, 6}), Act::tanh);
    net.add_layer(randn({6, 3}), Tensor::zeros({1, 3}), Act::linear);

    Tensor x(Shape{1, 9});
    for (auto& v : x.data) v = rng.uniform(-1, 1);
    Tensor x0(Shape{1, 9});

    LogitFn F = logit_fn(net, x);
    AttributionMap ig = integrated_gradients(F, x, x0, 64);

    MetricConfig cfg;
    MetricValue infd = infidelity(F, ig, x, x0, cfg);
    REQUIRE(std::isfinite(infd.value));
    REQUIRE(infd.value >= 0.0);

    auto method = [&](const Tensor& xx) { return saliency(F, xx); };
    MetricValue sens = max_sensitivity(method, x, cfg);
    REQUIRE(std::isfinite(sens.value));
    REQUIRE(sens.value > 0.0);
    REQUIRE(sens.value == max_sensitivity(method, x, cfg).value);
}
