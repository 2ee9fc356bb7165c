#include "manigrad/attribution.hpp"
#include "manigrad/datasets.hpp"
#include "manigrad/train.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace manigrad;

namespace {

Tensor randn(Rng& rng, Shape s, double sd = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.gaussian() * sd;
    return t;
}

struct SquareFn { // F(x) = sum(x^2), for quadrature closed forms
    Tensor grads(const Tensor& X) const {
        Tensor g = X;
        for (auto& v : g.data) v *= 2.0;
        return g;
    }
    double value(const Tensor& x) const {
        double s = 0;
        for (double v : x.data) s += v * v;
        return s;
    }
};

Network linear_net(Rng& rng, std::int64_t D, std::int64_t C) {
    Network n;
    n.add_layer(randn(rng, {D, C}), Tensor::zeros({1, C}), Act::linear);
    return n;
}

// Small generative-discriminative pipeline shared across cases: a briefly
// trained VAE plus a classifier fitted to its reconstructions.
struct Pipeline {
    Dataset ds;
    VaeTrainResult vae;
    ClassifierTrainResult clf;
};
const Pipeline& pipeline() {
    static Pipeline p = [] {
        Pipeline q;
        q.ds = augment_baselines(gen_shapes(160, 4, 9001), 0.05);
        TrainConfig cfg;
        cfg.epochs = 10;
        cfg.seed = 31;
        q.vae = train_vae(q.ds, 8, cfg);
        TrainConfig ccf = TrainConfig::classifier_defaults();
        ccf.seed = 77;
        q.clf = train_classifier(q.vae.vae.reconstruct(q.ds.inputs), q.ds.labels, 4, ccf);
        return q;
    }();
    return p;
}

Tensor dataset_row(const Dataset& ds, std::int64_t i) {
    Tensor x(Shape{1, ds.inputs.shape[1]});
    for (std::int64_t j = 0; j < ds.inputs.shape[1]; ++j) x.at(0, j) = ds.inputs.at(i, j);
    return x;
}

double l2_diff(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace

// ---------------------------------------------------------------------------
// Generic path attribution

TEST_CASE("path attribution on a linear model is exact and path-independent") {
    Rng rng(42);
    Network lin = linear_net(rng, 16, 4);
    Tensor x = randn(rng, {1, 16}), x0 = randn(rng, {1, 16});
    LogitFn F = logit_fn(lin, x);
    AttributionMap ig = integrated_gradients(F, x, x0, 8);

    SECTION("IG equals w (x - x0) elementwise") {
        for (std::int64_t j = 0; j < 16; ++j)
            REQUIRE(ig.scores.at(0, j) ==
                    Catch::Approx(lin.layers[0].W.at(j, F.cls) * (x.at(0, j) - x0.at(0, j)))
                        .margin(1e-12));
    }
    SECTION("a crooked path with the same endpoints gives the same map") {
        std::vector<Tensor> pts{x0, randn(rng, {1, 16}), randn(rng, {1, 16}), x};
        AttributionMap crooked = path_attribution(F, pts);
        REQUIRE(max_abs_diff(crooked.scores, ig.scores) <= 1e-8);
    }
    SECTION("two-point path is grad at the start times the increment") {
        std::vector<Tensor> pts{x0, x};
        AttributionMap m = path_attribution(F, pts);
        Tensor g = F.grad(x0);
        for (std::int64_t j = 0; j < 16; ++j)
            REQUIRE(m.scores.at(0, j) ==
                    Catch::Approx(g.at(0, j) * (x.at(0, j) - x0.at(0, j))).margin(1e-14));
    }
    SECTION("mismatched point shapes are an error") {
        std::vector<Tensor> pts{x0, randn(rng, {1, 15})};
        REQUIRE_THROWS_AS(path_attribution(F, pts), Error);
        REQUIRE_THROWS_AS(path_attribution(F, std::vector<Tensor>{x0}), Error);
    }
}

TEST_CASE("quadrature closed forms on F = x^2") {
    // Left-point Riemann sum over the straight 0 -> 2 path has the closed
    // form 4 - 4/N; the midpoint rule is exact for quadratics.
    SquareFn f;
    Tensor x(Shape{1, 1}), x0(Shape{1, 1});
    x.at(0, 0) = 2.0;
    for (std::int64_t N : {4, 16, 256}) {
        AttributionMap left = integrated_gradients(f, x, x0, N);
        AttributionMap mid = integrated_gradients(f, x, x0, N, QuadRule::midpoint);
        REQUIRE(left.scores.at(0, 0) ==
                Catch::Approx(4.0 - 4.0 / static_cast<double>(N)).margin(1e-12));
        REQUIRE(mid.scores.at(0, 0) == Catch::Approx(4.0).margin(1e-12));
    }
}

TEST_CASE("IG completeness converges at first order in N") {
    Rng rng(41);
    Network net;
    net.add_layer(randn(rng, {10, 24}, 0.5), randn(rng, {1, 24}, 0.1), Act::tanh);
    net.add_layer(randn(rng, {24, 16}, 0.4), randn(rng, {1, 16}, 0.1), Act::silu);
    net.add_layer(randn(rng, {16, 3}, 0.4), randn(rng, {1, 3}, 0.1), Act::linear);
    Tensor x = randn(rng, {1, 10}), x0 = Tensor::zeros({1, 10});
    LogitFn F = logit_fn(net, x);
    const double f0 = F.value(x0), f1 = F.value(x);

    double gap[4];
    std::int64_t Ns[4] = {128, 256, 512, 1024};
    for (int i = 0; i < 4; ++i)
        gap[i] = completeness_gap(integrated_gradients(F, x, x0, Ns[i]), f0, f1);

    // spec-level bound at N=256
    REQUIRE(gap[1] <= 1e-3 * std::abs(f1 - f0));
    // halving rate ~1 as N doubles
    for (int i = 0; i + 1 < 4; ++i) {
        REQUIRE(gap[i] / gap[i + 1] >= 1.8);
        REQUIRE(gap[i] / gap[i + 1] <= 2.2);
    }
    // midpoint is strictly sharper at the same N
    REQUIRE(completeness_gap(integrated_gradients(F, x, x0, 256, QuadRule::midpoint),
                             f0, f1) < gap[1] / 10);
}

TEST_CASE("IG trivial cases") {
    Rng rng(43);
    Network net = linear_net(rng, 6, 2);
    Tensor x = randn(rng, {1, 6});
    LogitFn F = logit_fn(net, x);

    SECTION("x equals the baseline -> zero map") {
        AttributionMap m = integrated_gradients(F, x, x, 16);
        for (double v : m.scores.data) REQUIRE(v == 0.0);
    }
    SECTION("a coordinate constant along the path gets exactly zero") {
        Tensor x0 = randn(rng, {1, 6});
        x0.at(0, 3) = x.at(0, 3);
        AttributionMap m = integrated_gradients(F, x, x0, 16);
        REQUIRE(m.scores.at(0, 3) == 0.0);
    }
    SECTION("baseline shape mismatch is an error") {
        REQUIRE_THROWS_AS(integrated_gradients(F, x, Tensor::zeros({1, 5}), 8), Error);
    }
}

TEST_CASE("implementation invariance: a factored linear net attributes identically") {
    Rng rng(44);
    Tensor A = randn(rng, {12, 7}), B = randn(rng, {7, 3});
    Tensor M(Shape{12, 3});
    gemm_nn(12, 3, 7, A.data.data(), B.data.data(), M.data.data());

    Network one;
    one.add_layer(M, Tensor::zeros({1, 3}), Act::linear);
    Network two;
    two.add_layer(A, Tensor::zeros({1, 7}), Act::linear);
    two.add_layer(B, Tensor::zeros({1, 3}), Act::linear);

    Tensor x = randn(rng, {1, 12}), x0 = randn(rng, {1, 12});
    LogitFn F1 = logit_fn(one, x), F2 = logit_fn(two, x);
    REQUIRE(F1.cls == F2.cls);
    AttributionMap m1 = integrated_gradients(F1, x, x0, 32);
    AttributionMap m2 = integrated_gradients(F2, x, x0, 32);
    REQUIRE(max_abs_diff(m1.scores, m2.scores) <= 1e-8);
}

// ---------------------------------------------------------------------------
// MIG / EIG

TEST_CASE("MIG reduces to IG for the identity decoder") {
    Rng rng(45);
    IdentityDecoder idd(6);
    Network lin = linear_net(rng, 6, 3);
    Tensor z0 = randn(rng, {1, 6}), zT = randn(rng, {1, 6});
    GeodesicResult geo = geodesic_solve(z0, zT, idd);
    REQUIRE(geo.report.converged);

    LogitFn F = logit_fn(lin, zT);
    AttributionMap m = mig(F, idd, geo.curve, 16);
    AttributionMap i = integrated_gradients(F, zT, z0, 16);
    REQUIRE(max_abs_diff(m.scores, i.scores) <= 1e-12);

    AttributionMap e = eig(F, idd, z0, zT, 16);
    REQUIRE(max_abs_diff(e.scores, i.scores) <= 1e-12);
}

TEST_CASE("MIG basics on a latent curve") {
    Rng rng(46);
    IdentityDecoder idd(4);
    Network lin = linear_net(rng, 4, 2);
    Tensor z = randn(rng, {1, 4});
    LogitFn F = logit_fn(lin, z);

    SECTION("identical endpoints -> zero map") {
        GeodesicResult geo = geodesic_solve(z, z, idd);
        AttributionMap m = mig(F, idd, geo.curve, 16);
        for (double v : m.scores.data) REQUIRE(v == 0.0);
    }
    SECTION("latent dimension mismatch -> error") {
        LatentCurve c = curve_init_linear(randn(rng, {1, 3}), randn(rng, {1, 3}), 8);
        REQUIRE_THROWS_AS(mig(F, idd, c, 8), Error);
    }
}

TEST_CASE("EIG equals MIG on a linear decoder, differs on the sphere") {
    Rng rng(5);
    SECTION("linear decoder: the straight line is the geodesic") {
        Tensor A = randn(rng, {3, 9}), c = randn(rng, {1, 9}, 0.1);
        LinearDecoder dec(A, c);
        Network f = linear_net(rng, 9, 4);
        Tensor za = randn(rng, {1, 3}), zb = randn(rng, {1, 3});
        GeodesicResult geo = geodesic_solve(za, zb, dec);
        REQUIRE(geo.report.converged);
        LogitFn F = logit_fn(f, dec.fwd(zb));
        AttributionMap m = mig(F, dec, geo.curve, 16);
        AttributionMap e = eig(F, dec, za, zb, 16);
        REQUIRE(max_abs_diff(m.scores, e.scores) <= 1e-10);
    }
    SECTION("sphere decoder: the paths genuinely differ") {
        SphereDecoder sph;
        Network f;
        f.add_layer(randn(rng, {3, 4}, 0.7), randn(rng, {1, 4}, 0.1), Act::tanh);
        f.add_layer(randn(rng, {4, 3}, 0.7), randn(rng, {1, 3}, 0.1), Act::linear);
        Tensor za(Shape{1, 2}), zb(Shape{1, 2});
        za.data = {M_PI / 3, 0.0};
        zb.data = {M_PI / 3, M_PI / 2};
        GeodesicOptions opt;
        opt.T = 64;
        opt.maxIterations = 20000;
        GeodesicResult geo = geodesic_solve(za, zb, sph, opt);
        REQUIRE(geo.report.converged);
        LogitFn F = logit_fn(f, sph.fwd(zb));
        AttributionMap m = mig(F, sph, geo.curve, 64);
        AttributionMap e = eig(F, sph, za, zb, 64);
        REQUIRE(l2_diff(m.scores, e.scores) > 0.01);
        // both remain complete wrt their decoded endpoints
        const double f0 = F.value(sph.fwd(za)), f1 = F.value(sph.fwd(zb));
        REQUIRE(completeness_gap(m, f0, f1) <= 0.01 * std::abs(f1 - f0));
        REQUIRE(completeness_gap(e, f0, f1) <= 0.01 * std::abs(f1 - f0));
    }
}

TEST_CASE("MIG completeness on the trained pipeline") {
    const Pipeline& p = pipeline();
    const VAE& vae = p.vae.vae;
    NetworkDecoder dec(&vae.decoder);
    Tensor xb = Tensor::full({1, 1024}, -1.0);
    Tensor z0 = vae.encode_mean(xb);

    // explain the input with the largest logit swing among the first 16,
    // so the relative gap has a meaningful denominator
    std::int64_t pick = 0;
    double best = -1;
    for (std::int64_t i = 0; i < 16; ++i) {
        Tensor x = dataset_row(p.ds, i);
        Tensor zT = vae.encode_mean(x);
        LogitFn F = logit_fn(p.clf.net, vae.decode(zT));
        const double df = std::abs(F.value(vae.decode(zT)) - F.value(vae.decode(z0)));
        if (df > best) {
            best = df;
            pick = i;
        }
    }
    Tensor x = dataset_row(p.ds, pick);
    Tensor zT = vae.encode_mean(x);
    GeodesicOptions gopt;
    gopt.T = 16;
    gopt.maxIterations = 60;
    GeodesicResult geo = geodesic_solve(z0, zT, dec, gopt);

    LogitFn F = logit_fn(p.clf.net, vae.decode(zT));
    const double f0 = F.value(vae.decode(z0)), f1 = F.value(vae.decode(zT));
    REQUIRE(std::abs(f1 - f0) > 0.1);

    AttributionMap m64 = mig(F, dec, geo.curve, 64);
    AttributionMap m128 = mig(F, dec, geo.curve, 128);
    REQUIRE(completeness_gap(m64, f0, f1) <= 0.02 * std::abs(f1 - f0));
    REQUIRE(completeness_gap(m128, f0, f1) < completeness_gap(m64, f0, f1));
    REQUIRE(m64.scores.shape == Shape{1, 1024});
    for (double v : m64.scores.data) REQUIRE(std::isfinite(v));
}

// ---------------------------------------------------------------------------
// Blur IG

TEST_CASE("gaussian_blur basics") {
    SECTION("constant image is a fixed point") {
        Tensor img = Tensor::full({8, 8}, 0.37);
        Tensor b = gaussian_blur(img, 2.5);
        REQUIRE(max_abs_diff(b, img) <= 1e-15);
    }
    SECTION("mass is preserved away from saturation") {
        Rng rng(47);
        Tensor img = randn(rng, {16, 16});
        Tensor b = gaussian_blur(img, 1.0);
        // blurring contracts toward the local mean: extreme values shrink
        double mx = -1e9, bmx = -1e9;
        for (double v : img.data) mx = std::max(mx, v);
        for (double v : b.data) bmx = std::max(bmx, v);
        REQUIRE(bmx <= mx);
    }
    SECTION("sigma <= 0 is the identity") {
        Rng rng(48);
        Tensor img = randn(rng, {5, 5});
        REQUIRE(max_abs_diff(gaussian_blur(img, 0.0), img) == 0.0);
    }
    SECTION("non-image input is an error") {
        REQUIRE_THROWS_AS(gaussian_blur(Tensor::zeros({1, 24}), 1.0), Error);
    }
}

TEST_CASE("blur_ig") {
    const Pipeline& p = pipeline();

    // image with the largest blur-to-original logit swing among the first 16
    std::int64_t pick = 0;
    double best = -1;
    for (std::int64_t i = 0; i < 16; ++i) {
        Tensor x = dataset_row(p.ds, i);
        Tensor img(Shape{32, 32});
        img.data = x.data;
        LogitFn F = logit_fn(p.clf.net, x);
        const double df = std::abs(F.value(img) - F.value(gaussian_blur(img, 8.0)));
        if (df > best) {
            best = df;
            pick = i;
        }
    }
    Tensor x = dataset_row(p.ds, pick);
    Tensor img(Shape{32, 32});
    img.data = x.data;
    LogitFn F = logit_fn(p.clf.net, x);

    SECTION("constant image -> zero map (up to kernel renormalization rounding)") {
        Tensor flat = Tensor::full({32, 32}, 0.2);
        AttributionMap m = blur_ig(F, flat, 4.0, 8);
        for (double v : m.scores.data) REQUIRE(std::abs(v) <= 1e-12);
    }
    SECTION("N=1 is the two-point rule at the blurred start") {
        AttributionMap m = blur_ig(F, img, 2.0, 1);
        Tensor b = gaussian_blur(img, 2.0);
        Tensor g = F.grad(b);
        for (std::int64_t j = 0; j < 1024; ++j)
            REQUIRE(m.scores.data[static_cast<std::size_t>(j)] ==
                    Catch::Approx(g.data[static_cast<std::size_t>(j)] *
                                  (img.data[static_cast<std::size_t>(j)] -
                                   b.data[static_cast<std::size_t>(j)]))
                        .margin(1e-12));
    }
    SECTION("vanishing maxSigma approaches input x gradient against blur(x)") {
        AttributionMap m = blur_ig(F, img, 1e-3, 2);
        Tensor b = gaussian_blur(img, 1e-3);
        Tensor g = F.grad(img);
        for (std::int64_t j = 0; j < 1024; ++j)
            REQUIRE(m.scores.data[static_cast<std::size_t>(j)] ==
                    Catch::Approx(g.data[static_cast<std::size_t>(j)] *
                                  (img.data[static_cast<std::size_t>(j)] -
                                   b.data[static_cast<std::size_t>(j)]))
                        .margin(1e-8));
    }
    SECTION("completeness wrt the fully blurred baseline at N=128") {
        AttributionMap m = blur_ig(F, img, 8.0, 128);
        const double fb = F.value(gaussian_blur(img, 8.0)), fx = F.value(img);
        REQUIRE(std::abs(fx - fb) > 0.05);
        REQUIRE(completeness_gap(m, fb, fx) <= 0.02 * std::abs(fx - fb));
        REQUIRE(m.scores.shape == Shape{32, 32});
    }
    SECTION("argument validation") {
        REQUIRE_THROWS_AS(blur_ig(F, x, 8.0, 8), Error);        // row, not [H,W]
        REQUIRE_THROWS_AS(blur_ig(F, img, 0.0, 8), Error);      // sigma
        REQUIRE_THROWS_AS(blur_ig(F, img, 8.0, 0), Error);      // steps
    }
}

// ---------------------------------------------------------------------------
// Smooth IG

TEST_CASE("smooth_ig") {
    Rng rng(42);
    Network lin = linear_net(rng, 16, 4);
    Tensor x = randn(rng, {1, 16}), x0 = randn(rng, {1, 16});
    LogitFn F = logit_fn(lin, x);
    AttributionMap ig = integrated_gradients(F, x, x0, 8);

    SECTION("zero noise equals IG bit for bit") {
        AttributionMap m = smooth_ig(F, x, x0, 8, 0.0, 4, 5);
        REQUIRE(max_abs_diff(m.scores, ig.scores) == 0.0);
    }
    SECTION("fixed seed is deterministic") {
        AttributionMap a = smooth_ig(F, x, x0, 8, 0.3, 1, 12345);
        AttributionMap b = smooth_ig(F, x, x0, 8, 0.3, 1, 12345);
        REQUIRE(max_abs_diff(a.scores, b.scores) == 0.0);
        AttributionMap c = smooth_ig(F, x, x0, 8, 0.3, 1, 12346);
        REQUIRE(max_abs_diff(a.scores, c.scores) > 0.0);
    }
    SECTION("linear model: 64-sample mean within 3 standard errors of IG") {
        const double sig = 0.3;
        AttributionMap m = smooth_ig(F, x, x0, 8, sig, 64, 99);
        for (std::int64_t j = 0; j < 16; ++j) {
            const double se = sig * std::abs(lin.layers[0].W.at(j, F.cls)) / 8.0;
            REQUIRE(std::abs(m.scores.at(0, j) - ig.scores.at(0, j)) <= 3 * se);
        }
    }
    SECTION("an explicit noise bank reproduces the internally seeded draws") {
        std::vector<Tensor> bank = smooth_ig_noise(x.shape, 6, 0.2, 77);
        AttributionMap a = smooth_ig(F, x, x0, 8, 0.2, 6, 77);
        AttributionMap b = smooth_ig(F, x, x0, 8, 0.2, 6, 0 /*ignored*/, &bank);
        REQUIRE(max_abs_diff(a.scores, b.scores) == 0.0);
    }
    SECTION("argument validation") {
        REQUIRE_THROWS_AS(smooth_ig(F, x, x0, 8, 0.1, 0), Error);
        std::vector<Tensor> bank = smooth_ig_noise(x.shape, 2, 0.2, 77);
        REQUIRE_THROWS_AS(smooth_ig(F, x, x0, 8, 0.2, 3, 0, &bank), Error);
    }
}

// ---------------------------------------------------------------------------
// Gradient methods

TEST_CASE("saliency, input x gradient, guided backprop") {
    Rng rng(49);

    SECTION("linear closed forms") {
        Network lin = linear_net(rng, 10, 3);
        Tensor x = randn(rng, {1, 10});
        LogitFn F = logit_fn(lin, x);
        AttributionMap s = saliency(F, x);
        AttributionMap g = input_x_gradient(F, x);
        for (std::int64_t j = 0; j < 10; ++j) {
            const double w = lin.layers[0].W.at(j, F.cls);
            REQUIRE(s.scores.at(0, j) == Catch::Approx(std::abs(w)).margin(1e-14));
            REQUIRE(g.scores.at(0, j) == Catch::Approx(w * x.at(0, j)).margin(1e-14));
        }
    }
    SECTION("saliency is non-negative on a trained classifier") {
        const Pipeline& p = pipeline();
        Tensor x = dataset_row(p.ds, 3);
        LogitFn F = logit_fn(p.clf.net, x);
        AttributionMap s = saliency(F, x);
        for (double v : s.scores.data) REQUIRE(v >= 0.0);
        REQUIRE(s.scores.shape == x.shape);
    }
    SECTION("guided backprop with all-positive signals equals the plain gradient") {
        Network net;
        Rng r2(50);
        Tensor W1(Shape{6, 8}), W2(Shape{8, 2});
        for (auto& v : W1.data) v = 0.1 + 0.9 * r2.next_unit();
        for (auto& v : W2.data) v = 0.1 + 0.9 * r2.next_unit();
        net.add_layer(W1, Tensor::full({1, 8}, 0.05), Act::relu);
        net.add_layer(W2, Tensor::full({1, 2}, 0.05), Act::linear);
        Tensor x(Shape{1, 6});
        for (auto& v : x.data) v = 0.5 + r2.next_unit();
        LogitFn F = logit_fn(net, x);
        AttributionMap gb = guided_backprop(F, x);
        REQUIRE(max_abs_diff(gb.scores, F.grad(x)) == 0.0);
    }
    SECTION("guided backprop differs from the raw gradient when signs mix") {
        const Pipeline& p = pipeline();
        Tensor x = dataset_row(p.ds, 3);
        LogitFn F = logit_fn(p.clf.net, x);
        AttributionMap gb = guided_backprop(F, x);
        REQUIRE(max_abs_diff(gb.scores, F.grad(x)) > 0.0);
        REQUIRE(gb.scores.shape == x.shape);
    }
}

// ---------------------------------------------------------------------------
// Normalization

TEST_CASE("normalize_map") {
    SECTION("closed percentile example") {
        Tensor t(Shape{1, 100});
        for (std::int64_t j = 0; j < 100; ++j) t.at(0, j) = static_cast<double>(j + 1);
        Tensor n = normalize_map(t);
        // threshold = sorted[floor(0.99 * 99)] = sorted[98] = 99
        REQUIRE(n.at(0, 99) == 1.0);  // 100 clips to 1
        REQUIRE(n.at(0, 98) == 1.0);  // 99 hits the threshold
        REQUIRE(n.at(0, 49) == Catch::Approx(50.0 / 99.0).margin(1e-15));
    }
    SECTION("sign-symmetric, range [0,1], shape preserved") {
        Rng rng(51);
        Tensor t = randn(rng, {7, 9});
        Tensor n = normalize_map(t);
        Tensor tn = t;
        for (auto& v : tn.data) v = -v;
        REQUIRE(max_abs_diff(n, normalize_map(tn)) == 0.0);
        REQUIRE(n.shape == t.shape);
        for (double v : n.data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
    SECTION("zero map stays zero") {
        Tensor n = normalize_map(Tensor::zeros({4, 4}));
        for (double v : n.data) REQUIRE(v == 0.0);
    }
}
