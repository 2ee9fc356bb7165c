#include "manigrad/attacks.hpp"
#include "manigrad/datasets.hpp"
#include "manigrad/train.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

using namespace manigrad;

namespace {

Tensor randn(Rng& rng, Shape s, double sd = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.gaussian() * sd;
    return t;
}

Tensor dataset_row(const Dataset& ds, std::int64_t i) {
    Tensor t(Shape{1, ds.inputs.shape[1]});
    for (std::int64_t j = 0; j < ds.inputs.shape[1]; ++j) t.at(0, j) = ds.inputs.at(i, j);
    return t;
}

// small smooth net so swap mode is the identity and everything is fast
struct SmoothNet {
    Network net;
    Tensor x, xt;
    SmoothNet() {
        Rng rng(11);
        net.add_layer(randn(rng, {16, 12}, 0.6), randn(rng, {1, 12}, 0.1), Act::tanh);
        net.add_layer(randn(rng, {12, 3}, 0.6), randn(rng, {1, 3}, 0.1), Act::linear);
        x = randn(rng, {1, 16}, 0.5);
        xt = randn(rng, {1, 16}, 0.5);
        for (auto& v : x.data) v = std::clamp(v, -1.0, 1.0);
        for (auto& v : xt.data) v = std::clamp(v, -1.0, 1.0);
    }
};

// shapes classifier trained on raw inputs (sharp maps), VAE for the latent
// ball check; trained once and shared
struct AttackPipeline {
    Dataset ds;
    ClassifierTrainResult clf;
    VaeTrainResult vae;
    Tensor x, xt; // two inputs of different classes
};
const AttackPipeline& pipeline() {
    static AttackPipeline p = [] {
        AttackPipeline q;
        q.ds = gen_shapes(200, 4, 9001);
        TrainConfig ccf = TrainConfig::classifier_defaults();
        ccf.seed = 77;
        q.clf = train_classifier(q.ds.inputs, q.ds.labels, 4, ccf);
        TrainConfig vcf;
        vcf.epochs = 10;
        vcf.seed = 31;
        q.vae = train_vae(augment_baselines(q.ds, 0.05), 8, vcf);
        q.x = dataset_row(q.ds, 0);
        for (std::int64_t i = 1; i < q.ds.size(); ++i)
            if (q.ds.labels[static_cast<std::size_t>(i)] != q.ds.labels[0]) {
                q.xt = dataset_row(q.ds, i);
                break;
            }
        return q;
    }();
    return p;
}

AttackConfig pipe_config() {
    AttackConfig cfg;
    cfg.epsilon = 0.1;
    cfg.steps = 40;
    cfg.N = 16;
    cfg.gamma = 0;
    cfg.stepSize = 1.25e-3; // the 200-step default pace, budgeted down
    return cfg;
}

double min_loss(const AttackResult& r) {
    return *std::min_element(r.lossHistory.begin(), r.lossHistory.end());
}

} // namespace

TEST_CASE("AttackConfig validation") {
    AttackConfig ok;
    REQUIRE_NOTHROW(ok.validate());

    AttackConfig c = ok;
    c.epsilon = -0.1;
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.steps = -1;
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.stepSize = -1e-3;
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.N = 0;
    REQUIRE_THROWS_AS(c.validate(), Error);
    c = ok;
    c.attributionMethod = "saliency"; // not differentiable end to end here
    REQUIRE_THROWS_AS(c.validate(), Error);

    REQUIRE(ok.step_size() == Catch::Approx(2.5 * 0.1 / 200));
}

TEST_CASE("tape IG matches the attribution module exactly") {
    SmoothNet S;
    const std::int64_t cls = detail::native_argmax(S.net, S.x);
    AttackConfig cfg;
    cfg.N = 32;

    Tensor tape = detail::swap_ig_value(S.net, S.x, cls, cfg);
    LogitFn F{&S.net, cls, ActMode::native}; // tanh net: swap == native
    Tensor module =
        integrated_gradients(F, S.x, detail::black_like(S.x, cfg.baselineValue), 32).scores;
    for (std::size_t i = 0; i < tape.data.size(); ++i)
        REQUIRE(tape.data[i] == Catch::Approx(module.data[i]).margin(1e-12));
}

TEST_CASE("targeted attack: xTarget == x is a fixed point") {
    SmoothNet S;
    AttackConfig cfg;
    cfg.steps = 5;
    cfg.N = 8;
    AttackResult r = targeted_attack(S.net, S.x, S.x, cfg);
    REQUIRE(r.lossHistory.front() == 0.0); // identical tapes cancel exactly
    REQUIRE(r.xAdv.data == S.x.data);
    REQUIRE(r.linfNorm == 0.0);
    REQUIRE(r.attributionDistance == 0.0);
    REQUIRE(r.classPreserved);
}

TEST_CASE("targeted attack: steps=0 only evaluates") {
    SmoothNet S;
    AttackConfig cfg;
    cfg.steps = 0;
    cfg.N = 8;
    AttackResult r = targeted_attack(S.net, S.x, S.xt, cfg);
    REQUIRE(r.lossHistory.size() == 1);
    REQUIRE(r.lossHistory[0] > 0.0);
    REQUIRE(r.xAdv.data == S.x.data);
}

TEST_CASE("attacks: epsilon=0 pins the iterate to x") {
    SmoothNet S;
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    cfg.steps = 10;
    cfg.N = 8;
    REQUIRE(targeted_attack(S.net, S.x, S.xt, cfg).xAdv.data == S.x.data);
    REQUIRE(topk_attack(S.net, S.x, 4, cfg).xAdv.data == S.x.data);
}

TEST_CASE("targeted attack: budget and range hold at every coordinate") {
    SmoothNet S;
    AttackConfig cfg;
    cfg.epsilon = 0.25;
    cfg.steps = 60;
    cfg.N = 16;
    cfg.gamma = 10;
    AttackResult r = targeted_attack(S.net, S.x, S.xt, cfg);
    double linf = 0;
    for (std::size_t i = 0; i < r.xAdv.data.size(); ++i) {
        const double d = std::abs(r.xAdv.data[i] - S.x.data[i]);
        REQUIRE(d <= cfg.epsilon);
        REQUIRE(std::abs(r.xAdv.data[i]) <= 1.0);
        linf = std::max(linf, d);
    }
    REQUIRE(r.linfNorm == linf);
    REQUIRE(r.lossHistory.size() == static_cast<std::size_t>(cfg.steps) + 1);
    REQUIRE(min_loss(r) < r.lossHistory.front()); // made progress
    REQUIRE(r.x.data == S.x.data);                // original kept for evaluation
}

TEST_CASE("targeted attack: deterministic") {
    SmoothNet S;
    AttackConfig cfg;
    cfg.epsilon = 0.1;
    cfg.steps = 15;
    cfg.N = 8;
    AttackResult a = targeted_attack(S.net, S.x, S.xt, cfg);
    AttackResult b = targeted_attack(S.net, S.x, S.xt, cfg);
    REQUIRE(a.xAdv.data == b.xAdv.data);
    REQUIRE(a.lossHistory == b.lossHistory);
}

TEST_CASE("targeted attack: shape guard") {
    SmoothNet S;
    Tensor bad(Shape{1, 8});
    REQUIRE_THROWS_AS(targeted_attack(S.net, S.x, bad, AttackConfig{}), Error);
}

TEST_CASE("targeted attack descends on the trained classifier") {
    const AttackPipeline& p = pipeline();
    REQUIRE(p.clf.trainAccuracy >= 0.5);

    AttackConfig cfg = pipe_config();
    AttackResult r = targeted_attack(p.clf.net, p.x, p.xt, cfg);

    // swap-mode objective: strictly better than the start
    REQUIRE(min_loss(r) / r.lossHistory.front() <= 0.95);
    REQUIRE(r.classPreserved);
    REQUIRE(r.linfNorm <= cfg.epsilon);

    // the reported loss is the minimum over iterates (best-so-far)
    const std::int64_t cls = detail::native_argmax(p.clf.net, p.x);
    const Tensor Itgt = detail::swap_ig_value(p.clf.net, p.xt, cls, cfg);
    const Tensor Fx = p.clf.net.forward(LogitFn::row_view(p.x), ActMode::softplus_swap);
    const double recomputed =
        detail::targeted_loss(p.clf.net, LogitFn::row_view(r.xAdv), Itgt, Fx, cls, cfg);
    REQUIRE(recomputed == min_loss(r));

    // native-mode attribution distance also shrinks
    LogitFn F = logit_fn(p.clf.net, p.x);
    const Tensor x0 = detail::black_like(LogitFn::row_view(p.x), cfg.baselineValue);
    const double init =
        detail::sq_l2_diff(integrated_gradients(F, p.x, x0, cfg.N).scores,
                           integrated_gradients(F, LogitFn::row_view(p.xt), x0, cfg.N).scores);
    REQUIRE(r.attributionDistance < init);
    REQUIRE(r.attributionDistance / init <= 0.95); // measured 0.80

    // VAE denoising mechanism: the adversary barely moves in latent space
    // compared with the distance to the target image
    const Tensor ex = p.vae.vae.encode_mean(LogitFn::row_view(p.x));
    const Tensor ea = p.vae.vae.encode_mean(LogitFn::row_view(r.xAdv));
    const Tensor et = p.vae.vae.encode_mean(LogitFn::row_view(p.xt));
    const double dAdv = std::sqrt(detail::sq_l2_diff(ea, ex));
    const double dTgt = std::sqrt(detail::sq_l2_diff(et, ex));
    REQUIRE(dAdv / dTgt <= 0.2); // measured 0.034
}

TEST_CASE("topk attack reduces the frozen top-k mass") {
    const AttackPipeline& p = pipeline();
    AttackConfig cfg;
    cfg.epsilon = 0.1;
    cfg.steps = 40;
    cfg.N = 16;
    AttackResult r = topk_attack(p.clf.net, p.x, 40, cfg);
    REQUIRE(r.classPreserved);
    REQUIRE(r.linfNorm <= cfg.epsilon);

    // native top-40 mass, indices frozen from I(x)
    LogitFn F = logit_fn(p.clf.net, p.x);
    const Tensor x0 = detail::black_like(LogitFn::row_view(p.x), cfg.baselineValue);
    const Tensor I0 = integrated_gradients(F, p.x, x0, cfg.N).scores;
    const Tensor IA = integrated_gradients(F, LogitFn::row_view(r.xAdv), x0, cfg.N).scores;
    std::vector<std::int64_t> idx(I0.data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
    std::partial_sort(idx.begin(), idx.begin() + 40, idx.end(),
                      [&](std::int64_t a, std::int64_t b) {
                          return I0.data[static_cast<std::size_t>(a)] >
                                 I0.data[static_cast<std::size_t>(b)];
                      });
    double s0 = 0, sa = 0;
    for (int i = 0; i < 40; ++i) {
        s0 += I0.data[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        sa += IA.data[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    }
    REQUIRE(sa < s0);
    REQUIRE((s0 - sa) / std::abs(s0) >= 0.05); // measured 0.13
}

TEST_CASE("topk attack: k=D objective is the completeness sum") {
    const AttackPipeline& p = pipeline();
    AttackConfig cfg;
    cfg.N = 16;
    const std::int64_t cls = detail::native_argmax(p.clf.net, p.x);

    Tensor ones(Shape{1, 1024});
    for (auto& v : ones.data) v = 1.0;
    const double obj =
        detail::topk_loss(p.clf.net, LogitFn::row_view(p.x), ones, cls, cfg);

    LogitFn Fs{&p.clf.net, cls, ActMode::softplus_swap};
    const Tensor x0 = detail::black_like(LogitFn::row_view(p.x), cfg.baselineValue);
    const double want = map_sum(integrated_gradients(Fs, p.x, x0, cfg.N));
    REQUIRE(obj == Catch::Approx(want).margin(1e-10));
}

TEST_CASE("topk attack: k bounds") {
    SmoothNet S;
    REQUIRE_THROWS_AS(topk_attack(S.net, S.x, 0, AttackConfig{}), Error);
    REQUIRE_THROWS_AS(topk_attack(S.net, S.x, 17, AttackConfig{}), Error);
}

TEST_CASE("evaluate_robustness: identity attack scores SSI 1") {
    const AttackPipeline& p = pipeline();
    AttackConfig cfg = pipe_config();
    AttackResult attacked = targeted_attack(p.clf.net, p.x, p.xt, cfg);
    AttackResult identity = attacked;
    identity.xAdv = identity.x;

    std::vector<std::pair<std::string, MethodFn>> methods = {
        {"saliency", [&](const Tensor& xx) { return saliency(logit_fn(p.clf.net, xx), xx); }},
        {"ixg", [&](const Tensor& xx) {
             return input_x_gradient(logit_fn(p.clf.net, xx), xx);
         }},
    };
    auto rows = evaluate_robustness(methods, {identity, attacked}, 32, 32);
    REQUIRE(rows.size() == 4); // |methods| x |inputs|

    REQUIRE(rows[0].inputId == 0);
    REQUIRE(rows[0].method == "saliency");
    REQUIRE(rows[0].ssi == 1.0);
    REQUIRE(rows[1].method == "ixg");
    REQUIRE(rows[1].ssi == 1.0);

    for (const auto& row : rows) {
        REQUIRE(row.ssi >= -1.0);
        REQUIRE(row.ssi <= 1.0);
        REQUIRE(row.classPreserved);
    }
    REQUIRE(rows[2].inputId == 1);
    REQUIRE(rows[2].ssi < 1.0); // a real attack moved the map

    REQUIRE_THROWS_AS(evaluate_robustness(methods, {attacked}, 7, 7, MetricConfig{}), Error);
}
