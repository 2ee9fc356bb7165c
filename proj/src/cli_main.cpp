// manigrad batch driver: dataset generation, VAE/classifier training,
// geodesics, attributions, attacks, metric sweeps, and report aggregation.
// Every subcommand is a pure function of (inputs, flags, seed) at the byte
// level and records its configuration in a run.json next to the primary
// output.
#include "manigrad/attacks.hpp"
#include "manigrad/attribution.hpp"
#include "manigrad/datasets.hpp"
#include "manigrad/geodesic.hpp"
#include "manigrad/io.hpp"
#include "manigrad/manifolds.hpp"
#include "manigrad/metrics.hpp"
#include "manigrad/model_io.hpp"
#include "manigrad/train.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

using namespace manigrad;
namespace fs = std::filesystem;

namespace {

// Exit codes are part of the interface (documented in the README):
// 0 ok, 1 runtime failure, 2 usage, 3 missing file, 4 format-version
// mismatch, 5 corrupt file.
enum ExitCode : int {
    kOk = 0,
    kRuntime = 1,
    kUsage = 2,
    kMissingFile = 3,
    kFormatVersion = 4,
    kCorruptFile = 5,
};

// Semantic misuse that CLI11 cannot express (e.g. --target without
// --kind targeted); reported on the usage exit code.
class UsageError : public Error {
public:
    using Error::Error;
};

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

constexpr std::int64_t kRunJsonVersion = 1;
constexpr std::int64_t kNtfFormatVersion = 1;

void write_run_json(const std::string& path, const std::string& command,
                    Json config, Json results = Json::object()) {
    Json run{{"command", command},
             {"config", std::move(config)},
             {"formatVersions",
              {{"mgm", kMgmFormatVersion},
               {"ntf", kNtfFormatVersion},
               {"run", kRunJsonVersion}}}};
    if (!results.empty()) run["results"] = std::move(results);
    write_file_atomic(path, run.dump(2) + "\n");
}

Tensor as_row(const Tensor& x) { return LogitFn::row_view(x); }

// ---------------------------------------------------------------------------
// Dataset directory layout: inputs.ntf [n,D], labels.ntf [n], dataset.json.
// ---------------------------------------------------------------------------

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.inputs = ntf_read(dir + "/inputs.ntf");
    if (ds.inputs.shape.size() != 2)
        throw CorruptionError(dir + "/inputs.ntf: expected a 2-D [n,D] tensor");
    const Tensor lab = ntf_read(dir + "/labels.ntf");
    if (lab.size() != ds.inputs.shape[0])
        throw CorruptionError(dir + ": labels.ntf has " + std::to_string(lab.size()) +
                              " entries for " + std::to_string(ds.inputs.shape[0]) +
                              " inputs");
    for (double v : lab.data) {
        if (v != std::floor(v))
            throw CorruptionError(dir + "/labels.ntf: non-integral label");
        ds.labels.push_back(static_cast<std::int64_t>(v));
    }
    ds.provenance = dir;
    return ds;
}

std::int64_t num_classes(const Dataset& ds) {
    std::int64_t c = 0;
    for (auto l : ds.labels)
        if (l != kBaselineLabel) c = std::max(c, l + 1);
    if (c < 2) fail("dataset has fewer than 2 classes");
    return c;
}

Tensor dataset_row(const Dataset& ds, std::int64_t i) {
    const std::int64_t D = ds.inputs.shape[1];
    Tensor x(Shape{1, D});
    for (std::int64_t j = 0; j < D; ++j) x.at(0, j) = ds.inputs.at(i, j);
    return x;
}

Tensor baseline_tensor(const std::string& spec, const Tensor& like) {
    if (spec == "black") return Tensor::full(like.shape, -1.0);
    if (spec == "white") return Tensor::full(like.shape, 1.0);
    Tensor t = ntf_read(spec);
    if (shape_numel(t.shape) != shape_numel(like.shape))
        fail("baseline '" + spec + "' has " + std::to_string(shape_numel(t.shape)) +
             " elements, input has " + std::to_string(shape_numel(like.shape)));
    t.shape = like.shape;
    return t;
}

std::int64_t square_side(std::int64_t D) {
    const auto s = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(D))));
    if (s * s != D) fail("input with " + std::to_string(D) + " elements is not a square image");
    return s;
}

// ---------------------------------------------------------------------------
// Attribution method dispatch, shared by `attribute` and `evaluate`.
// ---------------------------------------------------------------------------

const std::vector<std::string> kMethods = {"ig",       "mig",      "eig", "blurig",
                                           "smoothig", "saliency", "ixg", "gbp"};

struct MethodContext {
    const Network* net = nullptr;
    const VAE* vae = nullptr;          // required by mig/eig
    const LatentCurve* curve = nullptr; // optional precomputed curve (mig)
    std::int64_t N = 32;               // path quadrature steps
    std::int64_t geoT = 16;            // geodesic discretization for mig
    std::int64_t geoMaxIterations = 300;
    double noiseSigma = 0.2;           // smoothig
    std::int64_t noiseSamples = 16;    // smoothig
    std::uint64_t seed = 7;            // smoothig
    double blurSigma = 5.0;            // blurig
    // Batched sweeps re-solve geodesics for many nearby inputs; seeding each
    // solve from the previous curve cuts the iteration count sharply without
    // changing what is computed.
    std::shared_ptr<LatentCurve> warmCache;
};

// Completeness endpoints for path methods; empty shapes mean "not a path
// method".
struct PathEnds {
    Tensor start, end;
    bool valid() const { return !start.shape.empty(); }
};

AttributionMap run_method(const std::string& name, const MethodContext& c,
                          const LogitFn& F, const Tensor& x, const Tensor& x0,
                          PathEnds* ends = nullptr) {
    const auto need_vae = [&]() -> const VAE& {
        if (!c.vae) throw UsageError("method '" + name + "' needs --vae");
        return *c.vae;
    };
    if (name == "ig") {
        if (ends) *ends = {x0, x};
        return integrated_gradients(F, x, x0, c.N);
    }
    if (name == "mig") {
        const VAE& v = need_vae();
        NetworkDecoder dec(&v.decoder);
        LatentCurve cur;
        if (c.curve) {
            cur = *c.curve;
        } else {
            const Tensor z0 = v.encode_mean(as_row(x0));
            const Tensor z1 = v.encode_mean(as_row(x));
            GeodesicOptions opt;
            opt.T = c.geoT;
            opt.maxIterations = c.geoMaxIterations;
            if (c.warmCache && c.warmCache->points.shape.size() == 2 &&
                c.warmCache->steps() == c.geoT &&
                c.warmCache->dim() == z0.shape[1])
                opt.warmStart = c.warmCache.get();
            cur = geodesic_solve(z0, z1, dec, opt).curve;
            if (c.warmCache) *c.warmCache = cur;
        }
        if (ends) *ends = {dec.fwd(cur.point(0)), dec.fwd(cur.point(cur.steps()))};
        return mig(F, dec, cur, c.N);
    }
    if (name == "eig") {
        const VAE& v = need_vae();
        NetworkDecoder dec(&v.decoder);
        const Tensor z0 = v.encode_mean(as_row(x0));
        const Tensor z1 = v.encode_mean(as_row(x));
        if (ends) *ends = {dec.fwd(z0), dec.fwd(z1)};
        return eig(F, dec, z0, z1, c.N);
    }
    if (name == "blurig") {
        Tensor img = x;
        const std::int64_t side = square_side(shape_numel(x.shape));
        img.shape = Shape{side, side};
        if (ends) *ends = {gaussian_blur(img, c.blurSigma), img};
        AttributionMap m = blur_ig(F, img, c.blurSigma, c.N);
        m.scores.shape = x.shape;
        return m;
    }
    if (name == "smoothig")
        return smooth_ig(F, x, x0, c.N, c.noiseSigma, c.noiseSamples, c.seed);
    if (name == "saliency") return saliency(F, x);
    if (name == "ixg") return input_x_gradient(F, x);
    if (name == "gbp") return guided_backprop(F, x);
    throw UsageError("unknown method '" + name + "'");
}

Json completeness_json(const LogitFn& F, const AttributionMap& m, const PathEnds& ends) {
    double sum = 0;
    for (double v : m.scores.data) sum += v;
    const double f0 = F.value(ends.start);
    const double f1 = F.value(ends.end);
    const double delta = f1 - f0;
    const double residual = sum - delta;
    return Json{{"attributionSum", sum},
                {"outputStart", f0},
                {"outputEnd", f1},
                {"outputDelta", delta},
                {"residual", residual},
                {"relResidual", std::abs(residual) / std::max(std::abs(delta), 1e-12)}};
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string dataset = "shapes";
    std::int64_t n = 2000;
    std::uint64_t seed = 2024;
    std::string out;
};

void cmd_gen_data(const GenDataArgs& a) {
    const Dataset ds = gen_shapes(a.n, kNumShapeClasses, a.seed);
    fs::create_directories(a.out);
    ntf_write(a.out + "/inputs.ntf", ds.inputs);
    Tensor lab(Shape{ds.size()});
    for (std::int64_t i = 0; i < ds.size(); ++i)
        lab.at(i) = static_cast<double>(ds.labels[static_cast<std::size_t>(i)]);
    ntf_write(a.out + "/labels.ntf", lab);
    // Single-image files for the geodesic/attribute/attack subcommands.
    for (std::int64_t i = 0; i < std::min<std::int64_t>(ds.size(), 8); ++i)
        ntf_write(a.out + "/sample_" + std::to_string(i) + ".ntf", dataset_row(ds, i));
    const Json meta{{"dataset", a.dataset},
                    {"n", a.n},
                    {"classes", kNumShapeClasses},
                    {"seed", a.seed},
                    {"provenance", ds.provenance}};
    write_file_atomic(a.out + "/dataset.json", meta.dump(2) + "\n");
    write_run_json(a.out + "/run.json", "gen-data", meta);
}

// ---------------------------------------------------------------------------
// train-vae
// ---------------------------------------------------------------------------

struct TrainVaeArgs {
    std::string data;
    std::int64_t latent = 8;
    std::int64_t epochs = 30;
    std::uint64_t seed = 101;
    double baselineFraction = 0.05;
    std::string out;
};

void cmd_train_vae(const TrainVaeArgs& a) {
    const Dataset ds = augment_baselines(load_dataset(a.data), a.baselineFraction);
    TrainConfig cfg = TrainConfig::vae_defaults();
    cfg.epochs = a.epochs;
    cfg.seed = a.seed;
    const VaeTrainResult r = train_vae(ds, a.latent, cfg);
    save_vae(a.out, r.vae);
    const Json config{{"data", a.data},         {"latent", a.latent},
                      {"epochs", a.epochs},     {"seed", a.seed},
                      {"baselineFraction", a.baselineFraction},
                      {"batchSize", cfg.batchSize}, {"learningRate", cfg.learningRate},
                      {"klWeight", cfg.klWeight}};
    write_run_json(a.out + ".run.json", "train-vae", config,
                   Json{{"finalLoss", r.lossHistory.back()},
                        {"epochsRun", r.lossHistory.size()}});
}

// ---------------------------------------------------------------------------
// train-classifier
// ---------------------------------------------------------------------------

struct TrainClfArgs {
    std::string vae, data, out;
    std::int64_t epochs = 15;
    std::uint64_t seed = 101;
};

void cmd_train_classifier(const TrainClfArgs& a) {
    const VAE v = load_vae(a.vae);
    const Dataset ds = load_dataset(a.data);
    const Tensor Xrec = v.reconstruct(ds.inputs); // attribution inputs live on g(M)
    TrainConfig cfg = TrainConfig::classifier_defaults();
    cfg.epochs = a.epochs;
    cfg.seed = a.seed;
    const ClassifierTrainResult r =
        train_classifier(Xrec, ds.labels, num_classes(ds), cfg);
    save_classifier(a.out, r.net);
    const Json config{{"vae", a.vae},     {"data", a.data}, {"epochs", a.epochs},
                      {"seed", a.seed},   {"batchSize", cfg.batchSize},
                      {"learningRate", cfg.learningRate}};
    write_run_json(a.out + ".run.json", "train-classifier", config,
                   Json{{"trainAccuracy", r.trainAccuracy},
                        {"finalLoss", r.lossHistory.back()}});
}

// ---------------------------------------------------------------------------
// geodesic
// ---------------------------------------------------------------------------

struct GeodesicArgs {
    std::string vae, from, to, out, report;
    std::int64_t steps = 16;
    std::string mode = "exact";
};

void cmd_geodesic(const GeodesicArgs& a) {
    const VAE v = load_vae(a.vae);
    const Tensor from = ntf_read(a.from);
    const Tensor to = ntf_read(a.to);
    const Tensor z0 = v.encode_mean(as_row(from));
    const Tensor z1 = v.encode_mean(as_row(to));
    NetworkDecoder dec(&v.decoder);
    EncoderMeanMap enc(&v.encoder, v.latent_dim);
    GeodesicOptions opt;
    opt.T = a.steps;
    if (a.mode == "encoder-approx") {
        opt.mode = GradMode::encoder_approx;
        opt.encoder = &enc;
    }
    const GeodesicResult r = geodesic_solve(z0, z1, dec, opt);
    ntf_write(a.out, r.curve.points);
    const Json report{{"converged", r.report.converged},
                      {"iterations", r.report.iterations},
                      {"finalEnergy", r.report.finalEnergy},
                      {"length", curve_length(r.curve, dec)},
                      {"speedVariation", r.report.speedVariation},
                      {"gradStat", r.report.gradStat},
                      {"message", r.report.message},
                      {"energyHistory", r.report.energyHistory}};
    write_file_atomic(a.report, report.dump(2) + "\n");
    const Json config{{"vae", a.vae},   {"from", a.from},  {"to", a.to},
                      {"steps", a.steps}, {"mode", a.mode}};
    write_run_json(a.out + ".run.json", "geodesic", config,
                   Json{{"converged", r.report.converged},
                        {"iterations", r.report.iterations}});
}

// ---------------------------------------------------------------------------
// attribute
// ---------------------------------------------------------------------------

struct AttributeArgs {
    std::string method, clf, vae, curve, input, out, heatmap;
    std::string baseline = "black";
    std::int64_t steps = 32;
    double noiseSigma = 0.2;
    std::int64_t noiseSamples = 16;
    double blurSigma = 5.0;
    std::uint64_t seed = 7;
};

void cmd_attribute(const AttributeArgs& a) {
    const Network net = load_classifier(a.clf);
    const Tensor x = ntf_read(a.input);
    if (shape_numel(x.shape) != net.dim_in())
        fail("input has " + std::to_string(shape_numel(x.shape)) +
             " elements, classifier expects " + std::to_string(net.dim_in()));
    const Tensor x0 = baseline_tensor(a.baseline, x);
    const LogitFn F = logit_fn(net, x);

    VAE vae;
    LatentCurve curve;
    MethodContext ctx;
    ctx.net = &net;
    ctx.N = a.steps;
    ctx.noiseSigma = a.noiseSigma;
    ctx.noiseSamples = a.noiseSamples;
    ctx.blurSigma = a.blurSigma;
    ctx.seed = a.seed;
    if (!a.vae.empty()) {
        vae = load_vae(a.vae);
        ctx.vae = &vae;
    }
    if (!a.curve.empty()) {
        curve.points = ntf_read(a.curve);
        curve.check();
        ctx.curve = &curve;
    }

    PathEnds ends;
    const AttributionMap m = run_method(a.method, ctx, F, x, x0, &ends);
    ntf_write(a.out, m.scores);
    if (!a.heatmap.empty()) {
        Tensor img = normalize_map(m.scores);
        const std::int64_t side = square_side(shape_numel(img.shape));
        img.shape = Shape{side, side};
        pgm_write(a.heatmap, img, 0.0, 1.0);
    }
    const Json config{{"method", a.method},       {"clf", a.clf},
                      {"vae", a.vae},             {"curve", a.curve},
                      {"input", a.input},         {"baseline", a.baseline},
                      {"steps", a.steps},         {"noiseSigma", a.noiseSigma},
                      {"noiseSamples", a.noiseSamples}, {"blurSigma", a.blurSigma},
                      {"seed", a.seed}};
    Json results{{"class", m.cls}, {"method", m.method}};
    if (ends.valid()) results["completeness"] = completeness_json(F, m, ends);
    write_run_json(a.out + ".run.json", "attribute", config, results);
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackArgs {
    std::string kind, clf, input, target, out, report;
    std::int64_t k = 0;
    double eps = 0.1;
    std::int64_t steps = 200;
    double gamma = 10.0;
    double stepSize = 0.0;
    std::int64_t N = 32;
    std::uint64_t seed = 2024;
};

void cmd_attack(const AttackArgs& a) {
    const Network net = load_classifier(a.clf);
    const Tensor x = ntf_read(a.input);
    AttackConfig cfg;
    cfg.epsilon = a.eps;
    cfg.steps = a.steps;
    cfg.gamma = a.gamma;
    cfg.stepSize = a.stepSize;
    cfg.N = a.N;
    cfg.seed = a.seed;

    AttackResult r;
    if (a.kind == "targeted") {
        if (a.target.empty()) throw UsageError("--kind targeted needs --target");
        r = targeted_attack(net, x, ntf_read(a.target), cfg);
    } else {
        if (a.k < 1) throw UsageError("--kind topk needs --k >= 1");
        r = topk_attack(net, x, a.k, cfg);
    }
    ntf_write(a.out, r.xAdv);
    const double lossFirst = r.lossHistory.front();
    const double lossBest = *std::min_element(r.lossHistory.begin(), r.lossHistory.end());
    const Json report{{"kind", a.kind},
                      {"lossFirst", lossFirst},
                      {"lossBest", lossBest},
                      {"lossLast", r.lossHistory.back()},
                      {"lossHalved", lossBest <= 0.5 * lossFirst},
                      {"linfNorm", r.linfNorm},
                      {"classPreserved", r.classPreserved},
                      {"attributionDistance", r.attributionDistance}};
    write_file_atomic(a.report, report.dump(2) + "\n");
    const Json config{{"kind", a.kind},   {"clf", a.clf},       {"input", a.input},
                      {"target", a.target}, {"k", a.k},         {"eps", a.eps},
                      {"steps", a.steps}, {"gamma", a.gamma},   {"stepSize", a.stepSize},
                      {"N", a.N},         {"seed", a.seed}};
    write_run_json(a.out + ".run.json", "attack", config, report);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string metric, config, out;
};

std::vector<std::int64_t> pick_inputs(const Json& cfg, const Dataset& ds) {
    std::vector<std::int64_t> ids;
    if (cfg.contains("indices")) {
        for (const auto& e : cfg["indices"]) ids.push_back(e.get<std::int64_t>());
    } else {
        const std::int64_t count =
            cfg.value("count", std::min<std::int64_t>(20, ds.size()));
        for (std::int64_t i = 0; i < ds.size() && static_cast<std::int64_t>(ids.size()) < count; ++i)
            if (ds.labels[static_cast<std::size_t>(i)] != kBaselineLabel) ids.push_back(i);
    }
    for (auto i : ids)
        if (i < 0 || i >= ds.size()) fail("input index " + std::to_string(i) + " out of range");
    if (ids.empty()) fail("no inputs selected");
    return ids;
}

void cmd_evaluate(const EvaluateArgs& a) {
    Json cfg;
    try {
        cfg = Json::parse(read_file(a.config));
    } catch (const Json::exception& e) {
        throw CorruptionError(a.config + ": " + e.what());
    }
    if (!cfg.contains("clf") || !cfg.contains("data") || !cfg.contains("methods"))
        throw UsageError("config needs at least {clf, data, methods}");

    const Network net = load_classifier(cfg["clf"].get<std::string>());
    VAE vae;
    const bool hasVae = cfg.contains("vae");
    if (hasVae) vae = load_vae(cfg["vae"].get<std::string>());
    const Dataset ds = load_dataset(cfg["data"].get<std::string>());
    const std::vector<std::int64_t> ids = pick_inputs(cfg, ds);
    std::vector<std::string> methods;
    for (const auto& e : cfg["methods"]) {
        const std::string name = e.get<std::string>();
        if (std::find(kMethods.begin(), kMethods.end(), name) == kMethods.end())
            throw UsageError("unknown method '" + name + "' in config");
        methods.push_back(name);
    }

    MethodContext ctx;
    ctx.net = &net;
    if (hasVae) ctx.vae = &vae;
    ctx.N = cfg.value("steps", std::int64_t{32});
    ctx.noiseSigma = cfg.value("noiseSigma", 0.2);
    ctx.noiseSamples = cfg.value("noiseSamples", std::int64_t{16});
    ctx.blurSigma = cfg.value("blurSigma", 5.0);
    ctx.seed = cfg.value("seed", std::uint64_t{7});
    ctx.geoT = cfg.value("geoSteps", std::int64_t{8});
    ctx.geoMaxIterations = cfg.value("geoMaxIterations", std::int64_t{60});
    ctx.warmCache = std::make_shared<LatentCurve>();

    MetricConfig mc;
    mc.sigma = cfg.value("sigma", mc.sigma);
    mc.samples = cfg.value("samples", mc.samples);
    mc.radius = cfg.value("radius", mc.radius);
    mc.sensSamples = cfg.value("sensSamples", mc.sensSamples);
    mc.seed = cfg.value("metricSeed", mc.seed);

    const std::string hash = hex64(fnv1a64(cfg.dump() + "|" + a.metric));

    CsvTable table;
    if (a.metric == "ssi") {
        table.header = {"input_id", "method", "ssi", "class_preserved"};
        const Json atk = cfg.contains("attack") ? cfg["attack"] : Json::object();
        AttackConfig ac;
        ac.epsilon = atk.value("eps", ac.epsilon);
        ac.steps = atk.value("steps", ac.steps);
        ac.gamma = atk.value("gamma", ac.gamma);
        ac.stepSize = atk.value("stepSize", ac.stepSize);
        ac.N = atk.value("N", ac.N);
        const std::string kind = atk.value("kind", std::string("topk"));
        const std::int64_t k = atk.value("k", std::int64_t{40});
        const std::int64_t side = square_side(ds.inputs.shape[1]);

        for (const std::int64_t id : ids) {
            *ctx.warmCache = LatentCurve{}; // results independent of prior inputs
            const Tensor x = dataset_row(ds, id);
            AttackResult r;
            if (kind == "targeted") {
                // Deterministic target: the next row with a different label.
                std::int64_t tgt = -1;
                for (std::int64_t s = 1; s < ds.size(); ++s) {
                    const std::int64_t j = (id + s) % ds.size();
                    if (ds.labels[static_cast<std::size_t>(j)] != kBaselineLabel &&
                        ds.labels[static_cast<std::size_t>(j)] !=
                            ds.labels[static_cast<std::size_t>(id)]) {
                        tgt = j;
                        break;
                    }
                }
                if (tgt < 0) fail("no differently-labelled target available");
                r = targeted_attack(net, x, dataset_row(ds, tgt), ac);
            } else if (kind == "topk") {
                r = topk_attack(net, x, k, ac);
            } else {
                throw UsageError("attack.kind must be targeted or topk");
            }
            std::vector<std::pair<std::string, MethodFn>> fns;
            for (const std::string& name : methods) {
                const LogitFn F = logit_fn(net, x);
                fns.emplace_back(name, [name, &ctx, F](const Tensor& xi) {
                    return run_method(name, ctx, F, xi,
                                      Tensor::full(xi.shape, -1.0));
                });
            }
            for (const RobustnessRow& row :
                 evaluate_robustness(fns, {r}, side, side, mc))
                table.rows.push_back({std::to_string(id), row.method,
                                      fmt_g17(row.ssi),
                                      row.classPreserved ? "1" : "0"});
        }
    } else {
        table.header = {"input_id", "method", "metric", "value", "stderr",
                        "config_hash"};
        for (const std::int64_t id : ids) {
            *ctx.warmCache = LatentCurve{}; // results independent of prior inputs
            const Tensor x = dataset_row(ds, id);
            const Tensor x0 = Tensor::full(x.shape, -1.0);
            const LogitFn F = logit_fn(net, x);
            for (const std::string& name : methods) {
                MetricValue v;
                if (a.metric == "infd") {
                    v = infidelity(F, run_method(name, ctx, F, x, x0), x, x0, mc);
                } else { // sensmax
                    v = max_sensitivity(
                        [&](const Tensor& xi) {
                            return run_method(name, ctx, F, xi,
                                              Tensor::full(xi.shape, -1.0));
                        },
                        x, mc);
                }
                table.rows.push_back({std::to_string(id), name, a.metric,
                                      fmt_g17(v.value), fmt_g17(v.se), hash});
            }
        }
    }
    csv_write(a.out, table);
    write_run_json(a.out + ".run.json", "evaluate",
                   Json{{"metric", a.metric},
                        {"configFile", a.config},
                        {"config", cfg},
                        {"configHash", hash}},
                   Json{{"rows", table.rows.size()}});
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
    std::string in, out;
};

struct Agg {
    std::vector<double> values;
    std::int64_t preserved = 0;
    double mean() const {
        double s = 0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
    double se() const {
        const std::size_t n = values.size();
        if (n < 2) return 0.0;
        const double m = mean();
        double q = 0;
        for (double v : values) q += (v - m) * (v - m);
        return std::sqrt(q / static_cast<double>(n - 1)) /
               std::sqrt(static_cast<double>(n));
    }
};

void cmd_report(const ReportArgs& a) {
    Json summary{{"source", a.in}};
    if (a.in.size() > 5 && a.in.substr(a.in.size() - 5) == ".json") {
        // Summarize a single run report (e.g. attribute's run.json).
        Json run;
        try {
            run = Json::parse(read_file(a.in));
        } catch (const Json::exception& e) {
            throw CorruptionError(a.in + ": " + e.what());
        }
        summary["kind"] = "run";
        if (run.contains("command")) summary["command"] = run["command"];
        if (run.contains("results")) {
            summary["results"] = run["results"];
            if (run["results"].contains("completeness"))
                summary["completeness"] = run["results"]["completeness"];
        }
        write_file_atomic(a.out, summary.dump(2) + "\n");
        write_run_json(a.out + ".run.json", "report",
                       Json{{"in", a.in}, {"out", a.out}});
        return;
    }

    const CsvTable t = csv_read(a.in);
    const std::vector<std::string> metricsHeader = {"input_id", "method", "metric",
                                                    "value", "stderr", "config_hash"};
    const std::vector<std::string> robustHeader = {"input_id", "method", "ssi",
                                                   "class_preserved"};
    if (t.header == metricsHeader) {
        summary["kind"] = "metrics";
        std::map<std::string, std::map<std::string, Agg>> byMetric; // metric -> method
        for (const auto& row : t.rows)
            byMetric[row[2]][row[1]].values.push_back(std::strtod(row[3].c_str(), nullptr));
        Json groups = Json::array();
        Json orderings = Json::object();
        for (const auto& [metric, methods] : byMetric) {
            std::vector<std::pair<double, std::string>> order;
            for (const auto& [method, agg] : methods) {
                groups.push_back(Json{{"metric", metric},
                                      {"method", method},
                                      {"n", agg.values.size()},
                                      {"mean", agg.mean()},
                                      {"stderr", agg.se()}});
                order.emplace_back(agg.mean(), method);
            }
            std::sort(order.begin(), order.end());
            Json names = Json::array();
            for (const auto& [mean, name] : order) names.push_back(name);
            orderings[metric] = names; // ascending mean: first = best for error metrics
        }
        summary["groups"] = groups;
        summary["orderings"] = orderings;
    } else if (t.header == robustHeader) {
        summary["kind"] = "robustness";
        std::map<std::string, Agg> byMethod;
        for (const auto& row : t.rows) {
            Agg& agg = byMethod[row[1]];
            agg.values.push_back(std::strtod(row[2].c_str(), nullptr));
            if (row[3] == "1") agg.preserved++;
        }
        Json groups = Json::array();
        std::vector<std::pair<double, std::string>> order;
        for (const auto& [method, agg] : byMethod) {
            groups.push_back(Json{{"method", method},
                                  {"n", agg.values.size()},
                                  {"meanSsi", agg.mean()},
                                  {"stderr", agg.se()},
                                  {"classPreservedRate",
                                   static_cast<double>(agg.preserved) /
                                       static_cast<double>(agg.values.size())}});
            order.emplace_back(-agg.mean(), method);
        }
        std::sort(order.begin(), order.end());
        Json names = Json::array();
        for (const auto& [negMean, name] : order) names.push_back(name);
        summary["groups"] = groups;
        summary["ordering"] = names; // descending mean SSI: first = most robust
    } else {
        throw CorruptionError(a.in + ": unrecognized csv schema");
    }
    write_file_atomic(a.out, summary.dump(2) + "\n");
    write_run_json(a.out + ".run.json", "report",
                   Json{{"in", a.in}, {"out", a.out}});
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"manigrad: manifold-aware path attributions at desk scale"};
    app.require_subcommand(1);

    GenDataArgs gd;
    CLI::App* genData = app.add_subcommand("gen-data", "generate a procedural dataset");
    genData->add_option("--dataset", gd.dataset)->check(CLI::IsMember({"shapes"}));
    genData->add_option("--n", gd.n, "number of images");
    genData->add_option("--seed", gd.seed);
    genData->add_option("--out", gd.out, "output directory")->required();

    TrainVaeArgs tv;
    CLI::App* trainVae = app.add_subcommand("train-vae", "train the VAE");
    trainVae->add_option("--data", tv.data)->required();
    trainVae->add_option("--latent", tv.latent);
    trainVae->add_option("--epochs", tv.epochs);
    trainVae->add_option("--seed", tv.seed);
    trainVae->add_option("--baseline-fraction", tv.baselineFraction);
    trainVae->add_option("--out", tv.out)->required();

    TrainClfArgs tc;
    CLI::App* trainClf = app.add_subcommand("train-classifier",
                                            "train the classifier on reconstructions");
    trainClf->add_option("--vae", tc.vae)->required();
    trainClf->add_option("--data", tc.data)->required();
    trainClf->add_option("--epochs", tc.epochs);
    trainClf->add_option("--seed", tc.seed);
    trainClf->add_option("--out", tc.out)->required();

    GeodesicArgs ge;
    CLI::App* geodesicCmd = app.add_subcommand("geodesic", "latent geodesic between two images");
    geodesicCmd->add_option("--vae", ge.vae)->required();
    geodesicCmd->add_option("--from", ge.from)->required();
    geodesicCmd->add_option("--to", ge.to)->required();
    geodesicCmd->add_option("--steps", ge.steps);
    geodesicCmd->add_option("--mode", ge.mode)
        ->check(CLI::IsMember({"exact", "encoder-approx"}));
    geodesicCmd->add_option("--out", ge.out)->required();
    geodesicCmd->add_option("--report", ge.report)->required();

    AttributeArgs at;
    CLI::App* attribute = app.add_subcommand("attribute", "compute an attribution map");
    attribute->add_option("--method", at.method)->required()->check(CLI::IsMember(kMethods));
    attribute->add_option("--clf", at.clf)->required();
    attribute->add_option("--vae", at.vae);
    attribute->add_option("--curve", at.curve);
    attribute->add_option("--input", at.input)->required();
    attribute->add_option("--baseline", at.baseline, "black|white|FILE");
    attribute->add_option("--steps", at.steps);
    attribute->add_option("--noise-sigma", at.noiseSigma);
    attribute->add_option("--noise-samples", at.noiseSamples);
    attribute->add_option("--blur-sigma", at.blurSigma);
    attribute->add_option("--seed", at.seed);
    attribute->add_option("--out", at.out)->required();
    attribute->add_option("--heatmap", at.heatmap);

    AttackArgs ak;
    CLI::App* attack = app.add_subcommand("attack", "attributional attack");
    attack->add_option("--kind", ak.kind)->required()->check(CLI::IsMember({"targeted", "topk"}));
    attack->add_option("--clf", ak.clf)->required();
    attack->add_option("--input", ak.input)->required();
    attack->add_option("--target", ak.target);
    attack->add_option("--k", ak.k);
    attack->add_option("--eps", ak.eps);
    attack->add_option("--steps", ak.steps);
    attack->add_option("--gamma", ak.gamma);
    attack->add_option("--step-size", ak.stepSize);
    attack->add_option("--n", ak.N, "path steps in the attacked attribution");
    attack->add_option("--seed", ak.seed);
    attack->add_option("--out", ak.out)->required();
    attack->add_option("--report", ak.report)->required();

    EvaluateArgs ev;
    CLI::App* evaluate = app.add_subcommand("evaluate", "metric sweep over a dataset");
    evaluate->add_option("--metric", ev.metric)
        ->required()
        ->check(CLI::IsMember({"infd", "sensmax", "ssi"}));
    evaluate->add_option("--config", ev.config)->required();
    evaluate->add_option("--out", ev.out)->required();

    ReportArgs rp;
    CLI::App* report = app.add_subcommand("report", "summarize results (means, stderr, orderings)");
    report->add_option("--in", rp.in)->required();
    report->add_option("--out", rp.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return kUsage;
    }

    try {
        if (*genData) cmd_gen_data(gd);
        else if (*trainVae) cmd_train_vae(tv);
        else if (*trainClf) cmd_train_classifier(tc);
        else if (*geodesicCmd) cmd_geodesic(ge);
        else if (*attribute) cmd_attribute(at);
        else if (*attack) cmd_attack(ak);
        else if (*evaluate) cmd_evaluate(ev);
        else if (*report) cmd_report(rp);
    } catch (const UsageError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return kUsage;
    } catch (const FileMissingError& e) {
        std::cerr << "error: missing-file: " << one_line(e.what()) << "\n";
        return kMissingFile;
    } catch (const FormatVersionError& e) {
        std::cerr << "error: format-version: " << one_line(e.what()) << "\n";
        return kFormatVersion;
    } catch (const CorruptionError& e) {
        std::cerr << "error: corrupt-file: " << one_line(e.what()) << "\n";
        return kCorruptFile;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << one_line(e.what()) << "\n";
        return kRuntime;
    }
    return kOk;
}
