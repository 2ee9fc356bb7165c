#pragma once
// VAE + classifier definitions and their Adam training loops. Training runs
// entirely on the tape; the packed fast path in Network is used only for
// inference after the final weights are installed.
//
// RNG substreams per run (seed = TrainConfig.seed):
//   0: weight init (layer order, W entries row-major, biases zero)
//   1: epoch shuffles
//   2: VAE reparameterization noise
#include "autodiff.hpp"
#include "datasets.hpp"
#include "network.hpp"
#include "rng.hpp"
#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace manigrad {

struct TrainConfig {
    std::int64_t epochs = 30;
    std::int64_t batchSize = 32;
    double learningRate = 1.5e-3; // peak; cosine-decayed to 10% over the run
    double klWeight = 1e-3;
    double featureWeight = 0.0;
    std::uint64_t seed = 101;

    void validate() const {
        if (epochs <= 0) fail("TrainConfig: epochs must be positive");
        if (batchSize <= 0) fail("TrainConfig: batchSize must be positive");
        if (!(learningRate >= 0)) fail("TrainConfig: learningRate must be >= 0");
        if (klWeight < 0 || featureWeight < 0)
            fail("TrainConfig: negative loss weights");
    }
    static TrainConfig vae_defaults() { return TrainConfig{}; }
    static TrainConfig classifier_defaults() {
        TrainConfig c;
        c.epochs = 15;
        c.learningRate = 1e-3;
        return c;
    }
};

// ---------------------------------------------------------------------------
// Adam (bias-corrected), one slot per parameter tensor.
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
        if (params.size() != grads.size()) fail("Adam: params/grads mismatch");
        if (m_.empty()) {
            for (const Tensor* p : params) {
                m_.push_back(Tensor::zeros(p->shape));
                v_.push_back(Tensor::zeros(p->shape));
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& g = grads[k];
            if (!(g.shape == p.shape)) fail("Adam: gradient shape mismatch");
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                double& m = m_[k].data[i];
                double& v = v_[k].data[i];
                m = beta1 * m + (1 - beta1) * g.data[i];
                v = beta2 * v + (1 - beta2) * g.data[i] * g.data[i];
                p.data[i] -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
            }
        }
    }

    std::int64_t steps() const { return t_; }

private:
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

inline double cosine_lr(double lr0, std::int64_t step, std::int64_t total) {
    const double frac = total > 0 ? static_cast<double>(step) / static_cast<double>(total) : 0.0;
    return lr0 * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * frac)));
}

// ---------------------------------------------------------------------------
// VAE = encoder (D -> 2d, the halves being mu and a raw log-variance) plus a
// smooth decoder (d -> D, tanh output). The raw log-variance is squashed to
// (-4, 4) by logvar = 4 tanh(raw/4) so exp() can never overflow.

inline Tensor logvar_squash(const Tensor& raw) {
    Tensor out(raw.shape);
    for (std::size_t i = 0; i < raw.data.size(); ++i)
        out.data[i] = 4.0 * std::tanh(raw.data[i] / 4.0);
    return out;
}

struct VaeOutput {
    Tensor mu;             // [B, d]
    Tensor logvar;         // [B, d]
    Tensor reconstruction; // [B, D]
};

struct VAE {
    Network encoder;
    Network decoder;
    std::int64_t latent_dim = 0;

    std::int64_t data_dim() const { return decoder.dim_out(); }

    void check_trained() const {
        if (encoder.depth() == 0 || decoder.depth() == 0 || latent_dim <= 0)
            fail("VAE: untrained (empty) network");
        if (encoder.dim_out() != 2 * latent_dim)
            fail("VAE: encoder output dim != 2*latent_dim");
        if (decoder.dim_in() != latent_dim) fail("VAE: decoder input dim != latent_dim");
    }

    // mu(x), deterministic. X is [B, D].
    Tensor encode_mean(const Tensor& X) const {
        check_trained();
        Tensor enc = encoder.forward(X);
        Tensor mu(Shape{X.shape[0], latent_dim});
        for (std::int64_t i = 0; i < X.shape[0]; ++i)
            for (std::int64_t j = 0; j < latent_dim; ++j) mu.at(i, j) = enc.at(i, j);
        return mu;
    }

    Tensor encode_logvar(const Tensor& X) const {
        check_trained();
        Tensor enc = encoder.forward(X);
        Tensor raw(Shape{X.shape[0], latent_dim});
        for (std::int64_t i = 0; i < X.shape[0]; ++i)
            for (std::int64_t j = 0; j < latent_dim; ++j)
                raw.at(i, j) = enc.at(i, latent_dim + j);
        return logvar_squash(raw);
    }

    Tensor decode(const Tensor& Z) const {
        check_trained();
        return decoder.forward(Z);
    }

    // Full pass with reparameterization z = mu + exp(logvar/2) * eps.
    // eps == nullptr means the mean pass (eps = 0).
    VaeOutput encode_decode(const Tensor& X, const Tensor* eps = nullptr) const {
        check_trained();
        VaeOutput out;
        out.mu = encode_mean(X);
        out.logvar = encode_logvar(X);
        Tensor z = out.mu;
        if (eps) {
            if (!(eps->shape == z.shape)) fail("VAE: eps shape mismatch");
            for (std::size_t i = 0; i < z.data.size(); ++i)
                z.data[i] += std::exp(0.5 * out.logvar.data[i]) * eps->data[i];
        }
        out.reconstruction = decode(z);
        return out;
    }

    // x -> g(mu(x)), the manifold projection every classifier input goes through.
    Tensor reconstruct(const Tensor& X) const { return decode(encode_mean(X)); }
};

// Fixed random projection used by the feature (perceptual-stand-in) loss.
// Deterministic in (D, featDim) alone so it never needs to be serialized.
inline Tensor feature_projection(std::int64_t D, std::int64_t featDim = 64) {
    Rng rng(substream_seed(0x6665617470726f6aull, static_cast<std::uint64_t>(D)));
    Tensor P(Shape{D, featDim});
    const double s = 1.0 / std::sqrt(static_cast<double>(D));
    for (auto& v : P.data) v = s * rng.gaussian();
    return P;
}

// KL(q || N(0,I)) summed over latent dims, averaged over the batch:
// mean_B [ 1/2 sum_d (mu^2 + e^logvar - 1 - logvar) ].
inline double kl_divergence(const Tensor& mu, const Tensor& logvar) {
    if (!(mu.shape == logvar.shape) || mu.shape.size() != 2)
        fail("kl_divergence: mu/logvar must be matching 2-D tensors");
    double acc = 0;
    for (std::size_t i = 0; i < mu.data.size(); ++i)
        acc += mu.data[i] * mu.data[i] + std::exp(logvar.data[i]) - 1.0 - logvar.data[i];
    return 0.5 * acc / static_cast<double>(mu.shape[0]);
}

struct VaeLossParts {
    double total = 0, recon = 0, kl = 0, feature = 0;
};

// recon MSE + klWeight * KL + featureWeight * feature-MSE. P (the fixed
// projection) is required only when featureWeight > 0.
inline VaeLossParts vae_loss(const Tensor& x, const VaeOutput& out, double klWeight,
                             double featureWeight, const Tensor* P = nullptr) {
    if (klWeight < 0 || featureWeight < 0) fail("vae_loss: negative weights");
    if (!(x.shape == out.reconstruction.shape))
        fail("vae_loss: x/reconstruction shape mismatch");
    VaeLossParts parts;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double d = out.reconstruction.data[i] - x.data[i];
        parts.recon += d * d;
    }
    parts.recon /= n;
    parts.kl = kl_divergence(out.mu, out.logvar);
    if (featureWeight > 0) {
        if (!P) fail("vae_loss: featureWeight > 0 needs the projection tensor");
        if (P->shape.size() != 2 || P->shape[0] != x.shape[1])
            fail("vae_loss: projection shape mismatch");
        const std::int64_t B = x.shape[0], F = P->shape[1];
        Tensor fx(Shape{B, F}), fr(Shape{B, F});
        gemm_nn(B, F, x.shape[1], x.data.data(), P->data.data(), fx.data.data());
        gemm_nn(B, F, x.shape[1], out.reconstruction.data.data(), P->data.data(),
                fr.data.data());
        for (std::size_t i = 0; i < fx.data.size(); ++i) {
            const double d = fr.data[i] - fx.data[i];
            parts.feature += d * d;
        }
        parts.feature /= static_cast<double>(B * F);
    }
    parts.total = parts.recon + klWeight * parts.kl + featureWeight * parts.feature;
    return parts;
}

namespace detail {

inline Tensor gaussian_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = scale * rng.gaussian();
    return t;
}

inline void init_network(Network& net, Rng& rng,
                         const std::vector<std::int64_t>& dims,
                         const std::vector<Act>& acts) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double s = std::sqrt(1.0 / static_cast<double>(dims[l]));
        net.add_layer(gaussian_tensor(rng, {dims[l], dims[l + 1]}, s),
                      Tensor::zeros({1, dims[l + 1]}), acts[l]);
    }
}

inline Tensor gather_rows(const Tensor& X, const std::vector<std::int64_t>& idx,
                          std::int64_t lo, std::int64_t hi) {
    const std::int64_t d = X.shape[1];
    Tensor out(Shape{hi - lo, d});
    for (std::int64_t r = lo; r < hi; ++r)
        std::copy_n(&X.data[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)] * d)],
                    d, &out.data[static_cast<std::size_t>((r - lo) * d)]);
    return out;
}

// Install updated leaf values back into a network and repack.
inline void install_params(Network& net,
                           const std::vector<std::pair<Var, Var>>& leaves) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        net.layers[l].W = leaves[l].first.val();
        net.layers[l].b = leaves[l].second.val();
    }
    net.repack();
}

} // namespace detail

struct VaeTrainResult {
    VAE vae;
    std::vector<double> lossHistory; // per-epoch mean total loss
};

// Architecture is fixed: encoder D -> 512 SiLU -> 256 SiLU -> 2d linear,
// decoder d -> 256 ELU -> 512 ELU -> D tanh.
inline VaeTrainResult train_vae(const Dataset& ds, std::int64_t latent_d,
                                const TrainConfig& cfg) {
    cfg.validate();
    if (latent_d <= 0) fail("train_vae: latent dimension must be positive");
    if (ds.size() == 0) fail("train_vae: empty dataset");
    const std::int64_t n = ds.size();
    const std::int64_t D = ds.inputs.shape[1];
    if (latent_d > D) fail("train_vae: latent dimension exceeds data dimension");

    Rng init_rng = Rng::substream(cfg.seed, 0);
    Rng perm_rng = Rng::substream(cfg.seed, 1);
    Rng noise_rng = Rng::substream(cfg.seed, 2);

    VaeTrainResult res;
    res.vae.latent_dim = latent_d;
    detail::init_network(res.vae.encoder, init_rng, {D, 512, 256, 2 * latent_d},
                         {Act::silu, Act::silu, Act::linear});
    detail::init_network(res.vae.decoder, init_rng, {latent_d, 256, 512, D},
                         {Act::elu, Act::elu, Act::tanh});

    Tensor P;
    if (cfg.featureWeight > 0) P = feature_projection(D);

    Tape t;
    auto enc_params = res.vae.encoder.param_leaves(t);
    auto dec_params = res.vae.decoder.param_leaves(t);
    std::vector<Var> all;
    std::vector<Tensor> values; // live copies the optimizer updates
    for (auto& pr : enc_params) {
        all.push_back(pr.first);
        all.push_back(pr.second);
    }
    for (auto& pr : dec_params) {
        all.push_back(pr.first);
        all.push_back(pr.second);
    }
    for (const Var& v : all) values.push_back(v.val());
    std::vector<Tensor*> value_ptrs;
    for (Tensor& v : values) value_ptrs.push_back(&v);
    const std::int64_t base = t.size();

    Adam adam;
    const std::int64_t steps_per_epoch = (n + cfg.batchSize - 1) / cfg.batchSize;
    const std::int64_t total_steps = cfg.epochs * steps_per_epoch;

    std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);

    std::int64_t step = 0;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        perm_rng.shuffle(perm);
        double epoch_loss = 0;
        for (std::int64_t lo = 0; lo < n; lo += cfg.batchSize, ++step) {
            const std::int64_t hi = std::min(n, lo + cfg.batchSize);
            const std::int64_t B = hi - lo;
            Tensor xb = detail::gather_rows(ds.inputs, perm, lo, hi);
            Tensor eps = detail::gaussian_tensor(noise_rng, {B, latent_d});

            t.truncate(base);
            Var x = t.leaf(xb);
            Var enc = res.vae.encoder.forward_tape(t, x, ActMode::native, &enc_params);
            Var mu = slice_cols(enc, 0, latent_d);
            Var logvar = 4.0 * tanh(slice_cols(enc, latent_d, latent_d) / 4.0);
            Var z = mu + exp(0.5 * logvar) * t.leaf(eps);
            Var xhat = res.vae.decoder.forward_tape(t, z, ActMode::native, &dec_params);
            Var diff = xhat - x;
            Var loss = sum_all(square(diff)) / static_cast<double>(B * D);
            Var kl = scale(sum_all(square(mu) + exp(logvar) - logvar - 1.0),
                           0.5 / static_cast<double>(B));
            loss = loss + cfg.klWeight * kl;
            if (cfg.featureWeight > 0) {
                Var fd = matmul_nn(diff, t.leaf(P));
                loss = loss + scale(sum_all(square(fd)),
                                    cfg.featureWeight / static_cast<double>(B * P.shape[1]));
            }

            const double lt = loss.val().at(0);
            if (!std::isfinite(lt))
                fail("train_vae: non-finite loss at epoch " + std::to_string(epoch) +
                     " step " + std::to_string(step));
            epoch_loss += lt * static_cast<double>(B);

            std::vector<Var> gv = t.grad(loss, all);
            std::vector<Tensor> grads;
            grads.reserve(gv.size());
            for (Var& g : gv) grads.push_back(g.val());
            adam.step(value_ptrs, grads, cosine_lr(cfg.learningRate, step, total_steps));
            for (std::size_t k = 0; k < all.size(); ++k) t.set_leaf(all[k], values[k]);
        }
        res.lossHistory.push_back(epoch_loss / static_cast<double>(n));
    }

    detail::install_params(res.vae.encoder, enc_params);
    detail::install_params(res.vae.decoder, dec_params);
    return res;
}

// ---------------------------------------------------------------------------
// Classifier: D -> 256 ReLU -> 128 ReLU -> numClasses. Trained with softmax
// cross-entropy; rows labeled kBaselineLabel are excluded.

struct ClassifierTrainResult {
    Network net;
    std::vector<double> lossHistory; // per-epoch mean cross-entropy
    double trainAccuracy = 0;
};

inline std::int64_t argmax_row(const Tensor& logits, std::int64_t row) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < logits.shape[1]; ++j)
        if (logits.at(row, j) > logits.at(row, best)) best = j;
    return best;
}

inline double classifier_accuracy(const Network& net, const Tensor& X,
                                  const std::vector<std::int64_t>& labels) {
    if (static_cast<std::int64_t>(labels.size()) != X.shape[0])
        fail("classifier_accuracy: label/count mismatch");
    Tensor logits = net.forward(X);
    std::int64_t hit = 0, tot = 0;
    for (std::int64_t i = 0; i < X.shape[0]; ++i) {
        if (labels[static_cast<std::size_t>(i)] == kBaselineLabel) continue;
        ++tot;
        if (argmax_row(logits, i) == labels[static_cast<std::size_t>(i)]) ++hit;
    }
    return tot ? static_cast<double>(hit) / static_cast<double>(tot) : 0.0;
}

inline ClassifierTrainResult train_classifier(const Tensor& X,
                                              const std::vector<std::int64_t>& labels,
                                              std::int64_t numClasses,
                                              const TrainConfig& cfg) {
    cfg.validate();
    if (X.shape.size() != 2) fail("train_classifier: inputs must be 2-D");
    if (static_cast<std::int64_t>(labels.size()) != X.shape[0])
        fail("train_classifier: label/count mismatch");
    if (numClasses < 2) fail("train_classifier: need at least 2 classes");

    // Drop baseline rows; reject out-of-range labels.
    std::vector<std::int64_t> keep;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kBaselineLabel) continue;
        if (labels[i] < 0 || labels[i] >= numClasses)
            fail("train_classifier: label " + std::to_string(labels[i]) +
                 " out of range [0," + std::to_string(numClasses) + ")");
        keep.push_back(static_cast<std::int64_t>(i));
    }
    if (keep.empty()) fail("train_classifier: no labeled rows");
    const std::int64_t n = static_cast<std::int64_t>(keep.size());
    const std::int64_t D = X.shape[1];

    Rng init_rng = Rng::substream(cfg.seed, 0);
    Rng perm_rng = Rng::substream(cfg.seed, 1);

    ClassifierTrainResult res;
    detail::init_network(res.net, init_rng, {D, 256, 128, numClasses},
                         {Act::relu, Act::relu, Act::linear});

    Tape t;
    auto params = res.net.param_leaves(t);
    std::vector<Var> all;
    std::vector<Tensor> values;
    for (auto& pr : params) {
        all.push_back(pr.first);
        all.push_back(pr.second);
    }
    for (const Var& v : all) values.push_back(v.val());
    std::vector<Tensor*> value_ptrs;
    for (Tensor& v : values) value_ptrs.push_back(&v);
    const std::int64_t base = t.size();

    Adam adam;
    std::vector<std::int64_t> perm = keep;
    std::int64_t step = 0;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        perm_rng.shuffle(perm);
        double epoch_loss = 0;
        for (std::int64_t lo = 0; lo < n; lo += cfg.batchSize, ++step) {
            const std::int64_t hi = std::min(n, lo + cfg.batchSize);
            const std::int64_t B = hi - lo;
            Tensor xb = detail::gather_rows(X, perm, lo, hi);
            Tensor onehot = Tensor::zeros({B, numClasses});
            for (std::int64_t r = 0; r < B; ++r)
                onehot.at(r, labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(lo + r)])]) = 1.0;

            t.truncate(base);
            Var x = t.leaf(xb);
            Var logits = res.net.forward_tape(t, x, ActMode::native, &params);
            // Stable log-softmax: subtract the per-row max as a constant. The
            // shift cancels in the softmax, so gradients are unaffected.
            Tensor rm(Shape{B, std::int64_t{1}});
            {
                const Tensor& lv = logits.val();
                for (std::int64_t r = 0; r < B; ++r) {
                    double m = lv.at(r, 0);
                    for (std::int64_t j = 1; j < numClasses; ++j)
                        m = std::max(m, lv.at(r, j));
                    rm.at(r, 0) = m;
                }
            }
            Var s = logits - bcast_cols(t.leaf(rm), numClasses);
            Var logZ = log(sum_cols(exp(s)));                    // [B,1]
            Var picked = sum_cols(mul(s, t.leaf(onehot)));       // [B,1]
            Var loss = sum_all(logZ - picked) / static_cast<double>(B);

            const double lt = loss.val().at(0);
            if (!std::isfinite(lt))
                fail("train_classifier: non-finite loss at epoch " + std::to_string(epoch) +
                     " step " + std::to_string(step));
            epoch_loss += lt * static_cast<double>(B);

            std::vector<Var> gv = t.grad(loss, all);
            std::vector<Tensor> grads;
            grads.reserve(gv.size());
            for (Var& g : gv) grads.push_back(g.val());
            adam.step(value_ptrs, grads, cfg.learningRate);
            for (std::size_t k = 0; k < all.size(); ++k) t.set_leaf(all[k], values[k]);
        }
        res.lossHistory.push_back(epoch_loss / static_cast<double>(n));
    }

    detail::install_params(res.net, params);
    res.trainAccuracy = classifier_accuracy(res.net, X, labels);
    return res;
}

// ---------------------------------------------------------------------------
// Attribution-facing helpers.

inline std::int64_t predicted_class(const Network& F, const Tensor& x) {
    Tensor logits = F.forward(x);
    return argmax_row(logits, 0);
}

// Gradient of the chosen-class logit wrt the input (cls < 0 picks the
// native-mode predicted class first).
inline Tensor classify_grad(const Network& F, const Tensor& x, std::int64_t cls = -1,
                            ActMode mode = ActMode::native) {
    if (x.shape.size() != 2 || x.shape[0] != 1)
        fail("classify_grad: x must be a single [1,D] row");
    if (cls < 0) cls = predicted_class(F, x);
    return F.logit_grad(x, cls, mode);
}

} // namespace manigrad
