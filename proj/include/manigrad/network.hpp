#pragma once
// MLP container used for the encoder, decoder, and classifier.
//
// Two execution paths share the same weights:
//  - forward_tape records the network on a Tape (training, attacks, anything
//    that needs recorded gradients);
//  - forward / input_vjp / input_jvp are hand-rolled batched passes over
//    pre-packed weight panels for the hot loops (geodesic solves, path
//    attributions), where tape bookkeeping would dominate.
//
// Activation modes resolve at call time and never touch the stored weights:
//  - native: activations as declared;
//  - softplus_swap: relu layers run as softplus (smooth stand-in, needed for
//    anything second-order);
//  - guided: relu layers backpropagate only non-negative gradients at active
//    units (guided backprop); forward values equal native.
#include "autodiff.hpp"
#include "gemm.hpp"
#include "tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace manigrad {

enum class Act { linear, relu, tanh, sigmoid, silu, elu, softplus };
enum class ActMode { native, softplus_swap, guided };

inline const char* act_name(Act a) {
    switch (a) {
        case Act::linear: return "linear";
        case Act::relu: return "relu";
        case Act::tanh: return "tanh";
        case Act::sigmoid: return "sigmoid";
        case Act::silu: return "silu";
        case Act::elu: return "elu";
        case Act::softplus: return "softplus";
    }
    return "?";
}

inline Act act_from_name(const std::string& s) {
    for (Act a : {Act::linear, Act::relu, Act::tanh, Act::sigmoid, Act::silu,
                  Act::elu, Act::softplus})
        if (s == act_name(a)) return a;
    fail("unknown activation '" + s + "'");
}

inline bool act_is_smooth(Act a) { return a != Act::relu; }

struct Layer {
    Tensor W; // [in, out]
    Tensor b; // [1, out]
    Act act = Act::linear;
};

// Inputs and pre-activations captured by forward() for the manual passes.
struct ForwardTrace {
    Tensor in;
    std::vector<Tensor> pre; // pre-activation of each layer
};

namespace detail {

inline Act resolve_act(Act a, ActMode mode) {
    if (a == Act::relu && mode == ActMode::softplus_swap) return Act::softplus;
    return a;
}

inline double act_apply(Act a, double x) {
    switch (a) {
        case Act::linear: return x;
        case Act::relu: return x > 0 ? x : 0.0;
        case Act::tanh: return std::tanh(x);
        case Act::sigmoid: return sigmoid_scalar(x);
        case Act::silu: return x * sigmoid_scalar(x);
        case Act::elu: return x > 0 ? x : std::expm1(x);
        case Act::softplus: return softplus_scalar(x);
    }
    return x;
}

// derivative evaluated at the pre-activation value
inline double act_deriv(Act a, double x) {
    switch (a) {
        case Act::linear: return 1.0;
        case Act::relu: return x > 0 ? 1.0 : 0.0;
        case Act::tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case Act::sigmoid: {
            const double s = sigmoid_scalar(x);
            return s * (1.0 - s);
        }
        case Act::silu: {
            const double s = sigmoid_scalar(x);
            return s * (1.0 + x * (1.0 - s));
        }
        case Act::elu: return x > 0 ? 1.0 : std::exp(x);
        case Act::softplus: return sigmoid_scalar(x);
    }
    return 1.0;
}

} // namespace detail

class Network {
public:
    std::vector<Layer> layers;

    Network() = default;

    void add_layer(Tensor W, Tensor b, Act act) {
        if (W.shape.size() != 2) fail("Network: W must be 2-D, got " + shape_str(W.shape));
        if (!(b.shape == Shape{1, W.shape[1]}))
            fail("Network: b must be [1," + std::to_string(W.shape[1]) + "], got " +
                 shape_str(b.shape));
        if (!layers.empty() && layers.back().W.shape[1] != W.shape[0])
            fail("Network: layer input " + std::to_string(W.shape[0]) +
                 " does not chain from previous output " +
                 std::to_string(layers.back().W.shape[1]));
        layers.push_back(Layer{std::move(W), std::move(b), act});
        repack_layer(layers.size() - 1);
    }

    std::size_t depth() const { return layers.size(); }
    std::int64_t dim_in() const {
        if (layers.empty()) fail("Network: no layers");
        return layers.front().W.shape[0];
    }
    std::int64_t dim_out() const {
        if (layers.empty()) fail("Network: no layers");
        return layers.back().W.shape[1];
    }

    // Call after mutating layer weights in place (training does).
    void repack() {
        for (std::size_t l = 0; l < layers.size(); ++l) repack_layer(l);
    }

    // Batched forward: X [B, dim_in] -> [B, dim_out]. Captures the trace
    // needed by input_vjp / input_jvp when requested.
    Tensor forward(const Tensor& X, ActMode mode = ActMode::native,
                   ForwardTrace* trace = nullptr) const {
        check_input(X);
        const std::int64_t B = X.shape[0];
        if (trace) {
            trace->in = X;
            trace->pre.clear();
            trace->pre.reserve(layers.size());
        }
        Tensor h = X;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const Layer& L = layers[l];
            const std::int64_t out = L.W.shape[1];
            Tensor y(Shape{B, out});
            gemm_nn_packed(B, out, L.W.shape[0], h.data.data(), packed_[l].data(),
                           y.data.data());
            for (std::int64_t i = 0; i < B; ++i)
                for (std::int64_t j = 0; j < out; ++j) y.at(i, j) += L.b.at(j);
            if (trace) trace->pre.push_back(y);
            const Act act = detail::resolve_act(L.act, mode);
            for (auto& v : y.data) v = detail::act_apply(act, v);
            h = std::move(y);
        }
        return h;
    }

    // U [B, dim_out] -> U J = gradient wrt the input, [B, dim_in].
    // trace must come from forward() with the same mode (pre-activations of
    // relu and softplus_swap layers coincide, so reuse across those two is
    // fine; guided shares native's forward).
    Tensor input_vjp(const ForwardTrace& trace, const Tensor& U,
                     ActMode mode = ActMode::native) const {
        if (trace.pre.size() != layers.size()) fail("input_vjp: trace/network mismatch");
        const std::int64_t B = trace.in.shape[0];
        if (!(U.shape == Shape{B, dim_out()}))
            fail("input_vjp: seed shape " + shape_str(U.shape) + " != [" +
                 std::to_string(B) + "," + std::to_string(dim_out()) + "]");
        Tensor g = U;
        for (std::size_t li = layers.size(); li-- > 0;) {
            const Layer& L = layers[li];
            const Tensor& pre = trace.pre[li];
            const Act act = detail::resolve_act(L.act, mode);
            if (L.act == Act::relu && mode == ActMode::guided) {
                // guided backprop: clamp negative gradients, mask inactive units
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    g.data[i] = pre.data[i] > 0 ? std::max(g.data[i], 0.0) : 0.0;
            } else {
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    g.data[i] *= detail::act_deriv(act, pre.data[i]);
            }
            Tensor gin(Shape{B, L.W.shape[0]});
            gemm_nt(B, L.W.shape[0], L.W.shape[1], g.data.data(), L.W.data.data(),
                    gin.data.data());
            g = std::move(gin);
        }
        return g;
    }

    // dX [B, dim_in] -> J dX (directional derivative), [B, dim_out].
    // guided mode has no forward-mode meaning; it is treated as native.
    Tensor input_jvp(const ForwardTrace& trace, const Tensor& dX,
                     ActMode mode = ActMode::native) const {
        if (trace.pre.size() != layers.size()) fail("input_jvp: trace/network mismatch");
        const std::int64_t B = trace.in.shape[0];
        if (!(dX.shape == Shape{B, dim_in()}))
            fail("input_jvp: tangent shape " + shape_str(dX.shape) + " != [" +
                 std::to_string(B) + "," + std::to_string(dim_in()) + "]");
        Tensor d = dX;
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const Layer& L = layers[li];
            const Tensor& pre = trace.pre[li];
            const Act act = detail::resolve_act(L.act, mode);
            Tensor dn(Shape{B, L.W.shape[1]});
            gemm_nn_packed(B, L.W.shape[1], L.W.shape[0], d.data.data(),
                           packed_[li].data(), dn.data.data());
            for (std::size_t i = 0; i < dn.data.size(); ++i)
                dn.data[i] *= detail::act_deriv(act, pre.data[i]);
            d = std::move(dn);
        }
        return d;
    }

    // Parameter leaves for training: one (W, b) Var pair per layer.
    std::vector<std::pair<Var, Var>> param_leaves(Tape& t) const {
        std::vector<std::pair<Var, Var>> out;
        out.reserve(layers.size());
        for (const Layer& L : layers) out.emplace_back(t.leaf(L.W), t.leaf(L.b));
        return out;
    }

    // Record the forward pass on a tape. If params is given (from
    // param_leaves), those Vars supply the weights so gradients can flow to
    // them; otherwise the stored tensors enter as fresh constant leaves.
    Var forward_tape(Tape& t, Var x, ActMode mode = ActMode::native,
                     const std::vector<std::pair<Var, Var>>* params = nullptr) const {
        if (x.shape().size() != 2 || x.shape()[1] != dim_in())
            fail("forward_tape: input shape " + shape_str(x.shape()) + " != [B," +
                 std::to_string(dim_in()) + "]");
        if (params && params->size() != layers.size())
            fail("forward_tape: params/layers mismatch");
        Var h = x;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const Layer& L = layers[l];
            Var W = params ? (*params)[l].first : t.leaf(L.W);
            Var b = params ? (*params)[l].second : t.leaf(L.b);
            h = add_rowvec(matmul_nn(h, W), b);
            switch (detail::resolve_act(L.act, mode)) {
                case Act::linear: break;
                case Act::relu: h = mode == ActMode::guided ? grelu(h) : relu(h); break;
                case Act::tanh: h = manigrad::tanh(h); break;
                case Act::sigmoid: h = sigmoid(h); break;
                case Act::silu: h = silu(h); break;
                case Act::elu: h = elu(h); break;
                case Act::softplus: h = softplus(h); break;
            }
        }
        return h;
    }

    // Gradient of one output logit wrt the input, for a single row x [1,D].
    Tensor logit_grad(const Tensor& x, std::int64_t logit,
                      ActMode mode = ActMode::native) const {
        if (logit < 0 || logit >= dim_out()) fail("logit_grad: logit index out of range");
        ForwardTrace tr;
        forward(x, mode, &tr);
        Tensor seed = Tensor::zeros({x.shape[0], dim_out()});
        for (std::int64_t i = 0; i < x.shape[0]; ++i) seed.at(i, logit) = 1.0;
        return input_vjp(tr, seed, mode);
    }

private:
    std::vector<std::vector<double>> packed_; // pack_b(W) per layer

    void repack_layer(std::size_t l) {
        const Tensor& W = layers[l].W;
        if (packed_.size() < layers.size()) packed_.resize(layers.size());
        packed_[l].resize(static_cast<std::size_t>(packed_b_size(W.shape[0], W.shape[1])));
        pack_b(W.shape[0], W.shape[1], W.data.data(), packed_[l].data());
    }

    void check_input(const Tensor& X) const {
        if (X.shape.size() != 2 || X.shape[1] != dim_in())
            fail("Network: input shape " + shape_str(X.shape) + " != [B," +
                 std::to_string(dim_in()) + "]");
    }
};

} // namespace manigrad
