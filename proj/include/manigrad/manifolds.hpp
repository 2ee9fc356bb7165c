#pragma once
// The decoder abstraction the geodesic machinery runs on, analytic test
// manifolds with closed-form metrics, and adapters for trained networks and
// tape-recorded maps.
//
// All three derivative entry points are batched over rows: Z is [P, d], and
// row i of the result uses the Jacobian of the map at Z's row i.
#include "autodiff.hpp"
#include "network.hpp"
#include "tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>

namespace manigrad {

class Decoder {
public:
    virtual ~Decoder() = default;
    virtual std::int64_t dim_in() const = 0;  // latent d
    virtual std::int64_t dim_out() const = 0; // data D
    virtual Tensor fwd(const Tensor& Z) const = 0;                   // [P,d] -> [P,D]
    virtual Tensor vjp(const Tensor& Z, const Tensor& U) const = 0;  // U [P,D] -> U J, [P,d]
    virtual Tensor jvp(const Tensor& Z, const Tensor& V) const = 0;  // V [P,d] -> J V, [P,D]

protected:
    void check_points(const Tensor& Z) const {
        if (Z.shape.size() != 2 || Z.shape[1] != dim_in())
            fail("Decoder: points shape " + shape_str(Z.shape) + " != [P," +
                 std::to_string(dim_in()) + "]");
    }
    void check_cotangents(const Tensor& Z, const Tensor& U) const {
        check_points(Z);
        if (!(U.shape == Shape{Z.shape[0], dim_out()}))
            fail("Decoder: cotangent shape " + shape_str(U.shape) + " != [P," +
                 std::to_string(dim_out()) + "]");
    }
    void check_tangents(const Tensor& Z, const Tensor& V) const {
        check_points(Z);
        if (!(V.shape == Shape{Z.shape[0], dim_in()}))
            fail("Decoder: tangent shape " + shape_str(V.shape) + " != [P," +
                 std::to_string(dim_in()) + "]");
    }
};

class IdentityDecoder final : public Decoder {
public:
    explicit IdentityDecoder(std::int64_t d) : d_(d) {}
    std::int64_t dim_in() const override { return d_; }
    std::int64_t dim_out() const override { return d_; }
    Tensor fwd(const Tensor& Z) const override {
        check_points(Z);
        return Z;
    }
    Tensor vjp(const Tensor& Z, const Tensor& U) const override {
        check_cotangents(Z, U);
        return U;
    }
    Tensor jvp(const Tensor& Z, const Tensor& V) const override {
        check_tangents(Z, V);
        return V;
    }

private:
    std::int64_t d_;
};

// Affine map z -> z A + c. Flat pullback metric A A^T; geodesics are straight.
class LinearDecoder final : public Decoder {
public:
    LinearDecoder(Tensor A, Tensor c) : A_(std::move(A)), c_(std::move(c)) {
        if (A_.shape.size() != 2) fail("LinearDecoder: A must be 2-D");
        if (!(c_.shape == Shape{1, A_.shape[1]}))
            fail("LinearDecoder: c must be [1," + std::to_string(A_.shape[1]) + "]");
    }
    explicit LinearDecoder(Tensor A)
        : LinearDecoder(Tensor(A), Tensor::zeros({1, A.shape.size() == 2 ? A.shape[1] : 1})) {}
    std::int64_t dim_in() const override { return A_.shape[0]; }
    std::int64_t dim_out() const override { return A_.shape[1]; }
    Tensor fwd(const Tensor& Z) const override {
        check_points(Z);
        Tensor out(Shape{Z.shape[0], dim_out()});
        gemm_nn(Z.shape[0], dim_out(), dim_in(), Z.data.data(), A_.data.data(),
                out.data.data());
        for (std::int64_t i = 0; i < Z.shape[0]; ++i)
            for (std::int64_t j = 0; j < dim_out(); ++j) out.at(i, j) += c_.at(j);
        return out;
    }
    Tensor vjp(const Tensor& Z, const Tensor& U) const override {
        check_cotangents(Z, U);
        Tensor out(Shape{Z.shape[0], dim_in()});
        gemm_nt(Z.shape[0], dim_in(), dim_out(), U.data.data(), A_.data.data(),
                out.data.data());
        return out;
    }
    Tensor jvp(const Tensor& Z, const Tensor& V) const override {
        check_tangents(Z, V);
        Tensor out(Shape{Z.shape[0], dim_out()});
        gemm_nn(Z.shape[0], dim_out(), dim_in(), V.data.data(), A_.data.data(),
                out.data.data());
        return out;
    }

private:
    Tensor A_; // [d, D]
    Tensor c_; // [1, D]
};

// Unit sphere chart (theta, phi) -> (sin t cos p, sin t sin p, cos t).
// Pullback metric G = diag(1, sin^2 theta); geodesics are great circles.
class SphereDecoder final : public Decoder {
public:
    std::int64_t dim_in() const override { return 2; }
    std::int64_t dim_out() const override { return 3; }
    Tensor fwd(const Tensor& Z) const override {
        check_points(Z);
        Tensor out(Shape{Z.shape[0], 3});
        for (std::int64_t i = 0; i < Z.shape[0]; ++i) {
            const double t = Z.at(i, 0), p = Z.at(i, 1);
            out.at(i, 0) = std::sin(t) * std::cos(p);
            out.at(i, 1) = std::sin(t) * std::sin(p);
            out.at(i, 2) = std::cos(t);
        }
        return out;
    }
    Tensor vjp(const Tensor& Z, const Tensor& U) const override {
        check_cotangents(Z, U);
        Tensor out(Shape{Z.shape[0], 2});
        for (std::int64_t i = 0; i < Z.shape[0]; ++i) {
            const double t = Z.at(i, 0), p = Z.at(i, 1);
            const double u0 = U.at(i, 0), u1 = U.at(i, 1), u2 = U.at(i, 2);
            out.at(i, 0) = u0 * std::cos(t) * std::cos(p) + u1 * std::cos(t) * std::sin(p) -
                           u2 * std::sin(t);
            out.at(i, 1) = -u0 * std::sin(t) * std::sin(p) + u1 * std::sin(t) * std::cos(p);
        }
        return out;
    }
    Tensor jvp(const Tensor& Z, const Tensor& V) const override {
        check_tangents(Z, V);
        Tensor out(Shape{Z.shape[0], 3});
        for (std::int64_t i = 0; i < Z.shape[0]; ++i) {
            const double t = Z.at(i, 0), p = Z.at(i, 1);
            const double vt = V.at(i, 0), vp = V.at(i, 1);
            out.at(i, 0) = vt * std::cos(t) * std::cos(p) - vp * std::sin(t) * std::sin(p);
            out.at(i, 1) = vt * std::cos(t) * std::sin(p) + vp * std::sin(t) * std::cos(p);
            out.at(i, 2) = -vt * std::sin(t);
        }
        return out;
    }

    // Great-circle distance between charts (t0,p0) and (t1,p1).
    static double geodesic_length(double t0, double p0, double t1, double p1) {
        const double c = std::sin(t0) * std::sin(t1) * std::cos(p1 - p0) +
                         std::cos(t0) * std::cos(t1);
        return std::acos(std::min(1.0, std::max(-1.0, c)));
    }
};

// Swiss roll (t, h) -> (t cos t, h, t sin t). Pullback metric diag(1+t^2, 1).
class SwissRollDecoder final : public Decoder {
public:
    std::int64_t dim_in() const override { return 2; }
    std::int64_t dim_out() const override { return 3; }
    Tensor fwd(const Tensor& Z) const override {
        check_points(Z);
        Tensor out(Shape{Z.shape[0], 3});
        for (std::int64_t i = 0; i < Z.shape[0]; ++i) {
            const double t = Z.at(i, 0), h = Z.at(i, 1);
            out.at(i, 0) = t * std::cos(t);
            out.at(i, 1) = h;
            out.at(i, 2) = t * std::sin(t);
        }
        return out;
    }
    Tensor vjp(const Tensor& Z, const Tensor& U) const override {
        check_cotangents(Z, U);
        Tensor out(Shape{Z.shape[0], 2});
        for (std::int64_t i = 0; i < Z.shape[0]; ++i) {
            const double t = Z.at(i, 0);
            const double dxdt = std::cos(t) - t * std::sin(t);
            const double dzdt = std::sin(t) + t * std::cos(t);
            out.at(i, 0) = U.at(i, 0) * dxdt + U.at(i, 2) * dzdt;
            out.at(i, 1) = U.at(i, 1);
        }
        return out;
    }
    Tensor jvp(const Tensor& Z, const Tensor& V) const override {
        check_tangents(Z, V);
        Tensor out(Shape{Z.shape[0], 3});
        for (std::int64_t i = 0; i < Z.shape[0]; ++i) {
            const double t = Z.at(i, 0);
            const double dxdt = std::cos(t) - t * std::sin(t);
            const double dzdt = std::sin(t) + t * std::cos(t);
            out.at(i, 0) = V.at(i, 0) * dxdt;
            out.at(i, 1) = V.at(i, 1);
            out.at(i, 2) = V.at(i, 0) * dzdt;
        }
        return out;
    }
};

// A trained MLP decoder. Requires smooth activations so the Jacobian exists
// everywhere (the manifold metric is built from it).
class NetworkDecoder final : public Decoder {
public:
    explicit NetworkDecoder(const Network* net, ActMode mode = ActMode::native)
        : net_(net), mode_(mode) {
        for (const Layer& L : net->layers)
            if (!act_is_smooth(detail::resolve_act(L.act, mode)))
                fail("NetworkDecoder: decoder needs smooth activations, found " +
                     std::string(act_name(L.act)));
    }
    std::int64_t dim_in() const override { return net_->dim_in(); }
    std::int64_t dim_out() const override { return net_->dim_out(); }
    Tensor fwd(const Tensor& Z) const override {
        check_points(Z);
        return net_->forward(Z, mode_);
    }
    Tensor vjp(const Tensor& Z, const Tensor& U) const override {
        check_cotangents(Z, U);
        ForwardTrace tr;
        net_->forward(Z, mode_, &tr);
        return net_->input_vjp(tr, U, mode_);
    }
    Tensor jvp(const Tensor& Z, const Tensor& V) const override {
        check_tangents(Z, V);
        ForwardTrace tr;
        net_->forward(Z, mode_, &tr);
        return net_->input_jvp(tr, V, mode_);
    }

private:
    const Network* net_;
    ActMode mode_;
};

// The mu head of a VAE encoder (data -> first `latent` of the network's
// outputs), exposed through the same map interface so the encoder-approximated
// geodesic gradient can reuse the batched jvp machinery.
class EncoderMeanMap final : public Decoder {
public:
    EncoderMeanMap(const Network* net, std::int64_t latent) : net_(net), d_(latent) {
        if (latent <= 0 || net->dim_out() < latent)
            fail("EncoderMeanMap: network output smaller than latent dimension");
    }
    std::int64_t dim_in() const override { return net_->dim_in(); }
    std::int64_t dim_out() const override { return d_; }
    Tensor fwd(const Tensor& X) const override {
        check_points(X);
        return take_head(net_->forward(X));
    }
    Tensor vjp(const Tensor& X, const Tensor& U) const override {
        check_cotangents(X, U);
        ForwardTrace tr;
        net_->forward(X, ActMode::native, &tr);
        Tensor Ufull = Tensor::zeros({X.shape[0], net_->dim_out()});
        for (std::int64_t i = 0; i < X.shape[0]; ++i)
            for (std::int64_t j = 0; j < d_; ++j) Ufull.at(i, j) = U.at(i, j);
        return net_->input_vjp(tr, Ufull);
    }
    Tensor jvp(const Tensor& X, const Tensor& V) const override {
        check_tangents(X, V);
        ForwardTrace tr;
        net_->forward(X, ActMode::native, &tr);
        return take_head(net_->input_jvp(tr, V));
    }

private:
    Tensor take_head(const Tensor& full) const {
        Tensor out(Shape{full.shape[0], d_});
        for (std::int64_t i = 0; i < full.shape[0]; ++i)
            for (std::int64_t j = 0; j < d_; ++j) out.at(i, j) = full.at(i, j);
        return out;
    }
    const Network* net_;
    std::int64_t d_;
};

// Wraps an arbitrary tape-built map as a Decoder; the reference
// implementation the hand-rolled decoders are tested against.
class TapeDecoder final : public Decoder {
public:
    using Builder = std::function<Var(Tape&, Var)>; // [P,d] Var -> [P,D] Var
    TapeDecoder(std::int64_t d, std::int64_t D, Builder b)
        : d_(d), D_(D), build_(std::move(b)) {}
    std::int64_t dim_in() const override { return d_; }
    std::int64_t dim_out() const override { return D_; }
    Tensor fwd(const Tensor& Z) const override {
        check_points(Z);
        Tape t;
        return build_(t, t.leaf(Z)).val();
    }
    Tensor vjp(const Tensor& Z, const Tensor& U) const override {
        check_cotangents(Z, U);
        Tape t;
        Var z = t.leaf(Z);
        Var y = build_(t, z);
        return t.grad(y, {z}, t.leaf(U))[0].val();
    }
    Tensor jvp(const Tensor& Z, const Tensor& V) const override {
        check_tangents(Z, V);
        Tape t;
        Var z = t.leaf(Z);
        Var y = build_(t, z);
        return manigrad::jvp(y, z, t.leaf(V)).val();
    }

private:
    std::int64_t d_, D_;
    Builder build_;
};

} // namespace manigrad
