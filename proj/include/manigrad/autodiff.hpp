#pragma once
// Reverse-mode autodiff on a flat tape of f64 tensors.
//
// Every operation evaluates eagerly and records a node. The reverse pass
// (Tape::grad) does not write into side buffers: it *emits the adjoint
// computation as new tape nodes* built from the same primitives. Gradients
// are therefore ordinary tape values and can themselves be differentiated,
// which is how second-order quantities (Hessian-vector products, gradients
// of attribution maps) and forward-mode products (jvp) are obtained here.
//
// ReLU and guided-ReLU backward passes multiply by a step-function mask whose
// derivative is zero almost everywhere. Nodes emitted by those rules are
// flagged, and a later grad() that tries to differentiate through a flagged
// node throws instead of silently returning a zero second derivative; swap
// the activation for softplus (Network supports this) to get usable
// second-order behaviour.
#include "gemm.hpp"
#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace manigrad {

enum class Op {
    leaf,
    add,
    sub,
    mul,
    scale,      // aux: factor
    shift,      // aux: addend
    neg,
    recip,
    matmul_nn,  // [M,K]*[K,N]
    matmul_nt,  // [M,K]*[N,K]^T
    matmul_tn,  // [K,M]^T*[K,N]
    add_rowvec, // [M,N] + [1,N]
    sum_rows,   // [M,N] -> [1,N]
    bcast_rows, // [1,N] -> [M,N]
    sum_cols,   // [M,N] -> [M,1]
    bcast_cols, // [M,1] -> [M,N]
    sum_all,    // -> [1]
    bcast_all,  // [1] -> ints shape
    tanh,
    sigmoid,
    silu,
    elu,
    softplus,
    relu,
    grelu, // forward = relu; backward = guided-backprop rule
    exp,
    log,
    square,
    sqrt,
    sin,
    cos,
    mask_gt0, // 1 where x > 0 else 0; derivative defined as 0
    mask_lt0, // 1 where x < 0 else 0; derivative defined as 0
    min0,     // min(x, 0)
    concat_rows,
    slice_rows, // ints: {row0}
    pad_rows,   // ints: {row0, out_rows}
    slice_cols, // ints: {col0}
    pad_cols,   // ints: {col0, out_cols}
    blur2,      // aux: sigma; ints: {H, W}
    reshape,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::scale: return "scale";
        case Op::shift: return "shift";
        case Op::neg: return "neg";
        case Op::recip: return "recip";
        case Op::matmul_nn: return "matmul_nn";
        case Op::matmul_nt: return "matmul_nt";
        case Op::matmul_tn: return "matmul_tn";
        case Op::add_rowvec: return "add_rowvec";
        case Op::sum_rows: return "sum_rows";
        case Op::bcast_rows: return "bcast_rows";
        case Op::sum_cols: return "sum_cols";
        case Op::bcast_cols: return "bcast_cols";
        case Op::sum_all: return "sum_all";
        case Op::bcast_all: return "bcast_all";
        case Op::tanh: return "tanh";
        case Op::sigmoid: return "sigmoid";
        case Op::silu: return "silu";
        case Op::elu: return "elu";
        case Op::softplus: return "softplus";
        case Op::relu: return "relu";
        case Op::grelu: return "grelu";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::square: return "square";
        case Op::sqrt: return "sqrt";
        case Op::sin: return "sin";
        case Op::cos: return "cos";
        case Op::mask_gt0: return "mask_gt0";
        case Op::mask_lt0: return "mask_lt0";
        case Op::min0: return "min0";
        case Op::concat_rows: return "concat_rows";
        case Op::slice_rows: return "slice_rows";
        case Op::pad_rows: return "pad_rows";
        case Op::slice_cols: return "slice_cols";
        case Op::pad_cols: return "pad_cols";
        case Op::blur2: return "blur2";
        case Op::reshape: return "reshape";
    }
    return "?";
}

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::int64_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& val() const;
    const Shape& shape() const;
};

// Scalar sigmoid in a numerically safe form (no exp overflow).
inline double sigmoid_scalar(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_scalar(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// Gaussian blur of a single H*W image (row-major), truncated at radius
// ceil(3*sigma), zero padding at the borders, kernel renormalized to sum 1.
// The 2-D kernel factorizes, so each axis pass uses a 1-D kernel normalized
// by its own sum; the composition equals the globally renormalized 2-D blur.
// sigma == 0 is the identity. Symmetric kernel + zero padding make the map
// self-adjoint, which the tape backward rule relies on.
inline Tensor blur2_tensor(const Tensor& x, double sigma, std::int64_t H, std::int64_t W) {
    if (x.size() != H * W)
        fail("blur2: input size " + std::to_string(x.size()) + " != H*W = " +
             std::to_string(H * W));
    if (sigma < 0) fail("blur2: negative sigma");
    if (sigma == 0) return x;
    const std::int64_t r = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double ksum = 0;
    for (std::int64_t d = -r; d <= r; ++d) {
        const double w = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
        k[static_cast<std::size_t>(d + r)] = w;
        ksum += w;
    }
    for (auto& w : k) w /= ksum;
    Tensor tmp(Shape{H, W});
    // horizontal pass
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
            double s = 0;
            for (std::int64_t d = -r; d <= r; ++d) {
                const std::int64_t jj = j + d;
                if (jj < 0 || jj >= W) continue;
                s += k[static_cast<std::size_t>(d + r)] * x.at(i * W + jj);
            }
            tmp.at(i, j) = s;
        }
    // vertical pass
    Tensor out(x.shape);
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
            double s = 0;
            for (std::int64_t d = -r; d <= r; ++d) {
                const std::int64_t ii = i + d;
                if (ii < 0 || ii >= H) continue;
                s += k[static_cast<std::size_t>(d + r)] * tmp.at(ii, j);
            }
            out.at(i * W + j) = s;
        }
    return out;
}

class Tape {
public:
    struct Node {
        Op op = Op::leaf;
        std::int64_t a = -1, b = -1;
        Tensor val;
        double aux = 0;
        Shape ints;          // integer parameters / target shape (op-specific)
        bool artifact = false; // emitted by a relu/grelu backward rule
    };

    std::vector<Node> nodes;

    std::int64_t size() const { return static_cast<std::int64_t>(nodes.size()); }

    // Drops every node with id >= n. Vars pointing at dropped nodes become
    // invalid; only use this to unwind back to a checkpoint taken earlier.
    void truncate(std::int64_t n) {
        if (n < 0 || n > size()) fail("Tape::truncate: bad checkpoint");
        nodes.resize(static_cast<std::size_t>(n));
    }

    Var leaf(Tensor v) {
        return push(Op::leaf, -1, -1, std::move(v));
    }

    // Replace a leaf's value (same shape). Nodes computed from the old value
    // are stale afterwards; truncate back past them before reusing the tape.
    void set_leaf(Var v, Tensor val) {
        check_var(v);
        Node& n = nodes[static_cast<std::size_t>(v.id)];
        if (n.op != Op::leaf) fail("Tape::set_leaf: not a leaf");
        if (!(n.val.shape == val.shape))
            fail("Tape::set_leaf: shape " + shape_str(val.shape) +
                 " != existing " + shape_str(n.val.shape));
        n.val = std::move(val);
    }

    Var push(Op op, std::int64_t a, std::int64_t b, Tensor val, double aux = 0,
             Shape ints = {}) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.val = std::move(val);
        n.aux = aux;
        n.ints = std::move(ints);
        n.artifact = emitting_artifact_;
        nodes.push_back(std::move(n));
        return Var{this, size() - 1};
    }

    void check_var(const Var& v) const {
        if (v.tape != this) fail("Var belongs to a different tape");
        if (v.id < 0 || v.id >= size()) fail("Var id out of range (truncated tape?)");
    }

    // Reverse pass from y, emitted as new tape nodes. Returns the adjoint of
    // each entry of wrt (zeros leaf if y does not depend on it). wrt entries
    // may be any tape node, not just leaves. seed is the adjoint of y itself;
    // omitted, y must be a single element and the seed is 1.
    std::vector<Var> grad(Var y, const std::vector<Var>& wrt, Var seed = {});

    bool emitting_artifact_ = false;
};

inline const Tensor& Var::val() const {
    tape->check_var(*this);
    return tape->nodes[static_cast<std::size_t>(id)].val;
}

inline const Shape& Var::shape() const { return val().shape; }

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
    if (a.tape != b.tape) fail("Vars from different tapes");
}

inline Tensor map1(const Tensor& x, double (*f)(double)) {
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = f(x.data[i]);
    return out;
}

inline void require_2d(const Var& v, const char* who) {
    if (v.shape().size() != 2)
        fail(std::string(who) + ": need a 2-D tensor, got shape " + shape_str(v.shape()));
}

} // namespace detail

// ---- elementwise builders ----

inline Var add(Var a, Var b) {
    detail::same_tape(a, b);
    if (!(a.shape() == b.shape()))
        fail("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const Tensor& ta = a.val();
    const Tensor& tb = b.val();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    return a.tape->push(Op::add, a.id, b.id, std::move(out));
}

inline Var sub(Var a, Var b) {
    detail::same_tape(a, b);
    if (!(a.shape() == b.shape()))
        fail("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const Tensor& ta = a.val();
    const Tensor& tb = b.val();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
    return a.tape->push(Op::sub, a.id, b.id, std::move(out));
}

inline Var mul(Var a, Var b) {
    detail::same_tape(a, b);
    if (!(a.shape() == b.shape()))
        fail("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const Tensor& ta = a.val();
    const Tensor& tb = b.val();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    return a.tape->push(Op::mul, a.id, b.id, std::move(out));
}

inline Var scale(Var a, double c) {
    Tensor out(a.shape());
    const Tensor& ta = a.val();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * c;
    return a.tape->push(Op::scale, a.id, -1, std::move(out), c);
}

inline Var shift(Var a, double c) {
    Tensor out(a.shape());
    const Tensor& ta = a.val();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + c;
    return a.tape->push(Op::shift, a.id, -1, std::move(out), c);
}

inline Var neg(Var a) {
    Tensor out(a.shape());
    const Tensor& ta = a.val();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = -ta.data[i];
    return a.tape->push(Op::neg, a.id, -1, std::move(out));
}

inline Var recip(Var a) {
    Tensor out(a.shape());
    const Tensor& ta = a.val();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = 1.0 / ta.data[i];
    return a.tape->push(Op::recip, a.id, -1, std::move(out));
}

#define MANIGRAD_UNARY(name, opcode, expr)                                    \
    inline Var name(Var a) {                                                  \
        Tensor out(a.shape());                                                \
        const Tensor& ta = a.val();                                           \
        for (std::size_t i = 0; i < out.data.size(); ++i) {                   \
            const double x = ta.data[i];                                      \
            out.data[i] = (expr);                                             \
        }                                                                     \
        return a.tape->push(opcode, a.id, -1, std::move(out));                \
    }

MANIGRAD_UNARY(tanh, Op::tanh, std::tanh(x))
MANIGRAD_UNARY(sigmoid, Op::sigmoid, sigmoid_scalar(x))
MANIGRAD_UNARY(silu, Op::silu, x * sigmoid_scalar(x))
MANIGRAD_UNARY(elu, Op::elu, x > 0 ? x : std::expm1(x))
MANIGRAD_UNARY(softplus, Op::softplus, softplus_scalar(x))
MANIGRAD_UNARY(relu, Op::relu, x > 0 ? x : 0.0)
MANIGRAD_UNARY(grelu, Op::grelu, x > 0 ? x : 0.0)
MANIGRAD_UNARY(exp, Op::exp, std::exp(x))
MANIGRAD_UNARY(log, Op::log, std::log(x))
MANIGRAD_UNARY(square, Op::square, x * x)
MANIGRAD_UNARY(sqrt, Op::sqrt, std::sqrt(x))
MANIGRAD_UNARY(sin, Op::sin, std::sin(x))
MANIGRAD_UNARY(cos, Op::cos, std::cos(x))
MANIGRAD_UNARY(mask_gt0, Op::mask_gt0, x > 0 ? 1.0 : 0.0)
MANIGRAD_UNARY(mask_lt0, Op::mask_lt0, x < 0 ? 1.0 : 0.0)
MANIGRAD_UNARY(min0, Op::min0, x < 0 ? x : 0.0)

#undef MANIGRAD_UNARY

// ---- matmul / row-vector builders (2-D only) ----

inline Var matmul_nn(Var a, Var b) {
    detail::same_tape(a, b);
    detail::require_2d(a, "matmul_nn");
    detail::require_2d(b, "matmul_nn");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa[1] != sb[0])
        fail("matmul_nn: inner dims " + shape_str(sa) + " * " + shape_str(sb));
    Tensor out(Shape{sa[0], sb[1]});
    gemm_nn(sa[0], sb[1], sa[1], a.val().data.data(), b.val().data.data(), out.data.data());
    return a.tape->push(Op::matmul_nn, a.id, b.id, std::move(out));
}

inline Var matmul_nt(Var a, Var b) {
    detail::same_tape(a, b);
    detail::require_2d(a, "matmul_nt");
    detail::require_2d(b, "matmul_nt");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa[1] != sb[1])
        fail("matmul_nt: inner dims " + shape_str(sa) + " * " + shape_str(sb) + "^T");
    Tensor out(Shape{sa[0], sb[0]});
    gemm_nt(sa[0], sb[0], sa[1], a.val().data.data(), b.val().data.data(), out.data.data());
    return a.tape->push(Op::matmul_nt, a.id, b.id, std::move(out));
}

inline Var matmul_tn(Var a, Var b) {
    detail::same_tape(a, b);
    detail::require_2d(a, "matmul_tn");
    detail::require_2d(b, "matmul_tn");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa[0] != sb[0])
        fail("matmul_tn: inner dims " + shape_str(sa) + "^T * " + shape_str(sb));
    Tensor out(Shape{sa[1], sb[1]});
    gemm_tn(sa[1], sb[1], sa[0], a.val().data.data(), b.val().data.data(), out.data.data());
    return a.tape->push(Op::matmul_tn, a.id, b.id, std::move(out));
}

inline Var add_rowvec(Var a, Var b) {
    detail::same_tape(a, b);
    detail::require_2d(a, "add_rowvec");
    detail::require_2d(b, "add_rowvec");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sb[0] != 1 || sb[1] != sa[1])
        fail("add_rowvec: " + shape_str(sa) + " + " + shape_str(sb));
    Tensor out(sa);
    const Tensor& ta = a.val();
    const Tensor& tb = b.val();
    for (std::int64_t i = 0; i < sa[0]; ++i)
        for (std::int64_t j = 0; j < sa[1]; ++j) out.at(i, j) = ta.at(i, j) + tb.at(j);
    return a.tape->push(Op::add_rowvec, a.id, b.id, std::move(out));
}

// ---- reductions / broadcasts ----

inline Var sum_rows(Var a) {
    detail::require_2d(a, "sum_rows");
    const auto& s = a.shape();
    Tensor out(Shape{1, s[1]});
    const Tensor& ta = a.val();
    for (std::int64_t i = 0; i < s[0]; ++i)
        for (std::int64_t j = 0; j < s[1]; ++j) out.at(j) += ta.at(i, j);
    return a.tape->push(Op::sum_rows, a.id, -1, std::move(out));
}

inline Var bcast_rows(Var a, std::int64_t m) {
    detail::require_2d(a, "bcast_rows");
    const auto& s = a.shape();
    if (s[0] != 1) fail("bcast_rows: input must be [1,N], got " + shape_str(s));
    if (m < 1) fail("bcast_rows: bad row count");
    Tensor out(Shape{m, s[1]});
    const Tensor& ta = a.val();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < s[1]; ++j) out.at(i, j) = ta.at(j);
    return a.tape->push(Op::bcast_rows, a.id, -1, std::move(out));
}

inline Var sum_cols(Var a) {
    detail::require_2d(a, "sum_cols");
    const auto& s = a.shape();
    Tensor out(Shape{s[0], 1});
    const Tensor& ta = a.val();
    for (std::int64_t i = 0; i < s[0]; ++i) {
        double acc = 0;
        for (std::int64_t j = 0; j < s[1]; ++j) acc += ta.at(i, j);
        out.at(i) = acc;
    }
    return a.tape->push(Op::sum_cols, a.id, -1, std::move(out));
}

inline Var bcast_cols(Var a, std::int64_t n) {
    detail::require_2d(a, "bcast_cols");
    const auto& s = a.shape();
    if (s[1] != 1) fail("bcast_cols: input must be [M,1], got " + shape_str(s));
    if (n < 1) fail("bcast_cols: bad col count");
    Tensor out(Shape{s[0], n});
    const Tensor& ta = a.val();
    for (std::int64_t i = 0; i < s[0]; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = ta.at(i);
    return a.tape->push(Op::bcast_cols, a.id, -1, std::move(out));
}

inline Var sum_all(Var a) {
    double s = 0;
    for (double v : a.val().data) s += v;
    return a.tape->push(Op::sum_all, a.id, -1, Tensor::scalar(s));
}

inline Var bcast_all(Var a, Shape target) {
    if (a.val().size() != 1) fail("bcast_all: input must be a single element");
    Tensor out = Tensor::full(target, a.val().at(0));
    return a.tape->push(Op::bcast_all, a.id, -1, std::move(out), 0, std::move(target));
}

// ---- structure ops (2-D only) ----

inline Var concat_rows(Var a, Var b) {
    detail::same_tape(a, b);
    detail::require_2d(a, "concat_rows");
    detail::require_2d(b, "concat_rows");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa[1] != sb[1])
        fail("concat_rows: col mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    Tensor out(Shape{sa[0] + sb[0], sa[1]});
    std::copy(a.val().data.begin(), a.val().data.end(), out.data.begin());
    std::copy(b.val().data.begin(), b.val().data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(a.val().data.size()));
    return a.tape->push(Op::concat_rows, a.id, b.id, std::move(out));
}

inline Var slice_rows(Var a, std::int64_t row0, std::int64_t count) {
    detail::require_2d(a, "slice_rows");
    const auto& s = a.shape();
    if (row0 < 0 || count < 1 || row0 + count > s[0])
        fail("slice_rows: range [" + std::to_string(row0) + "," +
             std::to_string(row0 + count) + ") out of " + shape_str(s));
    Tensor out(Shape{count, s[1]});
    const Tensor& ta = a.val();
    std::copy(ta.data.begin() + static_cast<std::ptrdiff_t>(row0 * s[1]),
              ta.data.begin() + static_cast<std::ptrdiff_t>((row0 + count) * s[1]),
              out.data.begin());
    return a.tape->push(Op::slice_rows, a.id, -1, std::move(out), 0, Shape{row0});
}

inline Var pad_rows(Var a, std::int64_t row0, std::int64_t out_rows) {
    detail::require_2d(a, "pad_rows");
    const auto& s = a.shape();
    if (row0 < 0 || row0 + s[0] > out_rows)
        fail("pad_rows: rows [" + std::to_string(row0) + "," +
             std::to_string(row0 + s[0]) + ") do not fit in " + std::to_string(out_rows));
    Tensor out(Shape{out_rows, s[1]});
    const Tensor& ta = a.val();
    std::copy(ta.data.begin(), ta.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(row0 * s[1]));
    return a.tape->push(Op::pad_rows, a.id, -1, std::move(out), 0, Shape{row0, out_rows});
}

inline Var slice_cols(Var a, std::int64_t col0, std::int64_t count) {
    detail::require_2d(a, "slice_cols");
    const auto& s = a.shape();
    if (col0 < 0 || count < 1 || col0 + count > s[1])
        fail("slice_cols: range [" + std::to_string(col0) + "," +
             std::to_string(col0 + count) + ") out of " + shape_str(s));
    Tensor out(Shape{s[0], count});
    const Tensor& ta = a.val();
    for (std::int64_t i = 0; i < s[0]; ++i)
        for (std::int64_t j = 0; j < count; ++j) out.at(i, j) = ta.at(i, col0 + j);
    return a.tape->push(Op::slice_cols, a.id, -1, std::move(out), 0, Shape{col0});
}

inline Var pad_cols(Var a, std::int64_t col0, std::int64_t out_cols) {
    detail::require_2d(a, "pad_cols");
    const auto& s = a.shape();
    if (col0 < 0 || col0 + s[1] > out_cols)
        fail("pad_cols: cols [" + std::to_string(col0) + "," +
             std::to_string(col0 + s[1]) + ") do not fit in " + std::to_string(out_cols));
    Tensor out(Shape{s[0], out_cols});
    const Tensor& ta = a.val();
    for (std::int64_t i = 0; i < s[0]; ++i)
        for (std::int64_t j = 0; j < s[1]; ++j) out.at(i, col0 + j) = ta.at(i, j);
    return a.tape->push(Op::pad_cols, a.id, -1, std::move(out), 0, Shape{col0, out_cols});
}

inline Var blur2(Var a, double sigma, std::int64_t H, std::int64_t W) {
    Tensor out = blur2_tensor(a.val(), sigma, H, W);
    return a.tape->push(Op::blur2, a.id, -1, std::move(out), sigma, Shape{H, W});
}

inline Var reshape(Var a, Shape target) {
    if (shape_numel(target) != a.val().size())
        fail("reshape: " + shape_str(a.shape()) + " -> " + shape_str(target) +
             " changes element count");
    Tensor out(target, a.val().data);
    return a.tape->push(Op::reshape, a.id, -1, std::move(out), 0, std::move(target));
}

// ---- conveniences ----

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return shift(a, c); }
inline Var operator+(double c, Var a) { return shift(a, c); }
inline Var operator-(Var a, double c) { return shift(a, -c); }
inline Var operator/(Var a, Var b) { return mul(a, recip(b)); }
inline Var operator/(Var a, double c) { return scale(a, 1.0 / c); }

// sum of the elementwise product (inner product over all elements)
inline Var dot_all(Var a, Var b) { return sum_all(mul(a, b)); }

// ---- reverse pass ----

inline std::vector<Var> Tape::grad(Var y, const std::vector<Var>& wrt, Var seed) {
    check_var(y);
    for (const Var& w : wrt) check_var(w);
    if (seed.valid()) {
        check_var(seed);
        if (!(seed.shape() == y.shape()))
            fail("grad: seed shape " + shape_str(seed.shape()) + " != y shape " +
                 shape_str(y.shape()));
    } else {
        if (y.val().size() != 1)
            fail("grad: y has " + std::to_string(y.val().size()) +
                 " elements; pass a seed for non-scalar outputs");
    }

    const std::int64_t n = y.id + 1;
    // influences[i]: node i depends on some wrt entry (forward sweep)
    std::vector<char> influences(static_cast<std::size_t>(n), 0);
    for (const Var& w : wrt)
        if (w.id < n) influences[static_cast<std::size_t>(w.id)] = 1;
    for (std::int64_t i = 0; i < n; ++i) {
        const Node& nd = nodes[static_cast<std::size_t>(i)];
        if (influences[static_cast<std::size_t>(i)]) continue;
        if (nd.a >= 0 && influences[static_cast<std::size_t>(nd.a)])
            influences[static_cast<std::size_t>(i)] = 1;
        else if (nd.b >= 0 && influences[static_cast<std::size_t>(nd.b)])
            influences[static_cast<std::size_t>(i)] = 1;
    }
    // needed[i]: y depends on node i (reverse sweep)
    std::vector<char> needed(static_cast<std::size_t>(n), 0);
    needed[static_cast<std::size_t>(y.id)] = 1;
    for (std::int64_t i = n - 1; i >= 0; --i) {
        if (!needed[static_cast<std::size_t>(i)]) continue;
        const Node& nd = nodes[static_cast<std::size_t>(i)];
        if (nd.a >= 0) needed[static_cast<std::size_t>(nd.a)] = 1;
        if (nd.b >= 0) needed[static_cast<std::size_t>(nd.b)] = 1;
    }

    std::vector<Var> adj(static_cast<std::size_t>(n));
    adj[static_cast<std::size_t>(y.id)] =
        seed.valid() ? seed : this->leaf(Tensor::scalar(1.0));

    auto accum = [&](std::int64_t target, Var contrib) {
        Var& slot = adj[static_cast<std::size_t>(target)];
        slot = slot.valid() ? add(slot, contrib) : contrib;
    };

    for (std::int64_t i = y.id; i >= 0; --i) {
        if (!needed[static_cast<std::size_t>(i)] ||
            !influences[static_cast<std::size_t>(i)])
            continue;
        Var g = adj[static_cast<std::size_t>(i)];
        if (!g.valid()) continue;
        // Copy the scalar node fields; `nodes` may reallocate as rules emit.
        const Op op = nodes[static_cast<std::size_t>(i)].op;
        const std::int64_t ia = nodes[static_cast<std::size_t>(i)].a;
        const std::int64_t ib = nodes[static_cast<std::size_t>(i)].b;
        const double aux = nodes[static_cast<std::size_t>(i)].aux;
        const Shape ints = nodes[static_cast<std::size_t>(i)].ints;
        if (nodes[static_cast<std::size_t>(i)].artifact)
            fail(std::string("grad: differentiating through a ") + op_name(op) +
                 " node emitted by a relu/grelu backward rule; the second "
                 "derivative of relu is zero almost everywhere. Use the "
                 "softplus activation mode for second-order computations.");
        const Var self{this, i};
        const Var A{this, ia};
        const Var B{this, ib};
        const bool wantA = ia >= 0 && influences[static_cast<std::size_t>(ia)];
        const bool wantB = ib >= 0 && influences[static_cast<std::size_t>(ib)];
        switch (op) {
            case Op::leaf:
                break;
            case Op::add:
                if (wantA) accum(ia, g);
                if (wantB) accum(ib, g);
                break;
            case Op::sub:
                if (wantA) accum(ia, g);
                if (wantB) accum(ib, neg(g));
                break;
            case Op::mul:
                if (wantA) accum(ia, mul(g, B));
                if (wantB) accum(ib, mul(g, A));
                break;
            case Op::scale:
                if (wantA) accum(ia, scale(g, aux));
                break;
            case Op::shift:
                if (wantA) accum(ia, g);
                break;
            case Op::neg:
                if (wantA) accum(ia, neg(g));
                break;
            case Op::recip:
                if (wantA) accum(ia, neg(mul(g, square(self))));
                break;
            case Op::matmul_nn:
                if (wantA) accum(ia, matmul_nt(g, B));
                if (wantB) accum(ib, matmul_tn(A, g));
                break;
            case Op::matmul_nt:
                if (wantA) accum(ia, matmul_nn(g, B));
                if (wantB) accum(ib, matmul_tn(g, A));
                break;
            case Op::matmul_tn:
                if (wantA) accum(ia, matmul_nt(B, g));
                if (wantB) accum(ib, matmul_nn(A, g));
                break;
            case Op::add_rowvec:
                if (wantA) accum(ia, g);
                if (wantB) accum(ib, sum_rows(g));
                break;
            case Op::sum_rows:
                if (wantA) accum(ia, bcast_rows(g, A.shape()[0]));
                break;
            case Op::bcast_rows:
                if (wantA) accum(ia, sum_rows(g));
                break;
            case Op::sum_cols:
                if (wantA) accum(ia, bcast_cols(g, A.shape()[1]));
                break;
            case Op::bcast_cols:
                if (wantA) accum(ia, sum_cols(g));
                break;
            case Op::sum_all:
                if (wantA) accum(ia, bcast_all(g, A.shape()));
                break;
            case Op::bcast_all:
                if (wantA) accum(ia, sum_all(g));
                break;
            case Op::tanh:
                if (wantA) accum(ia, mul(g, shift(neg(square(self)), 1.0)));
                break;
            case Op::sigmoid:
                if (wantA) accum(ia, mul(g, sub(self, square(self))));
                break;
            case Op::silu:
                if (wantA) {
                    // d silu = s * (1 + x * (1 - s)), s = sigmoid(x)
                    Var s = sigmoid(A);
                    Var d = mul(s, shift(mul(A, shift(neg(s), 1.0)), 1.0));
                    accum(ia, mul(g, d));
                }
                break;
            case Op::elu:
                // d elu = exp(min(x,0)): 1 for x > 0, exp(x) otherwise
                if (wantA) accum(ia, mul(g, manigrad::exp(min0(A))));
                break;
            case Op::softplus:
                if (wantA) accum(ia, mul(g, sigmoid(A)));
                break;
            case Op::relu:
                if (wantA) {
                    emitting_artifact_ = true;
                    Var c = mul(g, mask_gt0(A));
                    emitting_artifact_ = false;
                    accum(ia, c);
                }
                break;
            case Op::grelu:
                if (wantA) {
                    // guided backprop: pass only positive gradients at
                    // positions where the input was positive
                    emitting_artifact_ = true;
                    Var c = mul(mask_gt0(A), relu(g));
                    emitting_artifact_ = false;
                    accum(ia, c);
                }
                break;
            case Op::exp:
                if (wantA) accum(ia, mul(g, self));
                break;
            case Op::log:
                if (wantA) accum(ia, mul(g, recip(A)));
                break;
            case Op::square:
                if (wantA) accum(ia, scale(mul(g, A), 2.0));
                break;
            case Op::sqrt:
                if (wantA) accum(ia, scale(mul(g, recip(self)), 0.5));
                break;
            case Op::sin:
                if (wantA) accum(ia, mul(g, manigrad::cos(A)));
                break;
            case Op::cos:
                if (wantA) accum(ia, neg(mul(g, manigrad::sin(A))));
                break;
            case Op::mask_gt0:
            case Op::mask_lt0:
                break; // derivative defined as zero
            case Op::min0:
                if (wantA) accum(ia, mul(g, mask_lt0(A)));
                break;
            case Op::concat_rows:
                if (wantA) accum(ia, slice_rows(g, 0, A.shape()[0]));
                if (wantB) accum(ib, slice_rows(g, A.shape()[0], B.shape()[0]));
                break;
            case Op::slice_rows:
                if (wantA) accum(ia, pad_rows(g, ints[0], A.shape()[0]));
                break;
            case Op::pad_rows:
                if (wantA) accum(ia, slice_rows(g, ints[0], A.shape()[0]));
                break;
            case Op::slice_cols:
                if (wantA) accum(ia, pad_cols(g, ints[0], A.shape()[1]));
                break;
            case Op::pad_cols:
                if (wantA) accum(ia, slice_cols(g, ints[0], A.shape()[1]));
                break;
            case Op::blur2:
                // symmetric kernel + zero padding: the blur is self-adjoint
                if (wantA) accum(ia, blur2(g, aux, ints[0], ints[1]));
                break;
            case Op::reshape:
                if (wantA) accum(ia, reshape(g, A.shape()));
                break;
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& w : wrt) {
        Var a = adj[static_cast<std::size_t>(w.id)];
        out.push_back(a.valid() ? a : this->leaf(Tensor::zeros(w.shape())));
    }
    return out;
}

// Vector-Jacobian product: u^T J_f(x), for y = f(x) already on the tape.
inline Var vjp(Var y, Var x, Var u) { return y.tape->grad(y, {x}, u)[0]; }

// Jacobian-vector product J_f(x) v via reverse-over-reverse: introduce a
// symbolic seed w, form s(w) = <v, J^T w>, and differentiate s with respect
// to w. s is linear in w, so the emitted computation is exact for any w
// value; zeros keep the intermediate forward values cheap and finite.
inline Var jvp(Var y, Var x, Var v) {
    Tape& t = *y.tape;
    Var w = t.leaf(Tensor::zeros(y.shape()));
    Var r = t.grad(dot_all(w, y), {x})[0];
    Var s = dot_all(r, v);
    return t.grad(s, {w})[0];
}

} // namespace manigrad
