#pragma once
// The differential-geometric oracle: pullback metric G = J_g^T J_g, Christoffel
// symbols from central-difference metric derivatives, and the geodesic-ODE
// residual used to validate solver output.
#include "geodesic.hpp"
#include "manifolds.hpp"
#include "tensor.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace manigrad {

struct MetricEval {
    Tensor z; // [1, d]
    Tensor G; // [d, d], symmetric PSD
};

// G(z) = J^T J, assembled from d jvp rows (row k = J e_k).
inline MetricEval metric_tensor(const Tensor& z, const Decoder& dec) {
    if (z.shape.size() != 2 || z.shape[0] != 1 || z.shape[1] != dec.dim_in())
        fail("metric_tensor: z must be [1,d] matching the decoder");
    const std::int64_t d = dec.dim_in(), D = dec.dim_out();
    Tensor Z(Shape{d, d}), V = Tensor::zeros({d, d});
    for (std::int64_t k = 0; k < d; ++k) {
        V.at(k, k) = 1.0;
        for (std::int64_t j = 0; j < d; ++j) Z.at(k, j) = z.at(0, j);
    }
    Tensor R = dec.jvp(Z, V); // [d, D], row k = J e_k
    MetricEval out;
    out.z = z;
    out.G = Tensor(Shape{d, d});
    gemm_nt(d, d, D, R.data.data(), R.data.data(), out.G.data.data());
    return out;
}

namespace detail {

// Gauss-Jordan inverse with partial pivoting; fails on (numerically) singular
// input.
inline Tensor invert_spd(const Tensor& A) {
    if (A.shape.size() != 2 || A.shape[0] != A.shape[1]) fail("invert: need square");
    const std::int64_t n = A.shape[0];
    Tensor M = A, I = Tensor::zeros({n, n});
    for (std::int64_t i = 0; i < n; ++i) I.at(i, i) = 1.0;
    for (std::int64_t col = 0; col < n; ++col) {
        std::int64_t piv = col;
        for (std::int64_t r = col + 1; r < n; ++r)
            if (std::abs(M.at(r, col)) > std::abs(M.at(piv, col))) piv = r;
        if (std::abs(M.at(piv, col)) < 1e-12)
            fail("christoffel_symbols: singular metric");
        if (piv != col)
            for (std::int64_t j = 0; j < n; ++j) {
                std::swap(M.at(piv, j), M.at(col, j));
                std::swap(I.at(piv, j), I.at(col, j));
            }
        const double inv = 1.0 / M.at(col, col);
        for (std::int64_t j = 0; j < n; ++j) {
            M.at(col, j) *= inv;
            I.at(col, j) *= inv;
        }
        for (std::int64_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = M.at(r, col);
            if (f == 0) continue;
            for (std::int64_t j = 0; j < n; ++j) {
                M.at(r, j) -= f * M.at(col, j);
                I.at(r, j) -= f * I.at(col, j);
            }
        }
    }
    return I;
}

} // namespace detail

// Gamma^k_ij = 1/2 sum_l g^{kl} (dG_jl/dx^i + dG_il/dx^j - dG_ij/dx^l),
// metric derivatives by central differences with step h. Returned as d
// matrices, gamma[k].at(i,j); symmetric in (i,j) by construction.
inline std::vector<Tensor> christoffel_symbols(const Tensor& z, const Decoder& dec,
                                               double h = 1e-4) {
    if (z.shape.size() != 2 || z.shape[0] != 1 || z.shape[1] != dec.dim_in())
        fail("christoffel_symbols: z must be [1,d] matching the decoder");
    if (!(h > 0)) fail("christoffel_symbols: h must be positive");
    const std::int64_t d = dec.dim_in();

    Tensor Ginv = detail::invert_spd(metric_tensor(z, dec).G);

    std::vector<Tensor> dG(static_cast<std::size_t>(d)); // dG[l] = dG/dx^l
    for (std::int64_t l = 0; l < d; ++l) {
        Tensor zp = z, zm = z;
        zp.at(0, l) += h;
        zm.at(0, l) -= h;
        const Tensor Gp = metric_tensor(zp, dec).G;
        const Tensor Gm = metric_tensor(zm, dec).G;
        Tensor& out = dG[static_cast<std::size_t>(l)];
        out = Tensor(Shape{d, d});
        for (std::int64_t i = 0; i < d; ++i)
            for (std::int64_t j = 0; j < d; ++j)
                out.at(i, j) = (Gp.at(i, j) - Gm.at(i, j)) / (2.0 * h);
    }

    std::vector<Tensor> gamma(static_cast<std::size_t>(d));
    for (std::int64_t k = 0; k < d; ++k) {
        gamma[static_cast<std::size_t>(k)] = Tensor(Shape{d, d});
        for (std::int64_t i = 0; i < d; ++i)
            for (std::int64_t j = 0; j < d; ++j) {
                double s = 0;
                for (std::int64_t l = 0; l < d; ++l)
                    s += Ginv.at(k, l) *
                         (dG[static_cast<std::size_t>(i)].at(j, l) +
                          dG[static_cast<std::size_t>(j)].at(i, l) -
                          dG[static_cast<std::size_t>(l)].at(i, j));
                gamma[static_cast<std::size_t>(k)].at(i, j) = 0.5 * s;
            }
    }
    return gamma;
}

// RMS over interior points and components of
//   gammadotdot^k + sum_ij Gamma^k_ij gammadot^i gammadot^j
// with central differences in the index parameter (delta t = 1/T).
inline double geodesic_ode_residual(const LatentCurve& c, const Decoder& dec,
                                    double christoffel_h = 1e-4) {
    c.check();
    const std::int64_t T = c.steps(), d = c.dim();
    if (T < 8) fail("geodesic_ode_residual: need T >= 8");
    const double Td = static_cast<double>(T);

    double acc = 0;
    for (std::int64_t i = 1; i < T; ++i) {
        std::vector<Tensor> gamma = christoffel_symbols(c.point(i), dec, christoffel_h);
        std::vector<double> vel(static_cast<std::size_t>(d)), acc2(static_cast<std::size_t>(d));
        for (std::int64_t k = 0; k < d; ++k) {
            vel[static_cast<std::size_t>(k)] =
                (c.points.at(i + 1, k) - c.points.at(i - 1, k)) * 0.5 * Td;
            acc2[static_cast<std::size_t>(k)] =
                (c.points.at(i + 1, k) - 2.0 * c.points.at(i, k) + c.points.at(i - 1, k)) *
                Td * Td;
        }
        for (std::int64_t k = 0; k < d; ++k) {
            double r = acc2[static_cast<std::size_t>(k)];
            for (std::int64_t a = 0; a < d; ++a)
                for (std::int64_t b = 0; b < d; ++b)
                    r += gamma[static_cast<std::size_t>(k)].at(a, b) *
                         vel[static_cast<std::size_t>(a)] * vel[static_cast<std::size_t>(b)];
            acc += r * r;
        }
    }
    return std::sqrt(acc / static_cast<double>((T - 1) * d));
}

} // namespace manigrad
