#pragma once
// Procedural datasets: soft-edged parametric shapes rendered into 32x32
// grayscale images in [-1,1], plus the black/white baseline augmentation the
// VAE trains with. Regeneration from (generator, seed, params) is
// bit-identical; provenance records those.
#include "rng.hpp"
#include "tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace manigrad {

constexpr std::int64_t kImageH = 32;
constexpr std::int64_t kImageW = 32;
constexpr std::int64_t kImageD = kImageH * kImageW;
constexpr int kNumShapeClasses = 4;
// label of augmented baseline images; excluded from classifier training
constexpr std::int64_t kBaselineLabel = -1;

struct Dataset {
    Tensor inputs;           // [n, D]
    std::vector<std::int64_t> labels; // class per row; kBaselineLabel for baselines
    std::string provenance;

    std::int64_t size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
};

// Signed-distance rendering of one shape. Coordinates: pixel (row, col)
// maps to (y, x); (cx, cy) is the center in (col, row) units; rot rotates
// the local frame. The edge softens over ~2 px: value = 2*clip(0.5-d/2,0,1)-1.
inline Tensor render_shape(int shape_id, double cx, double cy, double s, double rot) {
    Tensor img(Shape{kImageD});
    const double co = std::cos(rot);
    const double sn = std::sin(rot);
    for (std::int64_t py = 0; py < kImageH; ++py) {
        for (std::int64_t px = 0; px < kImageW; ++px) {
            const double x = static_cast<double>(px) - cx;
            const double y = static_cast<double>(py) - cy;
            const double xr = co * x + sn * y;
            const double yr = -sn * x + co * y;
            double d = 0;
            switch (shape_id) {
                case 0: // disk
                    d = std::hypot(xr, yr) - s;
                    break;
                case 1: // square
                    d = std::max(std::abs(xr), std::abs(yr)) - 0.85 * s;
                    break;
                case 2: { // cross: union of two bars
                    const double w = 0.35 * s;
                    d = std::min(std::max(std::abs(xr) - s, std::abs(yr) - w),
                                 std::max(std::abs(xr) - w, std::abs(yr) - s));
                    break;
                }
                case 3: { // triangle: intersection of three half planes
                    const double d1 = yr - 0.7 * s;
                    const double d2 = -0.5 * yr - 0.866 * xr - 0.7 * s;
                    const double d3 = -0.5 * yr + 0.866 * xr - 0.7 * s;
                    d = std::max(d1, std::max(d2, d3));
                    break;
                }
                default:
                    fail("render_shape: shape_id out of range");
            }
            const double cov = std::min(1.0, std::max(0.0, 0.5 - d / 2.0));
            img.at(py * kImageW + px) = 2.0 * cov - 1.0;
        }
    }
    return img;
}

// n images, labels assigned round-robin over `classes` shape types.
inline Dataset gen_shapes(std::int64_t n, int classes, std::uint64_t seed) {
    if (n < 1) fail("gen_shapes: n must be positive");
    if (classes < 1 || classes > kNumShapeClasses)
        fail("gen_shapes: classes must be in [1," + std::to_string(kNumShapeClasses) + "]");
    Dataset ds;
    ds.inputs = Tensor(Shape{n, kImageD});
    ds.labels.resize(static_cast<std::size_t>(n));
    Rng rng(seed);
    for (std::int64_t i = 0; i < n; ++i) {
        const int k = static_cast<int>(i % classes);
        const double cx = rng.uniform(12.0, 20.0);
        const double cy = rng.uniform(12.0, 20.0);
        const double s = rng.uniform(6.0, 10.0);
        const double rot = rng.uniform(0.0, 1.5707963267948966); // [0, pi/2)
        Tensor img = render_shape(k, cx, cy, s, rot);
        std::copy(img.data.begin(), img.data.end(),
                  ds.inputs.data.begin() + static_cast<std::ptrdiff_t>(i * kImageD));
        ds.labels[static_cast<std::size_t>(i)] = k;
    }
    ds.provenance = "shapes(n=" + std::to_string(n) + ",classes=" +
                    std::to_string(classes) + ",seed=" + std::to_string(seed) + ")";
    return ds;
}

// Appends floor(fraction*n) all-black (-1) images and as many all-white (+1)
// images, labelled kBaselineLabel (the classifier must skip them).
inline Dataset augment_baselines(const Dataset& ds, double fraction) {
    if (fraction < 0) fail("augment_baselines: negative fraction");
    const std::int64_t n = ds.size();
    const std::int64_t nb = static_cast<std::int64_t>(fraction * static_cast<double>(n));
    if (nb == 0) return ds;
    const std::int64_t d = ds.inputs.shape[1];
    Dataset out;
    out.inputs = Tensor(Shape{n + 2 * nb, d});
    std::copy(ds.inputs.data.begin(), ds.inputs.data.end(), out.inputs.data.begin());
    for (std::int64_t i = 0; i < nb * d; ++i)
        out.inputs.data[static_cast<std::size_t>(n * d + i)] = -1.0;
    for (std::int64_t i = 0; i < nb * d; ++i)
        out.inputs.data[static_cast<std::size_t>((n + nb) * d + i)] = 1.0;
    out.labels = ds.labels;
    out.labels.resize(static_cast<std::size_t>(n + 2 * nb), kBaselineLabel);
    out.provenance = ds.provenance + "+baselines(fraction=" + std::to_string(fraction) + ")";
    return out;
}

inline Tensor black_image() { return Tensor::full({std::int64_t{1}, kImageD}, -1.0); }
inline Tensor white_image() { return Tensor::full({std::int64_t{1}, kImageD}, 1.0); }

} // namespace manigrad
