#pragma once
// Dense f64 tensor: shape + row-major data. The universal value type.
#include <cstdint>
#include <cstddef>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace manigrad {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)) {
        validate_shape(shape);
        data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    }
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape(shape);
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            fail("Tensor: data length " + std::to_string(data.size()) +
                 " does not match shape " + shape_str(shape));
    }

    static void validate_shape(const Shape& s) {
        if (s.empty()) fail("Tensor: empty shape rejected");
        for (auto e : s)
            if (e <= 0) fail("Tensor: non-positive extent in shape " + shape_str(s));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor scalar(double v) { return full({1}, v); }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }
    // 2-D helpers
    std::int64_t rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? 1 : -1); }
    std::int64_t cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? shape[0] : -1); }

    double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
    double& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double norm2(const Tensor& a) {
    double s = 0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

} // namespace manigrad
