#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace slidealign {

/// Dense row-major matrix. Row vectors double as 1xC matrices, scalars as 1x1.
template <typename Real>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<Real> a;

    Mat() = default;
    Mat(int r, int c, Real fill = Real(0))
        : rows(r), cols(c), a(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {
        if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative shape");
    }

    static Mat scalar(Real v) {
        Mat m(1, 1);
        m.a[0] = v;
        return m;
    }

    Real& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    Real operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    Real* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
    const Real* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }

    std::size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(Real v) { std::fill(a.begin(), a.end(), v); }

    bool all_finite() const {
        for (Real v : a)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename Other>
    Mat<Other> cast() const {
        Mat<Other> m(rows, cols);
        for (std::size_t i = 0; i < a.size(); ++i) m.a[i] = static_cast<Other>(a[i]);
        return m;
    }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

template <typename Real>
inline double max_abs_diff(const Mat<Real>& x, const Mat<Real>& y) {
    if (!x.same_shape(y)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(x.a[i]) - static_cast<double>(y.a[i])));
    return m;
}

inline std::string shape_str(int r, int c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

}  // namespace slidealign
