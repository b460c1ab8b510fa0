#include "locsparse/numerics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace locsparse {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("ragged matrix literal");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

void Matrix::append_row(std::span<const double> values) {
    if (rows_ == 0 && data_.empty()) {
        cols_ = values.size();
    } else if (values.size() != cols_) {
        throw ShapeError("append_row: row of width " + std::to_string(values.size()) +
                         " into " + shape_string(*this));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

Matrix Matrix::col_slice(std::size_t first, std::size_t count) const {
    if (first + count > cols_) {
        throw ShapeError("col_slice [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of " + shape_string(*this));
    }
    Matrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r) {
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + first), count,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(r * count));
    }
    return out;
}

std::string shape_string(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_string(a) + " x " + shape_string(b));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double aip = a(i, p);
            auto src = b.row(p);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                dst[j] += aip * src[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

ScoreVector vecmat(std::span<const double> x, const Matrix& a) {
    if (x.size() != a.rows()) {
        throw ShapeError("vecmat: vector of length " + std::to_string(x.size()) + " x " +
                         shape_string(a));
    }
    ScoreVector out(a.cols(), 0.0);
    for (std::size_t p = 0; p < a.rows(); ++p) {
        auto src = a.row(p);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out[j] += x[p] * src[j];
        }
    }
    return out;
}

ScoreVector matvec(const Matrix& a, std::span<const double> x) {
    if (x.size() != a.cols()) {
        throw ShapeError("matvec: " + shape_string(a) + " . vector of length " +
                         std::to_string(x.size()));
    }
    ScoreVector out(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        out[i] = dot(a.row(i), x);
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

ScoreVector softmax_stable(std::span<const double> scores) {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    double hi = neg_inf;
    for (double s : scores) {
        hi = std::max(hi, s);
    }
    if (hi == neg_inf) {
        throw std::invalid_argument("softmax_stable: every entry is -inf (empty support)");
    }
    ScoreVector out(scores.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] != neg_inf) {
            out[i] = std::exp(scores[i] - hi);
            total += out[i];
        }
    }
    for (double& v : out) {
        v /= total;
    }
    return out;
}

IndexSet argtopk(std::span<const double> scores, std::size_t k) {
    if (k > scores.size()) {
        throw std::invalid_argument("argtopk: k=" + std::to_string(k) + " exceeds length " +
                                    std::to_string(scores.size()));
    }
    IndexSet order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                     before);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

ScoreVector round_to(std::span<const double> values, Precision precision) {
    ScoreVector out(values.begin(), values.end());
    if (precision == Precision::f32) {
        for (double& v : out) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
    return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

Rng Rng::split(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) {
        throw std::invalid_argument("Rng::below: bound must be positive");
    }
    // Rejection sampling keeps the result unbiased and platform independent.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return x % bound;
}

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = scale * rng.normal();
    }
    return m;
}

Matrix seeded_normal(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    return random_normal(rows, cols, rng);
}

std::string format_double(double value) {
    char buf[32];
    const auto result = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, result.ptr);
}

} // namespace locsparse
