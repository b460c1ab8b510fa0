#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace locsparse {

class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

using ScoreVector = std::vector<double>;
// Sorted ascending, no duplicates.
using IndexSet = std::vector<std::size_t>;

// Dense row-major matrix of doubles.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    // Appends one row; an empty matrix adopts the row's width.
    void append_row(std::span<const double> values);

    // Columns [first, first + count) as a new matrix.
    Matrix col_slice(std::size_t first, std::size_t count) const;

    bool operator==(const Matrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Row vector times matrix: x (length a.rows) -> length a.cols.
ScoreVector vecmat(std::span<const double> x, const Matrix& a);
// Matrix times column vector: a (r x c) . x (length c) -> length r.
ScoreVector matvec(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);

// Numerically stable softmax. -inf entries map to exactly 0. Throws if every
// entry is -inf.
ScoreVector softmax_stable(std::span<const double> scores);

// Indices of the k largest scores, returned sorted ascending. Ties go to the
// lower index. Throws if k exceeds the length.
IndexSet argtopk(std::span<const double> scores, std::size_t k);

// Reduced-precision emulation; used to exercise precision sensitivity.
enum class Precision { f64, f32 };
ScoreVector round_to(std::span<const double> values, Precision precision);

// Shortest text that parses back to the same double.
std::string format_double(double value);

// Portable seeded generator. Uses std::mt19937_64 (whose output sequence is
// fixed by the standard) with SplitMix64 seed mixing, and Box-Muller for
// normals so no implementation-defined distribution is involved.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    // Independent child stream derived from (seed, stream).
    static Rng split(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double normal();
    // Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

Matrix seeded_normal(std::size_t rows, std::size_t cols, std::uint64_t seed);
Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);

} // namespace locsparse
