#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace gm {

// Dense row-major matrix of 64-bit reals. All numerical kernels in the
// project go through this type so results stay bit-stable across platforms.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {}
    Matrix(int rows, int cols, std::vector<double> data);

    static Matrix identity(int n);

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double& operator()(int r, int c) { return at(r, c); }
    double operator()(int r, int c) const { return at(r, c); }

    std::span<double> row(int r) { return {data_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)}; }
    std::span<const double> row(int r) const {
        return {data_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)};
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    Matrix transposed() const;
    bool all_finite() const;

    bool operator==(const Matrix& other) const = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

struct SvdResult {
    Matrix u;                   // rows x k, orthonormal columns
    std::vector<double> sigma;  // k values, descending, nonnegative
    Matrix v;                   // cols x k, orthonormal columns
};

// Thin SVD (k = min(rows, cols)) via one-sided Jacobi rotations. Accurate for
// the small dense matrices used here; input must be finite, dims <= 1024.
SvdResult svd(const Matrix& m);

// Stable log(sum(exp(v))). Exact for a single element. Empty input is an error.
double log_sum_exp(std::span<const double> values);

// Orthonormal type-II 2-D DCT and its inverse (type-III with the same scaling).
Matrix dct2(const Matrix& block);
Matrix idct2(const Matrix& block);

// Counter-based deterministic PRNG (splitmix64): output i is a fixed avalanche
// of seed + (i+1)*0x9E3779B97F4A7C15, so streams are identical on every
// platform and a stream is a pure value type.
class Prng {
public:
    explicit Prng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t next_u64();
    double next_double();  // [0, 1), 53-bit resolution
    double uniform(double lo, double hi);
    double normal();  // Box-Muller, two uniforms per call
    // Uniform integer in [0, bound), bound > 0. Debiased by rejection.
    uint64_t next_below(uint64_t bound);

    // Independent child stream; pure function of the construction seed and tag.
    Prng derive(uint64_t tag) const;
    Prng derive(std::string_view tag) const;

private:
    uint64_t seed_ = 0;
    uint64_t state_ = 0;
};

}  // namespace gm
