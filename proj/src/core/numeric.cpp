#include "core/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "core/errors.hpp"

namespace gm {

Matrix::Matrix(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ < 0 || cols_ < 0 || data_.size() != static_cast<size_t>(rows_) * cols_)
        throw ValidationError("matrix dimensions do not match entry count");
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (int r = 0; r < rows_; ++r)
        for (int c = 0; c < cols_; ++c) t.at(c, r) = at(r, c);
    return t;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

// One-sided Jacobi on the columns of w; v accumulates the right rotations.
// Returns true once a full sweep applies no rotation.
bool jacobi_sweep(Matrix& w, Matrix& v) {
    const int m = w.rows();
    const int n = w.cols();
    const double tol = 1e-15;
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
        for (int q = p + 1; q < n; ++q) {
            double app = 0.0, aqq = 0.0, apq = 0.0;
            for (int r = 0; r < m; ++r) {
                const double wp = w.at(r, p), wq = w.at(r, q);
                app += wp * wp;
                aqq += wq * wq;
                apq += wp * wq;
            }
            if (apq == 0.0 || std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
            rotated = true;
            const double tau = (aqq - app) / (2.0 * apq);
            const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
            const double c = 1.0 / std::sqrt(1.0 + t * t);
            const double s = c * t;
            for (int r = 0; r < m; ++r) {
                const double wp = w.at(r, p), wq = w.at(r, q);
                w.at(r, p) = c * wp - s * wq;
                w.at(r, q) = s * wp + c * wq;
            }
            for (int r = 0; r < n; ++r) {
                const double vp = v.at(r, p), vq = v.at(r, q);
                v.at(r, p) = c * vp - s * vq;
                v.at(r, q) = s * vp + c * vq;
            }
        }
    }
    return !rotated;
}

// Fill column `col` of u with a unit vector orthogonal to columns [0, col).
void complete_orthonormal_column(Matrix& u, int col) {
    const int m = u.rows();
    std::vector<double> cand(m, 0.0);
    for (int basis = 0; basis < m; ++basis) {
        std::fill(cand.begin(), cand.end(), 0.0);
        cand[basis] = 1.0;
        for (int j = 0; j < col; ++j) {
            double dot = 0.0;
            for (int r = 0; r < m; ++r) dot += cand[r] * u.at(r, j);
            for (int r = 0; r < m; ++r) cand[r] -= dot * u.at(r, j);
        }
        double norm = 0.0;
        for (double x : cand) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 0.5) {  // basis vector mostly outside the current span
            for (int r = 0; r < m; ++r) u.at(r, col) = cand[r] / norm;
            return;
        }
    }
    throw NumericError("failed to complete orthonormal basis");
}

SvdResult svd_tall(const Matrix& m) {
    const int rows = m.rows();
    const int cols = m.cols();
    Matrix w = m;
    Matrix v = Matrix::identity(cols);
    const int max_sweeps = 60;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) converged = jacobi_sweep(w, v);
    if (!converged) throw NumericError("svd failed to converge");

    std::vector<double> sigma(cols, 0.0);
    for (int c = 0; c < cols; ++c) {
        double s = 0.0;
        for (int r = 0; r < rows; ++r) s += w.at(r, c) * w.at(r, c);
        sigma[c] = std::sqrt(s);
    }

    std::vector<int> order(cols);
    for (int i = 0; i < cols; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sigma[a] > sigma[b]; });

    SvdResult out;
    out.u = Matrix(rows, cols);
    out.v = Matrix(cols, cols);
    out.sigma.resize(cols);
    for (int c = 0; c < cols; ++c) {
        const int src = order[c];
        out.sigma[c] = sigma[src];
        for (int r = 0; r < cols; ++r) out.v.at(r, c) = v.at(r, src);
        if (sigma[src] > 0.0) {
            for (int r = 0; r < rows; ++r) out.u.at(r, c) = w.at(r, src) / sigma[src];
        } else {
            complete_orthonormal_column(out.u, c);
        }
    }
    return out;
}

}  // namespace

SvdResult svd(const Matrix& m) {
    if (m.rows() <= 0 || m.cols() <= 0) throw ValidationError("svd requires a nonempty matrix");
    if (m.rows() > 1024 || m.cols() > 1024) throw ValidationError("svd supports dimensions up to 1024");
    if (!m.all_finite()) throw ValidationError("svd input has non-finite entries");
    if (m.rows() >= m.cols()) return svd_tall(m);
    SvdResult t = svd_tall(m.transposed());
    return SvdResult{std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw ValidationError("log_sum_exp of empty input");
    if (values.size() == 1) return values[0];
    const double vmax = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(vmax)) return vmax;  // all -inf, or an inf dominates
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - vmax);
    return vmax + std::log(acc);
}

namespace {

// 1-D orthonormal DCT-II applied along rows (forward) or its inverse.
std::vector<double> dct_row(std::span<const double> x, bool inverse) {
    const int n = static_cast<int>(x.size());
    std::vector<double> y(n, 0.0);
    const double c0 = std::sqrt(1.0 / n);
    const double ck = std::sqrt(2.0 / n);
    if (!inverse) {
        for (int k = 0; k < n; ++k) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += x[i] * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
            y[k] = (k == 0 ? c0 : ck) * acc;
        }
    } else {
        for (int i = 0; i < n; ++i) {
            double acc = c0 * x[0];
            for (int k = 1; k < n; ++k) acc += ck * x[k] * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
            y[i] = acc;
        }
    }
    return y;
}

Matrix dct2_impl(const Matrix& block, bool inverse) {
    if (block.rows() <= 0 || block.cols() <= 0) throw ValidationError("dct2 requires a nonempty block");
    Matrix rows_done(block.rows(), block.cols());
    for (int r = 0; r < block.rows(); ++r) {
        auto y = dct_row(block.row(r), inverse);
        for (int c = 0; c < block.cols(); ++c) rows_done.at(r, c) = y[c];
    }
    Matrix out(block.rows(), block.cols());
    std::vector<double> col(block.rows());
    for (int c = 0; c < block.cols(); ++c) {
        for (int r = 0; r < block.rows(); ++r) col[r] = rows_done.at(r, c);
        auto y = dct_row(col, inverse);
        for (int r = 0; r < block.rows(); ++r) out.at(r, c) = y[r];
    }
    return out;
}

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

}  // namespace

Matrix dct2(const Matrix& block) { return dct2_impl(block, false); }
Matrix idct2(const Matrix& block) { return dct2_impl(block, true); }

uint64_t Prng::next_u64() {
    state_ += kGolden;
    return mix64(state_);
}

double Prng::next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Prng::uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

double Prng::normal() {
    // u1 in (0, 1] so the log is finite
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

uint64_t Prng::next_below(uint64_t bound) {
    if (bound == 0) throw ValidationError("next_below requires a positive bound");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t value = next_u64();
    while (value >= limit) value = next_u64();
    return value % bound;
}

Prng Prng::derive(uint64_t tag) const { return Prng(mix64(seed_ ^ mix64(tag + kGolden))); }

Prng Prng::derive(std::string_view tag) const {
    uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char ch : tag) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return derive(h);
}

}  // namespace gm
