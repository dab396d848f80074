#include "core/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "core/errors.hpp"

namespace gm {

void AffinityMatrix::validate() const {
    if (a.rows() != n || a.cols() != n) throw ValidationError("affinity shape mismatch");
    for (int i = 0; i < n; ++i) {
        if (a.at(i, i) != 1.0) throw ValidationError("affinity diagonal must be 1");
        for (int j = 0; j < n; ++j) {
            if (std::abs(a.at(i, j) - a.at(j, i)) > 1e-12) throw ValidationError("affinity not symmetric");
            if (i != j && !(a.at(i, j) >= 0.0 && a.at(i, j) <= 1.0))
                throw ValidationError("affinity off-diagonal outside [0,1]");
        }
    }
}

void PriorMarginTable::validate() const {
    if (m.rows() != n || m.cols() != n) throw ValidationError("margin table shape mismatch");
    for (int i = 0; i < n; ++i) {
        if (m.at(i, i) != 0.0) throw ValidationError("margin diagonal must be 0");
        for (int j = 0; j < n; ++j)
            if (i != j && !(m.at(i, j) > 0.0 && m.at(i, j) < 1.0))
                throw ValidationError("margin off-diagonal must lie in (0,1)");
    }
}

DirectionalSimilarity directional_similarity(const FeatureSimilarityTensor& tensor, int i) {
    tensor.validate();
    if (i < 0 || i >= tensor.n) throw ValidationError("template index out of range");
    DirectionalSimilarity ds;
    ds.template_index = i;
    ds.s = Matrix(static_cast<int>(tensor.matrices.size()), tensor.n);
    int k = 0;
    for (FeatureId id : kAllFeatures) {
        const auto it = tensor.matrices.find(id);
        if (it == tensor.matrices.end()) continue;
        for (int j = 0; j < tensor.n; ++j) ds.s.at(k, j) = it->second.at(i, j);
        ++k;
    }
    return ds;
}

std::vector<double> principal_similarity_vector(const DirectionalSimilarity& ds) {
    const Matrix& s = ds.s;
    if (s.rows() < 1 || s.cols() < 1) throw ValidationError("empty similarity matrix");
    bool any_nonzero = false;
    for (double v : s.data()) {
        if (v < 0.0) throw ValidationError("directional similarity must be nonnegative");
        if (v != 0.0) any_nonzero = true;
    }
    if (!any_nonzero) throw NumericError("degenerate similarity: all-zero matrix");

    const SvdResult svd_res = svd(s);
    std::vector<double> h(s.cols());
    double sum = 0.0;
    for (int j = 0; j < s.cols(); ++j) {
        h[j] = svd_res.v.at(j, 0);
        sum += h[j];
    }
    if (sum < 0.0)
        for (double& v : h) v = -v;
    for (double& v : h) {
        if (v < 0.0) {
            if (v < -1e-10) throw NumericError("principal vector has a negative entry beyond noise");
            v = 0.0;
        }
    }
    return h;
}

AffinityMatrix assemble_affinity(const std::vector<std::vector<double>>& vectors) {
    const int n = static_cast<int>(vectors.size());
    if (n < 2) throw ValidationError("need at least two templates");
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(vectors[i].size()) != n) throw ValidationError("principal vector length mismatch");
        for (double v : vectors[i]) {
            if (!(v >= 0.0)) throw ValidationError("principal vectors must be nonnegative");
        }
    }

    Matrix prime(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) prime.at(i, j) = 0.5 * (vectors[i][j] + vectors[j][i]);
    for (int i = 0; i < n; ++i)
        if (prime.at(i, i) <= 0.0)
            throw NumericError("degenerate self-affinity for template " + std::to_string(i));

    AffinityMatrix out;
    out.n = n;
    out.a = Matrix(n, n);
    for (int i = 0; i < n; ++i) {
        out.a.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            double v = prime.at(i, j) / std::sqrt(prime.at(i, i) * prime.at(j, j));
            v = std::clamp(v, 0.0, 1.0);
            out.a.at(i, j) = v;
            out.a.at(j, i) = v;
        }
    }
    return out;
}

PriorMarginTable prior_margin_table(const AffinityMatrix& a, bool exclude_diagonal_in_softmax) {
    a.validate();
    const int n = a.n;
    PriorMarginTable out;
    out.n = n;
    out.m = Matrix(n, n);
    std::vector<double> row;
    for (int i = 0; i < n; ++i) {
        row.clear();
        for (int j = 0; j < n; ++j) {
            if (exclude_diagonal_in_softmax && j == i) continue;
            row.push_back(a.a.at(i, j));
        }
        const double lse = log_sum_exp(row);
        for (int j = 0; j < n; ++j) out.m.at(i, j) = j == i ? 0.0 : std::exp(a.a.at(i, j) - lse);
    }
    return out;
}

AffinityMatrix build_affinity(const FeatureSimilarityTensor& tensor) {
    std::vector<std::vector<double>> vectors;
    vectors.reserve(tensor.n);
    for (int i = 0; i < tensor.n; ++i)
        vectors.push_back(principal_similarity_vector(directional_similarity(tensor, i)));
    return assemble_affinity(vectors);
}

namespace {

constexpr char kMarginMagic[8] = {'G', 'M', 'M', 'A', 'R', 'G', 'I', 'N'};
constexpr uint32_t kMarginVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("margin cache: truncated header");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
           static_cast<uint32_t>(b[3]) << 24;
}

void put_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw IoError("margin cache: truncated payload");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void write_margin_cache(const std::filesystem::path& path, const PriorMarginTable& table) {
    table.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kMarginMagic, sizeof(kMarginMagic));
    put_u32(out, kMarginVersion);
    put_u32(out, static_cast<uint32_t>(table.n));
    for (double v : table.m.data()) put_f64(out, v);
    if (!out) throw IoError("margin cache write failed: " + path.string());
}

PriorMarginTable read_margin_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMarginMagic, sizeof(magic)) != 0)
        throw IoError("margin cache: bad magic in " + path.string());
    const uint32_t version = get_u32(in);
    if (version != kMarginVersion)
        throw IoError("margin cache: unsupported version " + std::to_string(version));
    const uint32_t n = get_u32(in);
    if (n < 2 || n > 1u << 15) throw IoError("margin cache: implausible dimension");
    PriorMarginTable table;
    table.n = static_cast<int>(n);
    table.m = Matrix(table.n, table.n);
    for (double& v : table.m.data()) v = get_f64(in);
    char extra;
    if (in.read(&extra, 1)) throw IoError("margin cache: trailing bytes in " + path.string());
    table.validate();
    return table;
}

}  // namespace gm
