#include <cmath>
#include <fstream>
#include <vector>

#include "core/affinity.hpp"
#include "core/errors.hpp"
#include "core/features.hpp"
#include "core/glyphs.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using gm::AffinityMatrix;
using gm::FeatureSimilarityTensor;
using gm::Matrix;
using gm::PriorMarginTable;
using testutil::TempDir;

namespace {

FeatureSimilarityTensor tensor_from(const std::vector<Matrix>& mats) {
    FeatureSimilarityTensor t;
    t.n = mats.front().rows();
    for (size_t k = 0; k < mats.size(); ++k) t.matrices[gm::kAllFeatures[k]] = mats[k];
    return t;
}

Matrix random_similarity(gm::Prng& rng, int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) m.at(i, j) = m.at(j, i) = rng.uniform(0.05, 0.95);
    }
    return m;
}

}  // namespace

TEST_CASE("directional similarity: rows are features, columns are templates") {
    gm::Prng rng(3);
    std::vector<Matrix> mats;
    for (int k = 0; k < 5; ++k) mats.push_back(random_similarity(rng, 4));
    const FeatureSimilarityTensor tensor = tensor_from(mats);

    const gm::DirectionalSimilarity ds = gm::directional_similarity(tensor, 2);
    CHECK(ds.template_index == 2);
    CHECK(ds.s.rows() == 5);
    CHECK(ds.s.cols() == 4);
    for (int k = 0; k < 5; ++k) {
        CHECK(ds.s.at(k, 2) == 1.0);  // self column
        for (int j = 0; j < 4; ++j) CHECK(ds.s.at(k, j) == mats[k].at(2, j));
    }
    CHECK_THROWS_AS(gm::directional_similarity(tensor, 4), gm::ValidationError);
    CHECK_THROWS_AS(gm::directional_similarity(tensor, -1), gm::ValidationError);
}

TEST_CASE("principal vector: single feature reduces to the normalized row") {
    gm::DirectionalSimilarity ds;
    ds.template_index = 0;
    ds.s = Matrix(1, 3, {3.0, 0.0, 4.0});
    const auto h = gm::principal_similarity_vector(ds);
    REQUIRE(h.size() == 3);
    CHECK(h[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(h[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(h[2] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("principal vector: identical rows reduce to the normalized common row") {
    gm::DirectionalSimilarity ds;
    ds.template_index = 0;
    ds.s = Matrix(4, 2, {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
    const auto h = gm::principal_similarity_vector(ds);
    CHECK(h[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(h[1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("principal vector: matches power iteration on S^T S") {
    gm::Prng rng(19);
    gm::DirectionalSimilarity ds;
    ds.template_index = 0;
    ds.s = Matrix(5, 4);
    for (double& x : ds.s.data()) x = rng.uniform(0.0, 1.0);

    Matrix sts(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 5; ++k) acc += ds.s.at(k, i) * ds.s.at(k, j);
            sts.at(i, j) = acc;
        }
    const auto expect = oracle::dominant_eigenvector(sts);
    const auto got = gm::principal_similarity_vector(ds);
    REQUIRE(got.size() == expect.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - expect[i]) < 1e-9);
}

TEST_CASE("principal vector: all-zero similarity is degenerate") {
    gm::DirectionalSimilarity ds;
    ds.template_index = 1;
    ds.s = Matrix(2, 3);
    CHECK_THROWS_WITH_AS(gm::principal_similarity_vector(ds), doctest::Contains("degenerate similarity"),
                         gm::NumericError);
}

TEST_CASE("assemble: symmetric unit-diagonal stack passes through") {
    const std::vector<std::vector<double>> rows = {{1.0, 0.25, 0.5}, {0.25, 1.0, 0.4}, {0.5, 0.4, 1.0}};
    const AffinityMatrix a = gm::assemble_affinity(rows);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(a.a.at(i, j) == doctest::Approx(rows[i][j]).epsilon(1e-12));
}

TEST_CASE("assemble: hand-computed two-template case") {
    const AffinityMatrix a = gm::assemble_affinity({{0.8, 0.2}, {0.4, 0.6}});
    CHECK(a.a.at(0, 0) == 1.0);
    CHECK(a.a.at(1, 1) == 1.0);
    // (H+H^T)/2 -> [[0.8, 0.3], [0.3, 0.6]]; rescale by sqrt(0.8 * 0.6).
    CHECK(a.a.at(0, 1) == doctest::Approx(0.4330127018922193).epsilon(1e-12));
    CHECK(a.a.at(1, 0) == doctest::Approx(0.4330127018922193).epsilon(1e-12));
    CHECK_NOTHROW(a.validate());
}

TEST_CASE("assemble: nonpositive self-affinity is degenerate") {
    CHECK_THROWS_WITH_AS(gm::assemble_affinity({{0.0, 0.9}, {0.9, 0.0}}),
                         doctest::Contains("degenerate self-affinity"), gm::NumericError);
}

TEST_CASE("margins: literal softmax with diagonal in the denominator") {
    AffinityMatrix a;
    a.n = 2;
    a.a = Matrix(2, 2, {1.0, 0.5, 0.5, 1.0});
    const PriorMarginTable m = gm::prior_margin_table(a);
    CHECK(m.m.at(0, 0) == 0.0);
    CHECK(m.m.at(1, 1) == 0.0);
    CHECK(m.m.at(0, 1) == doctest::Approx(0.37754066879814546).epsilon(1e-12));
    CHECK(m.m.at(1, 0) == doctest::Approx(0.37754066879814546).epsilon(1e-12));
    CHECK_NOTHROW(m.validate());
}

TEST_CASE("margins: row off-diagonal sums follow the softmax denominator") {
    gm::Prng rng(8);
    AffinityMatrix a;
    a.n = 5;
    a.a = random_similarity(rng, 5);
    const PriorMarginTable m = gm::prior_margin_table(a);
    for (int i = 0; i < 5; ++i) {
        double denom = 0.0, numer = 0.0;
        for (int j = 0; j < 5; ++j) {
            denom += std::exp(a.a.at(i, j));
            if (j != i) numer += std::exp(a.a.at(i, j));
        }
        double row = 0.0;
        for (int j = 0; j < 5; ++j) row += m.m.at(i, j);
        CHECK(row == doctest::Approx(numer / denom).epsilon(1e-12));
    }
}

TEST_CASE("margins: excluding the diagonal renormalizes each row to one") {
    gm::Prng rng(9);
    AffinityMatrix a;
    a.n = 4;
    a.a = random_similarity(rng, 4);
    const PriorMarginTable m = gm::prior_margin_table(a, /*exclude_diagonal_in_softmax=*/true);
    for (int i = 0; i < 4; ++i) {
        double row = 0.0;
        for (int j = 0; j < 4; ++j) row += m.m.at(i, j);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m.m.at(i, i) == 0.0);
    }
}

TEST_CASE("margins: equal off-diagonal affinities give equal margins") {
    AffinityMatrix a;
    a.n = 3;
    a.a = Matrix(3, 3, {1.0, 0.4, 0.4, 0.4, 1.0, 0.4, 0.4, 0.4, 1.0});
    const PriorMarginTable m = gm::prior_margin_table(a);
    CHECK(m.m.at(0, 1) == m.m.at(0, 2));
    CHECK(m.m.at(1, 0) == m.m.at(1, 2));
}

TEST_CASE("margins: raising one affinity steals mass from the rest of the row") {
    AffinityMatrix lo, hi;
    lo.n = hi.n = 3;
    lo.a = Matrix(3, 3, {1.0, 0.3, 0.6, 0.3, 1.0, 0.5, 0.6, 0.5, 1.0});
    hi.a = lo.a;
    hi.a.at(0, 1) = 0.45;
    hi.a.at(1, 0) = 0.45;
    const PriorMarginTable mlo = gm::prior_margin_table(lo);
    const PriorMarginTable mhi = gm::prior_margin_table(hi);
    CHECK(mhi.m.at(0, 1) > mlo.m.at(0, 1));
    CHECK(mhi.m.at(0, 2) < mlo.m.at(0, 2));
}

TEST_CASE("pipeline: permuting templates permutes affinity and margins consistently") {
    gm::Prng rng(77);
    std::vector<Matrix> mats;
    for (int k = 0; k < 5; ++k) mats.push_back(random_similarity(rng, 4));
    const int perm[4] = {2, 0, 3, 1};
    std::vector<Matrix> permuted_mats;
    for (const Matrix& m : mats) {
        Matrix p(4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) p.at(i, j) = m.at(perm[i], perm[j]);
        permuted_mats.push_back(p);
    }
    const AffinityMatrix a = gm::build_affinity(tensor_from(mats));
    const AffinityMatrix ap = gm::build_affinity(tensor_from(permuted_mats));
    const PriorMarginTable m = gm::prior_margin_table(a);
    const PriorMarginTable mp = gm::prior_margin_table(ap);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            CHECK(std::abs(ap.a.at(i, j) - a.a.at(perm[i], perm[j])) < 1e-10);
            CHECK(std::abs(mp.m.at(i, j) - m.m.at(perm[i], perm[j])) < 1e-10);
        }
}

TEST_CASE("pipeline: affinity invariants on the synthetic set") {
    const gm::TemplateSet set = gm::synth_template_set(7, 6, 2, 48);
    const AffinityMatrix a = gm::build_affinity(gm::build_tensor(set));
    CHECK(a.n == 6);
    for (int i = 0; i < 6; ++i) {
        CHECK(a.a.at(i, i) == doctest::Approx(1.0).epsilon(1e-12));
        for (int j = 0; j < 6; ++j) {
            CHECK(std::abs(a.a.at(i, j) - a.a.at(j, i)) < 1e-12);
            CHECK(a.a.at(i, j) >= 0.0);
            CHECK(a.a.at(i, j) <= 1.0 + 1e-12);
        }
    }
    const PriorMarginTable m = gm::prior_margin_table(a);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            if (i == j)
                CHECK(m.m.at(i, j) == 0.0);
            else
                CHECK(m.m.at(i, j) > 0.0);
        }
}

TEST_CASE("pipeline: one-stroke neighbors get larger margins than distant pairs") {
    const gm::TemplateSet set = gm::synth_template_set(7, 8, 2, 48);
    const PriorMarginTable m = gm::prior_margin_table(gm::build_affinity(gm::build_tensor(set)));
    CHECK(m.m.at(0, 1) > m.m.at(0, 7));
    CHECK(m.m.at(1, 2) > m.m.at(1, 7));
}

TEST_CASE("margin cache: binary round-trip is exact") {
    TempDir dir("margincache");
    gm::Prng rng(15);
    AffinityMatrix a;
    a.n = 5;
    a.a = random_similarity(rng, 5);
    const PriorMarginTable m = gm::prior_margin_table(a);
    gm::write_margin_cache(dir.path / "m.bin", m);
    const PriorMarginTable back = gm::read_margin_cache(dir.path / "m.bin");
    CHECK(back.n == m.n);
    CHECK(back.m == m.m);
}

TEST_CASE("margin cache: wrong magic or truncation is an I/O error") {
    TempDir dir("margincachebad");
    std::ofstream(dir.path / "junk.bin", std::ios::binary) << "not a cache";
    CHECK_THROWS_AS(gm::read_margin_cache(dir.path / "junk.bin"), gm::IoError);
    CHECK_THROWS_AS(gm::read_margin_cache(dir.path / "absent.bin"), gm::IoError);
}
