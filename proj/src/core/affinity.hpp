#pragma once

#include <filesystem>
#include <vector>

#include "core/features.hpp"
#include "core/numeric.hpp"

namespace gm {

// Per-template view of the similarity tensor: rows = features (in
// kAllFeatures order restricted to what the tensor holds), columns = templates.
struct DirectionalSimilarity {
    int template_index = 0;
    Matrix s;  // K x N
};

struct AffinityMatrix {
    int n = 0;
    Matrix a;
    void validate() const;
};

struct PriorMarginTable {
    int n = 0;
    Matrix m;
    void validate() const;
};

DirectionalSimilarity directional_similarity(const FeatureSimilarityTensor& tensor, int i);

// Principal right singular vector of S, unit norm, oriented to nonnegative
// entry sum; tiny negative noise is clamped to zero.
std::vector<double> principal_similarity_vector(const DirectionalSimilarity& ds);

AffinityMatrix assemble_affinity(const std::vector<std::vector<double>>& vectors);

PriorMarginTable prior_margin_table(const AffinityMatrix& a, bool exclude_diagonal_in_softmax = false);

// Full fusion: per-template principal vectors -> symmetrized, rescaled A.
AffinityMatrix build_affinity(const FeatureSimilarityTensor& tensor);

void write_margin_cache(const std::filesystem::path& path, const PriorMarginTable& table);
PriorMarginTable read_margin_cache(const std::filesystem::path& path);

}  // namespace gm
