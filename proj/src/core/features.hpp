#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/glyphs.hpp"
#include "core/numeric.hpp"

namespace gm {

enum class FeatureId { PixelMIoU, PHash, HOG, LBP, Gabor };

inline constexpr std::array<FeatureId, 5> kAllFeatures = {
    FeatureId::PixelMIoU, FeatureId::PHash, FeatureId::HOG, FeatureId::LBP, FeatureId::Gabor};

std::string feature_name(FeatureId id);
FeatureId feature_from_name(const std::string& name);

// Every geometry constant the extractors depend on, so similarity values are
// reproducible from one place.
struct FeatureGeometry {
    // HOG
    int hog_cell = 8;             // pixels per cell side
    int hog_block = 2;            // cells per block side, stride = one block
    int hog_bins = 9;             // unsigned orientation bins over [0, pi)
    double hog_epsilon = 1e-6;    // block L2 normalization guard
    // pHash
    int phash_resize = 32;
    int phash_block = 8;
    // Gabor bank
    std::array<double, 4> gabor_wavelengths = {2.0, 4.0, 6.0, 8.0};
    int gabor_orientations = 6;
    double gabor_sigma_ratio = 0.5;   // sigma = ratio * wavelength
    double gabor_radius_factor = 2.5; // kernel radius = ceil(factor * sigma)
    // Binarization used by pixel mIoU inside matrix assembly
    BinarizePolicy miou_binarize = BinarizePolicy::otsu();
};

struct DescriptorVector {
    FeatureId feature;
    std::vector<double> values;
    size_t dimension() const { return values.size(); }
};

struct FeatureSimilarityTensor {
    int n = 0;
    std::map<FeatureId, Matrix> matrices;
    void validate() const;
};

double pixel_miou_similarity(const BinaryGlyph& a, const BinaryGlyph& b);

uint64_t phash(const GlyphRaster& raster, const FeatureGeometry& geo = {});
double phash_similarity(const GlyphRaster& a, const GlyphRaster& b, const FeatureGeometry& geo = {});

DescriptorVector hog_descriptor(const GlyphRaster& raster, const FeatureGeometry& geo = {});
double hog_similarity(const GlyphRaster& a, const GlyphRaster& b, const FeatureGeometry& geo = {});

DescriptorVector lbp_histogram(const GlyphRaster& raster);
double lbp_similarity(const GlyphRaster& a, const GlyphRaster& b);

DescriptorVector gabor_descriptor(const GlyphRaster& raster, const FeatureGeometry& geo = {});
double gabor_similarity(const GlyphRaster& a, const GlyphRaster& b, const FeatureGeometry& geo = {});

// Shared combiner: identical descriptors pair to exactly 1; a zero descriptor
// pairs to 0 against anything else; otherwise cosine clamped to [0,1].
double descriptor_cosine(const DescriptorVector& a, const DescriptorVector& b);

double pair_similarity(FeatureId id, const GlyphRaster& a, const GlyphRaster& b, const FeatureGeometry& geo = {});

Matrix feature_similarity_matrix(const TemplateSet& set, FeatureId id, const FeatureGeometry& geo = {});
FeatureSimilarityTensor build_tensor(const TemplateSet& set, const FeatureGeometry& geo = {});

}  // namespace gm
