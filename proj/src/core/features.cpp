#include "core/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "core/errors.hpp"

namespace gm {

std::string feature_name(FeatureId id) {
    switch (id) {
        case FeatureId::PixelMIoU: return "pixel_miou";
        case FeatureId::PHash: return "phash";
        case FeatureId::HOG: return "hog";
        case FeatureId::LBP: return "lbp";
        case FeatureId::Gabor: return "gabor";
    }
    throw ValidationError("unknown feature id");
}

FeatureId feature_from_name(const std::string& name) {
    for (FeatureId id : kAllFeatures)
        if (feature_name(id) == name) return id;
    throw ValidationError("unknown feature name: " + name);
}

void FeatureSimilarityTensor::validate() const {
    // A full tensor holds all five features; single-feature runs hold one.
    if (matrices.empty()) throw ValidationError("tensor holds no feature matrices");
    for (const auto& [id, m] : matrices) {
        if (m.rows() != n || m.cols() != n) throw ValidationError("tensor matrix shape mismatch");
        for (int i = 0; i < n; ++i) {
            if (m.at(i, i) != 1.0) throw ValidationError("tensor diagonal must be 1 (" + feature_name(id) + ")");
            for (int j = 0; j < n; ++j) {
                const double v = m.at(i, j);
                if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("tensor entry outside [0,1]");
                if (v != m.at(j, i)) throw ValidationError("tensor matrix not symmetric");
            }
        }
    }
}

namespace {

void require_same_size(const GlyphRaster& a, const GlyphRaster& b) {
    if (a.width != b.width || a.height != b.height) throw ValidationError("dimension mismatch");
}

}  // namespace

double pixel_miou_similarity(const BinaryGlyph& a, const BinaryGlyph& b) {
    if (a.width != b.width || a.height != b.height) throw ValidationError("dimension mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.mask.size(); ++i) {
        const bool pa = a.mask[i], pb = b.mask[i];
        inter += pa && pb;
        uni += pa || pb;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

uint64_t phash(const GlyphRaster& raster, const FeatureGeometry& geo) {
    if (!raster.valid()) throw ValidationError("phash: invalid raster");
    const GlyphRaster small = resize_bilinear(raster, geo.phash_resize);
    Matrix img(geo.phash_resize, geo.phash_resize);
    for (int y = 0; y < small.height; ++y)
        for (int x = 0; x < small.width; ++x) img.at(y, x) = static_cast<double>(small.at(y, x));
    const Matrix freq = dct2(img);

    const int b = geo.phash_block;
    std::vector<double> coeffs(static_cast<size_t>(b) * b);
    for (int r = 0; r < b; ++r)
        for (int c = 0; c < b; ++c) coeffs[static_cast<size_t>(r) * b + c] = freq.at(r, c);
    coeffs[0] = 0.0;  // DC carries only brightness; drop it so the median is textural
    for (double& v : coeffs)
        if (std::abs(v) < 1e-8) v = 0.0;  // cancellation noise; blank rasters must hash to 0

    std::vector<double> rest(coeffs.begin() + 1, coeffs.end());
    std::nth_element(rest.begin(), rest.begin() + (rest.size() - 1) / 2, rest.end());
    const double median = rest[(rest.size() - 1) / 2];

    uint64_t hash = 0;
    for (size_t k = 0; k < coeffs.size(); ++k)
        if (coeffs[k] > median) hash |= uint64_t{1} << k;
    return hash;
}

double phash_similarity(const GlyphRaster& a, const GlyphRaster& b, const FeatureGeometry& geo) {
    require_same_size(a, b);
    const uint64_t ha = phash(a, geo), hb = phash(b, geo);
    const int bits = geo.phash_block * geo.phash_block;
    return 1.0 - static_cast<double>(std::popcount(ha ^ hb)) / bits;
}

DescriptorVector hog_descriptor(const GlyphRaster& raster, const FeatureGeometry& geo) {
    if (raster.width < 16 || raster.height < 16) throw ValidationError("hog needs at least 16x16 input");
    const int w = raster.width, h = raster.height;
    const int cells_x = w / geo.hog_cell;
    const int cells_y = h / geo.hog_cell;
    const int bins = geo.hog_bins;

    std::vector<double> cell_hist(static_cast<size_t>(cells_x) * cells_y * bins, 0.0);
    const double bin_width = std::numbers::pi / bins;
    for (int y = 0; y < cells_y * geo.hog_cell; ++y) {
        for (int x = 0; x < cells_x * geo.hog_cell; ++x) {
            const double gx = static_cast<double>(raster.at(y, std::min(x + 1, w - 1))) -
                              static_cast<double>(raster.at(y, std::max(x - 1, 0)));
            const double gy = static_cast<double>(raster.at(std::min(y + 1, h - 1), x)) -
                              static_cast<double>(raster.at(std::max(y - 1, 0), x));
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag == 0.0) continue;
            double angle = std::atan2(gy, gx);
            if (angle < 0.0) angle += std::numbers::pi;
            if (angle >= std::numbers::pi) angle -= std::numbers::pi;
            const int bin = std::min(static_cast<int>(angle / bin_width), bins - 1);
            const int cx = x / geo.hog_cell, cy = y / geo.hog_cell;
            cell_hist[(static_cast<size_t>(cy) * cells_x + cx) * bins + bin] += mag;
        }
    }

    const int blocks_x = cells_x / geo.hog_block;
    const int blocks_y = cells_y / geo.hog_block;
    const int block_len = geo.hog_block * geo.hog_block * bins;
    DescriptorVector out{FeatureId::HOG, {}};
    out.values.reserve(static_cast<size_t>(blocks_x) * blocks_y * block_len);
    std::vector<double> block(block_len);
    for (int by = 0; by < blocks_y; ++by) {
        for (int bx = 0; bx < blocks_x; ++bx) {
            int k = 0;
            double sq = 0.0;
            for (int cy = by * geo.hog_block; cy < (by + 1) * geo.hog_block; ++cy) {
                for (int cx = bx * geo.hog_block; cx < (bx + 1) * geo.hog_block; ++cx) {
                    for (int bin = 0; bin < bins; ++bin) {
                        const double v = cell_hist[(static_cast<size_t>(cy) * cells_x + cx) * bins + bin];
                        block[k++] = v;
                        sq += v * v;
                    }
                }
            }
            const double norm = std::sqrt(sq + geo.hog_epsilon * geo.hog_epsilon);
            for (double v : block) out.values.push_back(v / norm);
        }
    }
    return out;
}

namespace {

// Uniform LBP code -> histogram bin. 58 uniform patterns in ascending code
// order, everything else in bin 58.
const std::array<int, 256>& lbp_bin_table() {
    static const std::array<int, 256> table = [] {
        std::array<int, 256> t{};
        int next = 0;
        for (int code = 0; code < 256; ++code) {
            int transitions = 0;
            for (int k = 0; k < 8; ++k) {
                const int a = (code >> k) & 1;
                const int b = (code >> ((k + 1) % 8)) & 1;
                transitions += a != b;
            }
            t[code] = transitions <= 2 ? next++ : 58;
        }
        return t;
    }();
    return table;
}

constexpr int kLbpOffsets[8][2] = {
    {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}};

}  // namespace

DescriptorVector lbp_histogram(const GlyphRaster& raster) {
    if (raster.width < 3 || raster.height < 3) throw ValidationError("lbp needs at least 3x3 input");
    const auto& bin_of = lbp_bin_table();
    DescriptorVector out{FeatureId::LBP, std::vector<double>(59, 0.0)};
    for (int y = 1; y < raster.height - 1; ++y) {
        for (int x = 1; x < raster.width - 1; ++x) {
            const uint8_t c = raster.at(y, x);
            int code = 0;
            for (int k = 0; k < 8; ++k) {
                code <<= 1;
                code |= raster.at(y + kLbpOffsets[k][0], x + kLbpOffsets[k][1]) >= c;
            }
            out.values[bin_of[code]] += 1.0;
        }
    }
    const double total = static_cast<double>(raster.height - 2) * (raster.width - 2);
    for (double& v : out.values) v /= total;
    return out;
}

double lbp_similarity(const GlyphRaster& a, const GlyphRaster& b) {
    require_same_size(a, b);
    const DescriptorVector ha = lbp_histogram(a), hb = lbp_histogram(b);
    if (ha.values == hb.values) return 1.0;
    double inter = 0.0;
    for (size_t i = 0; i < ha.values.size(); ++i) inter += std::min(ha.values[i], hb.values[i]);
    return std::clamp(inter, 0.0, 1.0);
}

namespace {

struct GaborKernel {
    int radius = 0;
    std::vector<double> even;  // cosine carrier, zero mean, unit L2
    std::vector<double> odd;   // sine carrier, zero mean, unit L2
};

std::vector<GaborKernel> build_gabor_bank(const FeatureGeometry& geo) {
    std::vector<GaborKernel> bank;
    bank.reserve(geo.gabor_wavelengths.size() * geo.gabor_orientations);
    for (double lambda : geo.gabor_wavelengths) {
        const double sigma = geo.gabor_sigma_ratio * lambda;
        const int radius = static_cast<int>(std::ceil(geo.gabor_radius_factor * sigma));
        for (int o = 0; o < geo.gabor_orientations; ++o) {
            const double theta = o * std::numbers::pi / geo.gabor_orientations;
            const double ct = std::cos(theta), st = std::sin(theta);
            GaborKernel k;
            k.radius = radius;
            const int side = 2 * radius + 1;
            k.even.resize(static_cast<size_t>(side) * side);
            k.odd.resize(k.even.size());
            size_t idx = 0;
            for (int y = -radius; y <= radius; ++y) {
                for (int x = -radius; x <= radius; ++x, ++idx) {
                    const double xr = x * ct + y * st;
                    const double yr = -x * st + y * ct;
                    const double env = std::exp(-(xr * xr + yr * yr) / (2.0 * sigma * sigma));
                    const double phase = 2.0 * std::numbers::pi * xr / lambda;
                    k.even[idx] = env * std::cos(phase);
                    k.odd[idx] = env * std::sin(phase);
                }
            }
            for (auto* part : {&k.even, &k.odd}) {
                double mean = 0.0;
                for (double v : *part) mean += v;
                mean /= static_cast<double>(part->size());
                double sq = 0.0;
                for (double& v : *part) {
                    v -= mean;
                    sq += v * v;
                }
                const double norm = std::sqrt(sq);
                if (norm > 0.0)
                    for (double& v : *part) v /= norm;
            }
            bank.push_back(std::move(k));
        }
    }
    return bank;
}

}  // namespace

DescriptorVector gabor_descriptor(const GlyphRaster& raster, const FeatureGeometry& geo) {
    if (!raster.valid()) throw ValidationError("gabor: invalid raster");
    const auto bank = build_gabor_bank(geo);
    const int w = raster.width, h = raster.height;
    DescriptorVector out{FeatureId::Gabor, {}};
    out.values.reserve(bank.size());
    for (const GaborKernel& k : bank) {
        double total_mag = 0.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double se = 0.0, so = 0.0;
                size_t idx = 0;
                if (y >= k.radius && y + k.radius < h && x >= k.radius && x + k.radius < w) {
                    for (int ky = -k.radius; ky <= k.radius; ++ky) {
                        const uint8_t* row = raster.pixels.data() + static_cast<size_t>(y + ky) * w + x - k.radius;
                        const int side = 2 * k.radius + 1;
                        for (int kx = 0; kx < side; ++kx, ++idx) {
                            const double p = row[kx];
                            se += p * k.even[idx];
                            so += p * k.odd[idx];
                        }
                    }
                } else {
                    for (int ky = -k.radius; ky <= k.radius; ++ky) {
                        const int sy = std::clamp(y + ky, 0, h - 1);
                        for (int kx = -k.radius; kx <= k.radius; ++kx, ++idx) {
                            const int sx = std::clamp(x + kx, 0, w - 1);
                            const double p = raster.at(sy, sx);
                            se += p * k.even[idx];
                            so += p * k.odd[idx];
                        }
                    }
                }
                total_mag += std::sqrt(se * se + so * so);
            }
        }
        double channel = total_mag / (static_cast<double>(w) * h);
        // Zero-mean kernels leave ~1e-13 roundoff on constant windows; snap it
        // so flat rasters produce a genuinely zero descriptor.
        if (channel < 1e-9) channel = 0.0;
        out.values.push_back(channel);
    }
    return out;
}

double descriptor_cosine(const DescriptorVector& a, const DescriptorVector& b) {
    if (a.values.size() != b.values.size()) throw ValidationError("descriptor dimension mismatch");
    if (a.values == b.values) return 1.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

double hog_similarity(const GlyphRaster& a, const GlyphRaster& b, const FeatureGeometry& geo) {
    require_same_size(a, b);
    return descriptor_cosine(hog_descriptor(a, geo), hog_descriptor(b, geo));
}

double gabor_similarity(const GlyphRaster& a, const GlyphRaster& b, const FeatureGeometry& geo) {
    require_same_size(a, b);
    return descriptor_cosine(gabor_descriptor(a, geo), gabor_descriptor(b, geo));
}

double pair_similarity(FeatureId id, const GlyphRaster& a, const GlyphRaster& b, const FeatureGeometry& geo) {
    switch (id) {
        case FeatureId::PixelMIoU:
            require_same_size(a, b);
            return pixel_miou_similarity(binarize(a, geo.miou_binarize), binarize(b, geo.miou_binarize));
        case FeatureId::PHash: return phash_similarity(a, b, geo);
        case FeatureId::HOG: return hog_similarity(a, b, geo);
        case FeatureId::LBP: return lbp_similarity(a, b);
        case FeatureId::Gabor: return gabor_similarity(a, b, geo);
    }
    throw ValidationError("unknown feature id");
}

Matrix feature_similarity_matrix(const TemplateSet& set, FeatureId id, const FeatureGeometry& geo) {
    set.validate();
    const int n = set.templates();
    const int f = set.font_count();

    // Per-raster artifacts are cached once; pairs combine cached values so
    // sim(i,j) and sim(j,i) are the same floating-point expression.
    auto cell = [&](int i, int j) { return static_cast<size_t>(i) * f + j; };
    std::vector<BinaryGlyph> masks;
    std::vector<uint64_t> hashes;
    std::vector<DescriptorVector> descs;
    if (id == FeatureId::PixelMIoU) {
        masks.resize(set.rasters.size());
        for (size_t r = 0; r < set.rasters.size(); ++r) masks[r] = binarize(set.rasters[r], geo.miou_binarize);
    } else if (id == FeatureId::PHash) {
        hashes.resize(set.rasters.size());
        for (size_t r = 0; r < set.rasters.size(); ++r) hashes[r] = phash(set.rasters[r], geo);
    } else {
        descs.resize(set.rasters.size());
        for (size_t r = 0; r < set.rasters.size(); ++r) {
            switch (id) {
                case FeatureId::HOG: descs[r] = hog_descriptor(set.rasters[r], geo); break;
                case FeatureId::LBP: descs[r] = lbp_histogram(set.rasters[r]); break;
                case FeatureId::Gabor: descs[r] = gabor_descriptor(set.rasters[r], geo); break;
                default: throw ValidationError("unknown feature id");
            }
        }
    }

    auto pair_value = [&](int i, int j, int font) -> double {
        switch (id) {
            case FeatureId::PixelMIoU: return pixel_miou_similarity(masks[cell(i, font)], masks[cell(j, font)]);
            case FeatureId::PHash: {
                const int bits = geo.phash_block * geo.phash_block;
                return 1.0 - static_cast<double>(std::popcount(hashes[cell(i, font)] ^ hashes[cell(j, font)])) / bits;
            }
            case FeatureId::LBP: {
                const auto& ha = descs[cell(i, font)].values;
                const auto& hb = descs[cell(j, font)].values;
                if (ha == hb) return 1.0;
                double inter = 0.0;
                for (size_t t = 0; t < ha.size(); ++t) inter += std::min(ha[t], hb[t]);
                return std::clamp(inter, 0.0, 1.0);
            }
            case FeatureId::HOG:
            case FeatureId::Gabor: return descriptor_cosine(descs[cell(i, font)], descs[cell(j, font)]);
        }
        throw ValidationError("unknown feature id");
    };

    Matrix m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            double sum = 0.0;
            for (int font = 0; font < f; ++font) sum += pair_value(i, j, font);
            const double v = sum / f;
            m.at(i, j) = v;
            m.at(j, i) = v;
        }
    }
    return m;
}

FeatureSimilarityTensor build_tensor(const TemplateSet& set, const FeatureGeometry& geo) {
    FeatureSimilarityTensor tensor;
    tensor.n = set.templates();
    for (FeatureId id : kAllFeatures) tensor.matrices.emplace(id, feature_similarity_matrix(set, id, geo));
    tensor.validate();
    return tensor;
}

}  // namespace gm
