#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gm {

// Grayscale glyph image, row-major, 8-bit. Ink is dark: low value = ink.
struct GlyphRaster {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;

    bool valid() const {
        return width > 0 && height > 0 && pixels.size() == static_cast<size_t>(width) * height;
    }
    uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
    uint8_t& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }

    bool operator==(const GlyphRaster&) const = default;
};

// Foreground mask of a raster; true = ink.
struct BinaryGlyph {
    int width = 0;
    int height = 0;
    std::vector<bool> mask;

    bool at(int r, int c) const { return mask[static_cast<size_t>(r) * width + c]; }
    size_t foreground_count() const;

    bool operator==(const BinaryGlyph&) const = default;
};

// N templates x F fonts of same-size rasters; the template pool the affinity
// pipeline runs on. Cell (i, j) is rasters[i * fonts.size() + j].
struct TemplateSet {
    std::vector<std::string> template_ids;
    std::vector<std::string> fonts;
    std::vector<GlyphRaster> rasters;

    int templates() const { return static_cast<int>(template_ids.size()); }
    int font_count() const { return static_cast<int>(fonts.size()); }
    int side() const { return rasters.empty() ? 0 : rasters.front().width; }

    const GlyphRaster& raster(int template_index, int font_index) const {
        return rasters[static_cast<size_t>(template_index) * fonts.size() + font_index];
    }
    GlyphRaster& raster(int template_index, int font_index) {
        return rasters[static_cast<size_t>(template_index) * fonts.size() + font_index];
    }

    void validate() const;  // throws ValidationError on broken invariants
};

struct BinarizePolicy {
    enum class Kind { Fixed, Otsu };
    Kind kind = Kind::Otsu;
    uint8_t threshold = 128;  // used by Fixed

    static BinarizePolicy fixed(uint8_t t) { return {Kind::Fixed, t}; }
    static BinarizePolicy otsu() { return {Kind::Otsu, 0}; }
};

// Foreground = intensity strictly below the threshold. Otsu picks the
// threshold from the 256-bin histogram, ties toward the lower value; a
// uniform image thresholds at its own intensity (empty foreground).
BinaryGlyph binarize(const GlyphRaster& raster, const BinarizePolicy& policy);

uint8_t otsu_threshold(const GlyphRaster& raster);

// Bilinear resize with corner-aligned sampling. Resizing to the same size
// returns identical pixels.
GlyphRaster resize_bilinear(const GlyphRaster& raster, int side);

GlyphRaster invert(const GlyphRaster& raster);

// Deterministic pseudo-glyphs built from axis-aligned stroke rectangles.
// Consecutive template ids differ in exactly one stroke; the same template
// across fonts keeps its stroke topology under small shift/thickness
// perturbations. Pure function of the arguments.
TemplateSet synth_template_set(uint64_t seed, int n, int f, int side);

// Number of strokes per synthetic template; template pairs at index distance
// >= this share no strokes.
inline constexpr int kSynthStrokesPerTemplate = 6;

// Stroke rectangle in unit coordinates; building block of synthetic glyphs.
struct SynthStroke {
    bool horizontal = false;
    double cx = 0.5, cy = 0.5;
    double length = 0.5, thickness = 0.08;
};

using SynthStrokes = std::array<SynthStroke, kSynthStrokesPerTemplate>;

// Stroke sets for n chained classes: class i+1 replaces exactly one stroke of
// class i. Both the template pool and the labeled sample generator draw from
// this chain, so dataset class c corresponds to template index c.
std::vector<SynthStrokes> synth_stroke_chain(uint64_t seed, int n);

GlyphRaster render_synth_glyph(const SynthStrokes& strokes, int side, double dx, double dy,
                               double thickness_scale);

}  // namespace gm
