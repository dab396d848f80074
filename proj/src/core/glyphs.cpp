#include "core/glyphs.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "core/errors.hpp"
#include "core/numeric.hpp"

namespace gm {

size_t BinaryGlyph::foreground_count() const {
    return static_cast<size_t>(std::count(mask.begin(), mask.end(), true));
}

void TemplateSet::validate() const {
    if (templates() < 2) throw ValidationError("need at least two templates");
    if (font_count() < 1) throw ValidationError("need at least one font");
    if (rasters.size() != static_cast<size_t>(templates()) * font_count())
        throw ValidationError("incomplete template grid");
    const int w = rasters.front().width;
    const int h = rasters.front().height;
    for (const auto& r : rasters) {
        if (!r.valid()) throw ValidationError("template set contains an invalid raster");
        if (r.width != w || r.height != h) throw ValidationError("template rasters differ in size");
    }
}

uint8_t otsu_threshold(const GlyphRaster& raster) {
    std::array<int64_t, 256> hist{};
    for (uint8_t p : raster.pixels) ++hist[p];

    int nonzero_bins = 0;
    int single_value = 0;
    for (int v = 0; v < 256; ++v) {
        if (hist[v] > 0) {
            ++nonzero_bins;
            single_value = v;
        }
    }
    if (nonzero_bins <= 1) return static_cast<uint8_t>(single_value);

    const double total = static_cast<double>(raster.pixels.size());
    double sum_all = 0.0;
    for (int v = 0; v < 256; ++v) sum_all += static_cast<double>(v) * hist[v];

    // Foreground is strictly below t, so candidate t splits [0, t) | [t, 255].
    int best_t = 0;
    double best_var = -1.0;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < 256; ++t) {
        if (t > 0) {
            w0 += hist[t - 1];
            sum0 += static_cast<double>(t - 1) * hist[t - 1];
        }
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    return static_cast<uint8_t>(best_t);
}

BinaryGlyph binarize(const GlyphRaster& raster, const BinarizePolicy& policy) {
    if (!raster.valid()) throw ValidationError("binarize: invalid raster");
    const uint8_t t = policy.kind == BinarizePolicy::Kind::Fixed ? policy.threshold : otsu_threshold(raster);
    BinaryGlyph out;
    out.width = raster.width;
    out.height = raster.height;
    out.mask.resize(raster.pixels.size());
    for (size_t i = 0; i < raster.pixels.size(); ++i) out.mask[i] = raster.pixels[i] < t;
    return out;
}

GlyphRaster resize_bilinear(const GlyphRaster& raster, int side) {
    if (!raster.valid()) throw ValidationError("resize: invalid raster");
    if (side <= 0) throw ValidationError("resize: side must be positive");
    GlyphRaster out;
    out.width = side;
    out.height = side;
    out.pixels.resize(static_cast<size_t>(side) * side);
    const double sx = side > 1 ? static_cast<double>(raster.width - 1) / (side - 1) : 0.0;
    const double sy = side > 1 ? static_cast<double>(raster.height - 1) / (side - 1) : 0.0;
    for (int y = 0; y < side; ++y) {
        const double fy = y * sy;
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, raster.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < side; ++x) {
            const double fx = x * sx;
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, raster.width - 1);
            const double wx = fx - x0;
            const double top = (1.0 - wx) * raster.at(y0, x0) + wx * raster.at(y0, x1);
            const double bot = (1.0 - wx) * raster.at(y1, x0) + wx * raster.at(y1, x1);
            const double v = (1.0 - wy) * top + wy * bot;
            out.at(y, x) = static_cast<uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
        }
    }
    return out;
}

GlyphRaster invert(const GlyphRaster& raster) {
    GlyphRaster out = raster;
    for (auto& p : out.pixels) p = static_cast<uint8_t>(255 - p);
    return out;
}

namespace {

SynthStroke draw_stroke(Prng& stream) {
    SynthStroke s;
    s.horizontal = (stream.next_u64() & 1) != 0;
    s.cx = stream.uniform(0.22, 0.78);
    s.cy = stream.uniform(0.22, 0.78);
    s.length = stream.uniform(0.35, 0.68);
    s.thickness = stream.uniform(0.06, 0.12);
    return s;
}

// Replacement strokes must land visibly elsewhere, otherwise a one-stroke
// edit could leave two templates nearly identical.
SynthStroke draw_replacement(Prng& stream, const SynthStroke& old) {
    for (;;) {
        SynthStroke s = draw_stroke(stream);
        if (s.horizontal != old.horizontal) return s;
        if (std::abs(s.cx - old.cx) + std::abs(s.cy - old.cy) > 0.3) return s;
    }
}

void rasterize_stroke(GlyphRaster& img, const SynthStroke& s, double dx, double dy, double thickness_scale) {
    const double half_l = s.length / 2.0;
    const double half_t = s.thickness * thickness_scale / 2.0;
    const double x0 = s.cx + dx - (s.horizontal ? half_l : half_t);
    const double x1 = s.cx + dx + (s.horizontal ? half_l : half_t);
    const double y0 = s.cy + dy - (s.horizontal ? half_t : half_l);
    const double y1 = s.cy + dy + (s.horizontal ? half_t : half_l);
    const int side = img.width;
    int px0 = std::clamp<int>(static_cast<int>(std::lround(x0 * side)), 0, side - 1);
    int px1 = std::clamp<int>(static_cast<int>(std::lround(x1 * side)), 1, side);
    int py0 = std::clamp<int>(static_cast<int>(std::lround(y0 * side)), 0, side - 1);
    int py1 = std::clamp<int>(static_cast<int>(std::lround(y1 * side)), 1, side);
    if (px1 <= px0) px1 = px0 + 1;
    if (py1 <= py0) py1 = py0 + 1;
    for (int y = py0; y < py1; ++y)
        for (int x = px0; x < px1; ++x) img.at(y, x) = 0;
}

}  // namespace

std::vector<SynthStrokes> synth_stroke_chain(uint64_t seed, int n) {
    if (n < 2) throw ValidationError("need at least two templates");
    Prng stream = Prng(seed).derive("strokes");
    std::vector<SynthStrokes> strokes(n);
    for (int k = 0; k < kSynthStrokesPerTemplate; ++k) strokes[0][k] = draw_stroke(stream);
    for (int i = 1; i < n; ++i) {
        strokes[i] = strokes[i - 1];
        const int slot = (i - 1) % kSynthStrokesPerTemplate;
        strokes[i][slot] = draw_replacement(stream, strokes[i - 1][slot]);
    }
    return strokes;
}

GlyphRaster render_synth_glyph(const SynthStrokes& strokes, int side, double dx, double dy,
                               double thickness_scale) {
    if (side < 8) throw ValidationError("synth side must be at least 8");
    GlyphRaster img;
    img.width = side;
    img.height = side;
    img.pixels.assign(static_cast<size_t>(side) * side, 255);
    for (const SynthStroke& s : strokes) rasterize_stroke(img, s, dx, dy, thickness_scale);
    return img;
}

TemplateSet synth_template_set(uint64_t seed, int n, int f, int side) {
    if (n < 2) throw ValidationError("need at least two templates");
    if (f < 1) throw ValidationError("need at least one font");
    if (side < 8) throw ValidationError("synth side must be at least 8");

    const Prng root(seed);
    const std::vector<SynthStrokes> strokes = synth_stroke_chain(seed, n);

    TemplateSet set;
    set.template_ids.reserve(n);
    for (int i = 0; i < n; ++i) set.template_ids.push_back("t" + std::to_string(i));
    set.fonts.reserve(f);
    for (int j = 0; j < f; ++j) set.fonts.push_back("f" + std::to_string(j));

    set.rasters.resize(static_cast<size_t>(n) * f);
    for (int j = 0; j < f; ++j) {
        Prng font_stream = root.derive("font").derive(static_cast<uint64_t>(j));
        const double dx = font_stream.uniform(-0.025, 0.025);
        const double dy = font_stream.uniform(-0.025, 0.025);
        const double thickness_scale = font_stream.uniform(0.85, 1.2);
        for (int i = 0; i < n; ++i)
            set.raster(i, j) = render_synth_glyph(strokes[i], side, dx, dy, thickness_scale);
    }
    set.validate();
    return set;
}

}  // namespace gm
