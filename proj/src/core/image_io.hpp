#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/glyphs.hpp"

namespace gm {

GlyphRaster read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GlyphRaster& raster);

// 8-bit grayscale decode; color and palette inputs are converted.
GlyphRaster read_png(const std::filesystem::path& path);

// Dispatch on extension (.pgm / .png).
GlyphRaster read_image(const std::filesystem::path& path);

struct ManifestEntry {
    std::string template_id;
    std::string font_id;
    std::string relative_path;
    bool invert = false;
};

// Tab-separated rows: template_id, font_id, relative path, optional "invert".
// Blank lines and lines starting with '#' are skipped.
std::vector<ManifestEntry> parse_manifest(const std::filesystem::path& path);

// Loads every manifest row, resizes each glyph to side x side, and arranges
// the grid with template and font order taken from first appearance.
// Every (template, font) cell must be filled exactly once.
TemplateSet load_template_set(const std::filesystem::path& manifest_path, int side);

// Writes one PGM per cell plus a manifest.tsv that load_template_set accepts.
void write_template_set(const std::filesystem::path& dir, const TemplateSet& set);

}  // namespace gm
