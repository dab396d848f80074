#include "core/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "core/errors.hpp"

namespace gm {

namespace {

int read_pnm_token(std::istream& in) {
    // Skips whitespace and '#' comments between header fields.
    for (;;) {
        int c = in.peek();
        if (c == EOF) throw IoError("pgm: truncated header");
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        break;
    }
    int value = 0;
    if (!(in >> value)) throw IoError("pgm: malformed header");
    return value;
}

}  // namespace

GlyphRaster read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '5') throw IoError("pgm: expected P5 magic in " + path.string());
    const int width = read_pnm_token(in);
    const int height = read_pnm_token(in);
    const int maxval = read_pnm_token(in);
    if (width <= 0 || height <= 0) throw IoError("pgm: bad dimensions in " + path.string());
    if (maxval <= 0 || maxval > 255) throw IoError("pgm: only 8-bit maxval supported in " + path.string());
    in.get();  // single whitespace byte after maxval
    GlyphRaster out;
    out.width = width;
    out.height = height;
    out.pixels.resize(static_cast<size_t>(width) * height);
    in.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(out.pixels.size()))
        throw IoError("pgm: truncated pixel data in " + path.string());
    return out;
}

void write_pgm(const std::filesystem::path& path, const GlyphRaster& raster) {
    if (!raster.valid()) throw ValidationError("write_pgm: invalid raster");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << raster.width << " " << raster.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(raster.pixels.data()),
              static_cast<std::streamsize>(raster.pixels.size()));
    if (!out) throw IoError("pgm: write failed for " + path.string());
}

GlyphRaster read_png(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.string().c_str(), "rb");
    if (!fp) throw IoError("cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("png: decoder init failed");
    }

    GlyphRaster out;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("png: decode failed for " + path.string());
    }

    png_init_io(png, fp);
    png_read_info(png, info);

    // Normalize everything to 8-bit grayscale.
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    if (out.width <= 0 || out.height <= 0) png_error(png, "bad dimensions");
    out.pixels.resize(static_cast<size_t>(out.width) * out.height);
    row_ptrs.resize(out.height);
    for (int y = 0; y < out.height; ++y)
        row_ptrs[y] = out.pixels.data() + static_cast<size_t>(y) * out.width;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);

    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

GlyphRaster read_image(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".pgm") return read_pgm(path);
    if (ext == ".png") return read_png(path);
    throw IoError("unsupported image extension: " + path.string());
}

std::vector<ManifestEntry> parse_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        size_t start = 0;
        for (;;) {
            const size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() < 3 || fields.size() > 4)
            throw ValidationError("manifest line " + std::to_string(line_no) + ": expected 3 or 4 tab-separated fields");
        ManifestEntry e;
        e.template_id = fields[0];
        e.font_id = fields[1];
        e.relative_path = fields[2];
        if (e.template_id.empty() || e.font_id.empty() || e.relative_path.empty())
            throw ValidationError("manifest line " + std::to_string(line_no) + ": empty field");
        if (fields.size() == 4) {
            if (fields[3] != "invert")
                throw ValidationError("manifest line " + std::to_string(line_no) + ": unknown flag '" + fields[3] + "'");
            e.invert = true;
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

TemplateSet load_template_set(const std::filesystem::path& manifest_path, int side) {
    if (side <= 0) throw ValidationError("side must be positive");
    const auto entries = parse_manifest(manifest_path);
    if (entries.empty()) throw ValidationError("manifest has no entries");

    TemplateSet set;
    std::map<std::string, int> template_index;
    std::map<std::string, int> font_index;
    for (const auto& e : entries) {
        if (template_index.emplace(e.template_id, set.template_ids.size()).second)
            set.template_ids.push_back(e.template_id);
        if (font_index.emplace(e.font_id, set.fonts.size()).second)
            set.fonts.push_back(e.font_id);
    }

    const auto base = manifest_path.parent_path();
    set.rasters.resize(set.template_ids.size() * set.fonts.size());
    std::vector<bool> filled(set.rasters.size(), false);
    for (const auto& e : entries) {
        const int i = template_index.at(e.template_id);
        const int j = font_index.at(e.font_id);
        const size_t cell = static_cast<size_t>(i) * set.fonts.size() + j;
        if (filled[cell])
            throw ValidationError("duplicate manifest cell: " + e.template_id + "/" + e.font_id);
        GlyphRaster img = read_image(base / e.relative_path);
        if (e.invert) img = invert(img);
        set.rasters[cell] = resize_bilinear(img, side);
        filled[cell] = true;
    }
    for (size_t i = 0; i < set.template_ids.size(); ++i)
        for (size_t j = 0; j < set.fonts.size(); ++j)
            if (!filled[i * set.fonts.size() + j])
                throw ValidationError("incomplete template grid: missing " + set.template_ids[i] + "/" +
                                      set.fonts[j]);
    set.validate();
    return set;
}

void write_template_set(const std::filesystem::path& dir, const TemplateSet& set) {
    set.validate();
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.tsv");
    if (!manifest) throw IoError("cannot open manifest for writing in " + dir.string());
    for (size_t i = 0; i < set.template_ids.size(); ++i) {
        for (size_t j = 0; j < set.fonts.size(); ++j) {
            const std::string name = set.template_ids[i] + "_" + set.fonts[j] + ".pgm";
            write_pgm(dir / name, set.raster(static_cast<int>(i), static_cast<int>(j)));
            manifest << set.template_ids[i] << '\t' << set.fonts[j] << '\t' << name << '\n';
        }
    }
    if (!manifest) throw IoError("manifest write failed in " + dir.string());
}

}  // namespace gm
