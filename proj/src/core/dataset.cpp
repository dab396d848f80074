#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "core/errors.hpp"
#include "core/numeric.hpp"

namespace gm {

void LabeledDataset::validate() const {
    if (width <= 0 || height <= 0) throw ValidationError("dataset image size must be positive");
    if (classes < 2) throw ValidationError("dataset needs at least two classes");
    if (labels.empty()) throw ValidationError("dataset is empty");
    if (images.size() != labels.size() * static_cast<size_t>(input_dim()))
        throw ValidationError("dataset image payload size mismatch");
    for (int y : labels)
        if (y < 0 || y >= classes) throw ValidationError("dataset label out of range");
}

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

void put_be32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_be32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError(std::string("idx: truncated ") + what);
    return static_cast<uint32_t>(b[0]) << 24 | static_cast<uint32_t>(b[1]) << 16 |
           static_cast<uint32_t>(b[2]) << 8 | static_cast<uint32_t>(b[3]);
}

}  // namespace

void write_idx_images(const std::filesystem::path& path, const LabeledDataset& data) {
    data.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    put_be32(out, kIdxImagesMagic);
    put_be32(out, static_cast<uint32_t>(data.size()));
    put_be32(out, static_cast<uint32_t>(data.height));
    put_be32(out, static_cast<uint32_t>(data.width));
    out.write(reinterpret_cast<const char*>(data.images.data()), static_cast<std::streamsize>(data.images.size()));
    if (!out) throw IoError("idx image write failed: " + path.string());
}

void write_idx_labels(const std::filesystem::path& path, const LabeledDataset& data) {
    data.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    put_be32(out, kIdxLabelsMagic);
    put_be32(out, static_cast<uint32_t>(data.size()));
    std::vector<uint8_t> bytes(data.labels.begin(), data.labels.end());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("idx label write failed: " + path.string());
}

LabeledDataset load_idx_dataset(const std::filesystem::path& images_path,
                                const std::filesystem::path& labels_path) {
    std::ifstream img_in(images_path, std::ios::binary);
    if (!img_in) throw IoError("cannot open " + images_path.string());
    if (get_be32(img_in, "image magic") != kIdxImagesMagic)
        throw IoError("idx: bad image magic in " + images_path.string());
    const uint32_t count = get_be32(img_in, "image count");
    const uint32_t rows = get_be32(img_in, "image rows");
    const uint32_t cols = get_be32(img_in, "image cols");
    if (count == 0 || rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
        throw IoError("idx: implausible image dimensions in " + images_path.string());

    LabeledDataset data;
    data.width = static_cast<int>(cols);
    data.height = static_cast<int>(rows);
    data.images.resize(static_cast<size_t>(count) * rows * cols);
    img_in.read(reinterpret_cast<char*>(data.images.data()), static_cast<std::streamsize>(data.images.size()));
    if (img_in.gcount() != static_cast<std::streamsize>(data.images.size()))
        throw IoError("idx: truncated image payload in " + images_path.string());

    std::ifstream lbl_in(labels_path, std::ios::binary);
    if (!lbl_in) throw IoError("cannot open " + labels_path.string());
    if (get_be32(lbl_in, "label magic") != kIdxLabelsMagic)
        throw IoError("idx: bad label magic in " + labels_path.string());
    const uint32_t label_count = get_be32(lbl_in, "label count");
    if (label_count != count) throw ValidationError("idx: image/label count mismatch");
    std::vector<uint8_t> bytes(label_count);
    lbl_in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (lbl_in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError("idx: truncated label payload in " + labels_path.string());

    data.labels.assign(bytes.begin(), bytes.end());
    data.classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
    if (data.classes < 2) throw ValidationError("dataset needs at least two classes");
    data.validate();
    return data;
}

namespace {

LabeledDataset synth_split(const std::vector<SynthStrokes>& chain, const Prng& root, const char* split_tag,
                           int per_class, int side) {
    const int classes = static_cast<int>(chain.size());
    LabeledDataset data;
    data.width = side;
    data.height = side;
    data.classes = classes;
    data.images.reserve(static_cast<size_t>(classes) * per_class * side * side);
    data.labels.reserve(static_cast<size_t>(classes) * per_class);
    const Prng split_stream = root.derive(split_tag);
    for (int c = 0; c < classes; ++c) {
        const Prng class_stream = split_stream.derive(static_cast<uint64_t>(c));
        for (int k = 0; k < per_class; ++k) {
            Prng stream = class_stream.derive(static_cast<uint64_t>(k));
            const double dx = stream.uniform(-0.07, 0.07);
            const double dy = stream.uniform(-0.07, 0.07);
            const double ts = stream.uniform(0.75, 1.3);
            GlyphRaster img = render_synth_glyph(chain[c], side, dx, dy, ts);
            // MNIST polarity: bright strokes on a dark background, so inputs
            // are sparse. Templates keep the opposite, ink-is-dark convention.
            for (uint8_t& p : img.pixels) {
                const double noisy = (255 - p) + 10.0 * stream.normal();
                p = static_cast<uint8_t>(std::clamp<long>(std::lround(noisy), 0, 255));
            }
            data.images.insert(data.images.end(), img.pixels.begin(), img.pixels.end());
            data.labels.push_back(c);
        }
    }
    data.validate();
    return data;
}

}  // namespace

SynthDataset synth_labeled_dataset(uint64_t seed, int classes, int train_per_class, int test_per_class,
                                   int side) {
    if (classes < 2) throw ValidationError("dataset needs at least two classes");
    if (train_per_class < 1 || test_per_class < 1) throw ValidationError("per-class counts must be positive");
    const std::vector<SynthStrokes> chain = synth_stroke_chain(seed, classes);
    const Prng root(seed);
    SynthDataset out;
    out.train = synth_split(chain, root, "train", train_per_class, side);
    out.test = synth_split(chain, root, "test", test_per_class, side);
    return out;
}

}  // namespace gm
