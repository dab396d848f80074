#pragma once

#include <filesystem>
#include <vector>

#include "core/glyphs.hpp"

namespace gm {

struct LabeledDataset {
    int width = 0;
    int height = 0;
    int classes = 0;
    std::vector<uint8_t> images;  // size * width * height bytes, row-major
    std::vector<int> labels;

    size_t size() const { return labels.size(); }
    int input_dim() const { return width * height; }
    const uint8_t* image(size_t i) const { return images.data() + i * static_cast<size_t>(input_dim()); }
    void validate() const;
};

// IDX container (the MNIST file layout): big-endian magic + dims, u8 payload.
void write_idx_images(const std::filesystem::path& path, const LabeledDataset& data);
void write_idx_labels(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset load_idx_dataset(const std::filesystem::path& images_path,
                                const std::filesystem::path& labels_path);

struct SynthDataset {
    LabeledDataset train;
    LabeledDataset test;
};

// Labeled samples rendered from the same stroke chain as synth_template_set,
// so label c is an instance of template c. Per-sample shift/thickness jitter
// plus pixel noise stand in for handwriting variation. Samples use MNIST
// polarity (bright strokes, dark background), unlike the template rasters.
SynthDataset synth_labeled_dataset(uint64_t seed, int classes, int train_per_class, int test_per_class,
                                   int side);

}  // namespace gm
