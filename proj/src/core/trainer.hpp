#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/loss.hpp"

namespace gm {

enum class LossMode { Softmax, Am, TemplateInstance };

std::string loss_mode_name(LossMode mode);
LossMode loss_mode_from_name(const std::string& name);

struct TrainConfig {
    LossMode mode = LossMode::Softmax;
    LossConfig loss;
    int batch_size = 128;
    double momentum = 0.9;
    double learning_rate = 0.1;
    // Empty = tenfold drop at every 7/36 of max_iter.
    std::vector<int64_t> lr_milestones;
    int64_t max_iter = 3000;
    uint64_t seed = 1;
    std::vector<int> hidden = {256, 64};
    int feature_dim = 2;
    void validate() const;
};

// MLP with a cosine head: leaky-rectifier hidden layers, linear feature layer
// whose output is L2-normalized, then cosines against unit-norm class rows.
struct ToyNetwork {
    std::vector<Matrix> w;             // per linear layer, out x in
    std::vector<std::vector<double>> b;
    Matrix cw;                         // classes x feature_dim
    int input_dim = 0;
    int feature_dim = 0;
    int classes = 0;
    double leaky_slope = 0.01;

    static ToyNetwork init(int input_dim, const std::vector<int>& hidden, int feature_dim, int classes,
                           uint64_t seed);
    int layer_count() const { return static_cast<int>(w.size()); }
    void validate() const;
};

struct ForwardCache {
    std::vector<Matrix> pre;           // preactivation per layer
    std::vector<Matrix> post;          // activation per layer (last = feature, linear)
    std::vector<double> feature_norm;  // per sample, >= epsilon
    Matrix fhat;                       // normalized features
    Matrix cwhat;                      // normalized class weight rows
    std::vector<double> cw_norm;
    Matrix cosines;                    // clamped to [-1, 1]
};

void net_forward(const ToyNetwork& net, const Matrix& inputs, ForwardCache& cache);

struct NetGrads {
    std::vector<Matrix> w;
    std::vector<std::vector<double>> b;
    Matrix cw;
};

// grad_cosines = d(mean loss)/d(cosines); returns d(mean loss)/d(every param).
NetGrads net_backward(const ToyNetwork& net, const Matrix& inputs, const ForwardCache& cache,
                      const Matrix& grad_cosines);

struct AngleStats {
    std::vector<double> intra_class_std;  // radians, per class
    double mean_intra_class_std = 0.0;
    double min_inter_class_weight_angle = 0.0;
    std::vector<double> weight_angles;    // atan2 of rows, only when feature_dim == 2
};

struct EvalResult {
    double accuracy = 0.0;
    AngleStats angles;
};

EvalResult evaluate(const ToyNetwork& net, const LabeledDataset& dataset);

struct EpochStat {
    int epoch = 0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    double mean_loss = 0.0;  // mean over the epoch's training batches
};

struct TrainReport {
    std::vector<EpochStat> epochs;
    double final_train_accuracy = 0.0;
    double final_test_accuracy = 0.0;
    AngleStats train_angles;
    AngleStats test_angles;
    uint64_t seed = 0;
    std::string init = "uniform_fan_in";
    std::string embeddings_path;  // filled by callers that export
};

struct TrainResult {
    ToyNetwork net;
    TrainReport report;
};

TrainResult train(const LabeledDataset& train_set, const LabeledDataset& test_set, const TrainConfig& cfg,
                  const std::optional<PriorMarginTable>& margins);

// CSV rows "label,f1,f2" of pre-normalization features, then the class weight
// rows with sentinel label -1. Requires feature_dim == 2.
void export_embeddings(const ToyNetwork& net, const LabeledDataset& dataset,
                       const std::filesystem::path& path);

}  // namespace gm
