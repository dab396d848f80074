#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "core/errors.hpp"

namespace gm {

namespace {
constexpr double kNormEps = 1e-12;
}

std::string loss_mode_name(LossMode mode) {
    switch (mode) {
        case LossMode::Softmax: return "softmax";
        case LossMode::Am: return "am";
        case LossMode::TemplateInstance: return "template_instance";
    }
    throw ValidationError("unknown loss mode");
}

LossMode loss_mode_from_name(const std::string& name) {
    if (name == "softmax") return LossMode::Softmax;
    if (name == "am") return LossMode::Am;
    if (name == "template_instance") return LossMode::TemplateInstance;
    throw ValidationError("unknown loss mode: " + name);
}

void TrainConfig::validate() const {
    loss.validate();
    if (batch_size < 1) throw ValidationError("batch size must be positive");
    if (learning_rate <= 0.0) throw ValidationError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("momentum must lie in [0, 1)");
    if (max_iter < 1) throw ValidationError("max_iter must be positive");
    if (feature_dim < 1) throw ValidationError("feature dimension must be positive");
    for (int hsize : hidden)
        if (hsize < 1) throw ValidationError("hidden sizes must be positive");
}

void ToyNetwork::validate() const {
    if (w.size() != b.size() || w.empty()) throw ValidationError("network layer lists disagree");
    if (cw.rows() != classes || cw.cols() != feature_dim) throw ValidationError("class weight shape mismatch");
}

ToyNetwork ToyNetwork::init(int input_dim, const std::vector<int>& hidden, int feature_dim, int classes,
                            uint64_t seed) {
    if (input_dim < 1 || feature_dim < 1 || classes < 2) throw ValidationError("bad network dimensions");
    ToyNetwork net;
    net.input_dim = input_dim;
    net.feature_dim = feature_dim;
    net.classes = classes;

    Prng stream = Prng(seed).derive("init");
    std::vector<int> sizes;
    sizes.push_back(input_dim);
    for (int hsize : hidden) sizes.push_back(hsize);
    sizes.push_back(feature_dim);

    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int fan_in = sizes[l], fan_out = sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Matrix wm(fan_out, fan_in);
        for (double& v : wm.data()) v = stream.uniform(-bound, bound);
        net.w.push_back(std::move(wm));
        net.b.emplace_back(fan_out, 0.0);
    }

    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    net.cw = Matrix(classes, feature_dim);
    for (double& v : net.cw.data()) v = stream.uniform(-bound, bound);
    for (int j = 0; j < classes; ++j) {
        auto row = net.cw.row(j);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        const double norm = std::max(std::sqrt(sq), kNormEps);
        for (double& v : row) v /= norm;
    }
    net.validate();
    return net;
}

void net_forward(const ToyNetwork& net, const Matrix& inputs, ForwardCache& cache) {
    net.validate();
    if (inputs.cols() != net.input_dim) throw ValidationError("input dimension mismatch");
    const int batch = inputs.rows();
    const int layers = net.layer_count();
    cache.pre.assign(layers, Matrix());
    cache.post.assign(layers, Matrix());

    const Matrix* prev = &inputs;
    for (int l = 0; l < layers; ++l) {
        const Matrix& wm = net.w[l];
        Matrix pre(batch, wm.rows());
        for (int i = 0; i < batch; ++i) {
            const auto in_row = prev->row(i);
            for (int o = 0; o < wm.rows(); ++o) {
                const auto w_row = wm.row(o);
                double acc = net.b[l][o];
                for (size_t k = 0; k < in_row.size(); ++k) acc += w_row[k] * in_row[k];
                pre.at(i, o) = acc;
            }
        }
        Matrix post = pre;
        if (l + 1 < layers) {  // hidden layers rectify; the feature layer is linear
            for (double& v : post.data())
                if (v < 0.0) v *= net.leaky_slope;
        }
        cache.pre[l] = std::move(pre);
        cache.post[l] = std::move(post);
        prev = &cache.post[l];
    }

    const Matrix& feature = cache.post.back();
    cache.feature_norm.assign(batch, 0.0);
    cache.fhat = feature;
    for (int i = 0; i < batch; ++i) {
        auto row = cache.fhat.row(i);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        const double norm = std::max(std::sqrt(sq), kNormEps);
        cache.feature_norm[i] = norm;
        for (double& v : row) v /= norm;
    }

    cache.cwhat = net.cw;
    cache.cw_norm.assign(net.classes, 0.0);
    for (int j = 0; j < net.classes; ++j) {
        auto row = cache.cwhat.row(j);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        const double norm = std::max(std::sqrt(sq), kNormEps);
        cache.cw_norm[j] = norm;
        for (double& v : row) v /= norm;
    }

    cache.cosines = Matrix(batch, net.classes);
    for (int i = 0; i < batch; ++i) {
        const auto f = cache.fhat.row(i);
        for (int j = 0; j < net.classes; ++j) {
            const auto wr = cache.cwhat.row(j);
            double dot = 0.0;
            for (int k = 0; k < net.feature_dim; ++k) dot += f[k] * wr[k];
            cache.cosines.at(i, j) = std::clamp(dot, -1.0, 1.0);
        }
    }
}

NetGrads net_backward(const ToyNetwork& net, const Matrix& inputs, const ForwardCache& cache,
                      const Matrix& grad_cosines) {
    const int batch = inputs.rows();
    const int layers = net.layer_count();
    NetGrads grads;
    grads.w.reserve(layers);
    grads.b.reserve(layers);
    for (int l = 0; l < layers; ++l) {
        grads.w.emplace_back(net.w[l].rows(), net.w[l].cols());
        grads.b.emplace_back(net.w[l].rows(), 0.0);
    }
    grads.cw = Matrix(net.classes, net.feature_dim);

    // Class weight rows: through the row normalization.
    for (int j = 0; j < net.classes; ++j) {
        const auto what = cache.cwhat.row(j);
        std::vector<double> g_what(net.feature_dim, 0.0);
        for (int i = 0; i < batch; ++i) {
            const double g = grad_cosines.at(i, j);
            const auto f = cache.fhat.row(i);
            for (int k = 0; k < net.feature_dim; ++k) g_what[k] += g * f[k];
        }
        double dot = 0.0;
        for (int k = 0; k < net.feature_dim; ++k) dot += g_what[k] * what[k];
        for (int k = 0; k < net.feature_dim; ++k)
            grads.cw.at(j, k) = (g_what[k] - dot * what[k]) / cache.cw_norm[j];
    }

    // Features: cosine -> normalized feature -> raw feature.
    Matrix d_feature(batch, net.feature_dim);
    for (int i = 0; i < batch; ++i) {
        const auto fhat = cache.fhat.row(i);
        std::vector<double> g_fhat(net.feature_dim, 0.0);
        for (int j = 0; j < net.classes; ++j) {
            const double g = grad_cosines.at(i, j);
            const auto wr = cache.cwhat.row(j);
            for (int k = 0; k < net.feature_dim; ++k) g_fhat[k] += g * wr[k];
        }
        double dot = 0.0;
        for (int k = 0; k < net.feature_dim; ++k) dot += g_fhat[k] * fhat[k];
        for (int k = 0; k < net.feature_dim; ++k)
            d_feature.at(i, k) = (g_fhat[k] - dot * fhat[k]) / cache.feature_norm[i];
    }

    // Linear layers, walking backwards; leaky-rectifier gate between them.
    Matrix d_post = std::move(d_feature);
    for (int l = layers - 1; l >= 0; --l) {
        Matrix d_pre = d_post;
        if (l + 1 < layers) {
            for (int i = 0; i < batch; ++i)
                for (int o = 0; o < net.w[l].rows(); ++o)
                    if (cache.pre[l].at(i, o) <= 0.0) d_pre.at(i, o) *= net.leaky_slope;
        }
        const Matrix& below = l == 0 ? inputs : cache.post[l - 1];
        for (int i = 0; i < batch; ++i) {
            const auto dp = d_pre.row(i);
            const auto in_row = below.row(i);
            for (int o = 0; o < net.w[l].rows(); ++o) {
                const double g = dp[o];
                if (g == 0.0) continue;
                auto gw_row = grads.w[l].row(o);
                for (size_t k = 0; k < in_row.size(); ++k) gw_row[k] += g * in_row[k];
                grads.b[l][o] += g;
            }
        }
        if (l > 0) {
            d_post = Matrix(batch, net.w[l].cols());
            for (int i = 0; i < batch; ++i) {
                const auto dp = d_pre.row(i);
                auto out_row = d_post.row(i);
                for (int o = 0; o < net.w[l].rows(); ++o) {
                    const double g = dp[o];
                    if (g == 0.0) continue;
                    const auto w_row = net.w[l].row(o);
                    for (size_t k = 0; k < out_row.size(); ++k) out_row[k] += g * w_row[k];
                }
            }
        }
    }
    return grads;
}

namespace {

Matrix batch_inputs(const LabeledDataset& data, const std::vector<int>& order, size_t begin, size_t count) {
    Matrix inputs(static_cast<int>(count), data.input_dim());
    for (size_t r = 0; r < count; ++r) {
        const uint8_t* px = data.image(static_cast<size_t>(order[begin + r]));
        auto row = inputs.row(static_cast<int>(r));
        for (int k = 0; k < data.input_dim(); ++k) row[k] = px[k] / 255.0;
    }
    return inputs;
}

Matrix normalized_class_rows(const ToyNetwork& net) {
    Matrix cwhat = net.cw;
    for (int j = 0; j < net.classes; ++j) {
        auto row = cwhat.row(j);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        const double norm = std::max(std::sqrt(sq), kNormEps);
        for (double& v : row) v /= norm;
    }
    return cwhat;
}

AngleStats weight_angle_stats(const ToyNetwork& net, const Matrix& cwhat) {
    AngleStats stats;
    stats.min_inter_class_weight_angle = std::numbers::pi;
    for (int j = 0; j < net.classes; ++j) {
        for (int k = j + 1; k < net.classes; ++k) {
            double dot = 0.0;
            for (int d = 0; d < net.feature_dim; ++d) dot += cwhat.at(j, d) * cwhat.at(k, d);
            stats.min_inter_class_weight_angle =
                std::min(stats.min_inter_class_weight_angle, std::acos(std::clamp(dot, -1.0, 1.0)));
        }
    }
    if (net.feature_dim == 2)
        for (int j = 0; j < net.classes; ++j)
            stats.weight_angles.push_back(std::atan2(cwhat.at(j, 1), cwhat.at(j, 0)));
    return stats;
}

}  // namespace

EvalResult evaluate(const ToyNetwork& net, const LabeledDataset& dataset) {
    dataset.validate();
    if (dataset.classes != net.classes) throw ValidationError("dataset class count mismatch");

    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    size_t correct = 0;
    Matrix class_dir_sum(net.classes, net.feature_dim);
    std::vector<std::vector<double>> fhat_rows(dataset.size(), std::vector<double>(net.feature_dim));

    ForwardCache cache;
    const size_t chunk = 256;
    for (size_t begin = 0; begin < dataset.size(); begin += chunk) {
        const size_t count = std::min(chunk, dataset.size() - begin);
        const Matrix inputs = batch_inputs(dataset, order, begin, count);
        net_forward(net, inputs, cache);
        for (size_t r = 0; r < count; ++r) {
            const int i = static_cast<int>(r);
            const auto row = cache.cosines.row(i);
            int best = 0;
            for (int j = 1; j < net.classes; ++j)
                if (row[j] > row[best]) best = j;
            const int label = dataset.labels[begin + r];
            correct += best == label;
            for (int d = 0; d < net.feature_dim; ++d) {
                fhat_rows[begin + r][d] = cache.fhat.at(i, d);
                class_dir_sum.at(label, d) += cache.fhat.at(i, d);
            }
        }
    }

    EvalResult out;
    out.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());

    // Intra-class spread: RMS angle between each unit feature and its class
    // mean direction.
    std::vector<double> sq_sum(net.classes, 0.0);
    std::vector<int> counts(net.classes, 0);
    Matrix class_dir = class_dir_sum;
    for (int c = 0; c < net.classes; ++c) {
        auto row = class_dir.row(c);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        const double norm = std::max(std::sqrt(sq), kNormEps);
        for (double& v : row) v /= norm;
    }
    for (size_t i = 0; i < dataset.size(); ++i) {
        const int label = dataset.labels[i];
        double dot = 0.0;
        for (int d = 0; d < net.feature_dim; ++d) dot += fhat_rows[i][d] * class_dir.at(label, d);
        const double angle = std::acos(std::clamp(dot, -1.0, 1.0));
        sq_sum[label] += angle * angle;
        ++counts[label];
    }

    out.angles = weight_angle_stats(net, normalized_class_rows(net));
    out.angles.intra_class_std.resize(net.classes, 0.0);
    double total = 0.0;
    for (int c = 0; c < net.classes; ++c) {
        out.angles.intra_class_std[c] = counts[c] > 0 ? std::sqrt(sq_sum[c] / counts[c]) : 0.0;
        total += out.angles.intra_class_std[c];
    }
    out.angles.mean_intra_class_std = total / net.classes;
    return out;
}

TrainResult train(const LabeledDataset& train_set, const LabeledDataset& test_set, const TrainConfig& cfg,
                  const std::optional<PriorMarginTable>& margins) {
    cfg.validate();
    train_set.validate();
    test_set.validate();
    if (train_set.classes != test_set.classes || train_set.input_dim() != test_set.input_dim())
        throw ValidationError("train/test set shape mismatch");
    if (cfg.mode == LossMode::TemplateInstance) {
        if (!margins) throw ValidationError("template_instance mode needs a margin table");
        if (margins->n != train_set.classes) throw ValidationError("margin table dimension mismatch");
    }

    std::vector<int64_t> milestones = cfg.lr_milestones;
    if (milestones.empty()) {
        // Tenfold drops at regular fractions of the run length.
        const int64_t step = std::max<int64_t>(1, static_cast<int64_t>(std::llround(cfg.max_iter * 7.0 / 36.0)));
        for (int64_t m = step; m < cfg.max_iter; m += step) milestones.push_back(m);
    }
    std::sort(milestones.begin(), milestones.end());

    TrainResult result;
    result.net = ToyNetwork::init(train_set.input_dim(), cfg.hidden, cfg.feature_dim, train_set.classes,
                                  cfg.seed);
    ToyNetwork& net = result.net;
    result.report.seed = cfg.seed;

    NetGrads velocity;
    for (const Matrix& wm : net.w) {
        velocity.w.emplace_back(wm.rows(), wm.cols());
        velocity.b.emplace_back(wm.rows(), 0.0);
    }
    velocity.cw = Matrix(net.classes, net.feature_dim);

    const Prng shuffle_root = Prng(cfg.seed).derive("shuffle");
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();  // force a shuffle on the first batch
    int64_t epoch = 0;

    LossConfig softmax_cfg = cfg.loss;
    softmax_cfg.fixed_m = 0.0;

    double lr = cfg.learning_rate;
    size_t next_milestone = 0;
    double epoch_loss_sum = 0.0;
    int64_t epoch_batches = 0;

    ForwardCache cache;
    for (int64_t iter = 1; iter <= cfg.max_iter; ++iter) {
        if (cursor + cfg.batch_size > order.size()) {
            if (epoch > 0) {
                EpochStat stat;
                stat.epoch = static_cast<int>(epoch);
                stat.train_accuracy = evaluate(net, train_set).accuracy;
                stat.test_accuracy = evaluate(net, test_set).accuracy;
                stat.mean_loss = epoch_batches > 0 ? epoch_loss_sum / epoch_batches : 0.0;
                result.report.epochs.push_back(stat);
            }
            ++epoch;
            epoch_loss_sum = 0.0;
            epoch_batches = 0;
            Prng shuffle_stream = shuffle_root.derive(static_cast<uint64_t>(epoch));
            for (size_t i = order.size() - 1; i > 0; --i) {
                const size_t j = shuffle_stream.next_below(i + 1);
                std::swap(order[i], order[j]);
            }
            cursor = 0;
        }

        while (next_milestone < milestones.size() && iter > milestones[next_milestone]) {
            lr *= 0.1;
            ++next_milestone;
        }

        const Matrix inputs = batch_inputs(train_set, order, cursor, cfg.batch_size);
        CosineBatch batch;
        batch.labels.resize(cfg.batch_size);
        for (int r = 0; r < cfg.batch_size; ++r) batch.labels[r] = train_set.labels[order[cursor + r]];
        cursor += cfg.batch_size;

        net_forward(net, inputs, cache);
        batch.cosines = cache.cosines;
        batch.iteration = iter;

        LossEvaluation eval;
        double alpha = 0.0;
        switch (cfg.mode) {
            case LossMode::Softmax: eval = am_softmax_loss(batch, softmax_cfg); break;
            case LossMode::Am: eval = am_softmax_loss(batch, cfg.loss); break;
            case LossMode::TemplateInstance:
                alpha = alpha_schedule(iter, cfg.max_iter, cfg.loss);
                eval = template_instance_loss(batch, cfg.loss, *margins, alpha);
                break;
        }
        if (!std::isfinite(eval.mean_loss)) {
            double max_cos = 0.0;
            for (double v : batch.cosines.data()) max_cos = std::max(max_cos, std::abs(v));
            throw NumericError("non-finite loss at iteration " + std::to_string(iter) + " (alpha=" +
                               std::to_string(alpha) + ", max |cosine|=" + std::to_string(max_cos) + ")");
        }
        epoch_loss_sum += eval.mean_loss;
        ++epoch_batches;

        const NetGrads grads = net_backward(net, inputs, cache, eval.grad);

        for (int l = 0; l < net.layer_count(); ++l) {
            auto& vw = velocity.w[l].data();
            const auto& gw = grads.w[l].data();
            auto& wd = net.w[l].data();
            for (size_t k = 0; k < wd.size(); ++k) {
                vw[k] = cfg.momentum * vw[k] - lr * gw[k];
                wd[k] += vw[k];
            }
            for (size_t k = 0; k < net.b[l].size(); ++k) {
                velocity.b[l][k] = cfg.momentum * velocity.b[l][k] - lr * grads.b[l][k];
                net.b[l][k] += velocity.b[l][k];
            }
        }
        {
            auto& vw = velocity.cw.data();
            const auto& gw = grads.cw.data();
            auto& wd = net.cw.data();
            for (size_t k = 0; k < wd.size(); ++k) {
                vw[k] = cfg.momentum * vw[k] - lr * gw[k];
                wd[k] += vw[k];
            }
        }
        // Projected step: class rows live on the unit sphere.
        for (int j = 0; j < net.classes; ++j) {
            auto row = net.cw.row(j);
            double sq = 0.0;
            for (double v : row) sq += v * v;
            const double norm = std::max(std::sqrt(sq), kNormEps);
            for (double& v : row) v /= norm;
        }
    }

    const EvalResult train_eval = evaluate(net, train_set);
    const EvalResult test_eval = evaluate(net, test_set);
    EpochStat final_stat;
    final_stat.epoch = static_cast<int>(epoch);
    final_stat.train_accuracy = train_eval.accuracy;
    final_stat.test_accuracy = test_eval.accuracy;
    final_stat.mean_loss = epoch_batches > 0 ? epoch_loss_sum / epoch_batches : 0.0;
    result.report.epochs.push_back(final_stat);
    result.report.final_train_accuracy = train_eval.accuracy;
    result.report.final_test_accuracy = test_eval.accuracy;
    result.report.train_angles = train_eval.angles;
    result.report.test_angles = test_eval.angles;
    return result;
}

void export_embeddings(const ToyNetwork& net, const LabeledDataset& dataset,
                       const std::filesystem::path& path) {
    if (net.feature_dim != 2) throw ValidationError("embedding export needs feature dimension 2");
    dataset.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");

    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    ForwardCache cache;
    char buf[96];
    const size_t chunk = 256;
    for (size_t begin = 0; begin < dataset.size(); begin += chunk) {
        const size_t count = std::min(chunk, dataset.size() - begin);
        const Matrix inputs = batch_inputs(dataset, order, begin, count);
        net_forward(net, inputs, cache);
        const Matrix& feature = cache.post.back();
        for (size_t r = 0; r < count; ++r) {
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", dataset.labels[begin + r],
                          feature.at(static_cast<int>(r), 0), feature.at(static_cast<int>(r), 1));
            out << buf;
        }
    }

    const Matrix cwhat = normalized_class_rows(net);
    for (int j = 0; j < net.classes; ++j) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", -1, cwhat.at(j, 0), cwhat.at(j, 1));
        out << buf;
    }
    if (!out) throw IoError("embedding write failed: " + path.string());
}

}  // namespace gm
