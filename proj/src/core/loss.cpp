#include "core/loss.hpp"

#include <array>
#include <cmath>

#include "core/errors.hpp"

namespace gm {

void LossConfig::validate() const {
    for (double v : {s, alpha_max, gamma, beta, rho, fixed_m})
        if (!std::isfinite(v)) throw ValidationError("loss config field not finite");
    if (s <= 0.0) throw ValidationError("scale s must be positive");
    if (gamma < 0.0) throw ValidationError("gamma must be nonnegative");
    if (beta < 0.0) throw ValidationError("beta must be nonnegative");
    if (alpha_max < 0.0) throw ValidationError("alpha_max must be nonnegative");
}

void CosineBatch::validate() const {
    if (cosines.rows() < 1) throw ValidationError("empty batch");
    if (cosines.cols() < 2) throw ValidationError("need at least two classes");
    if (static_cast<int>(labels.size()) != cosines.rows()) throw ValidationError("label count mismatch");
    for (double v : cosines.data())
        if (!(v >= -1.0 && v <= 1.0)) throw ValidationError("cosine outside [-1, 1]");
    for (int y : labels)
        if (y < 0 || y >= cosines.cols()) throw ValidationError("label index out of range");
}

void LossEvaluation::validate() const {
    const size_t b = loss.size();
    if (p.size() != b || margin.size() != b || static_cast<size_t>(grad.rows()) != b)
        throw ValidationError("loss evaluation field sizes disagree");
    for (size_t i = 0; i < b; ++i) {
        if (!(loss[i] >= 0.0) || !std::isfinite(loss[i])) throw NumericError("loss not finite and nonnegative");
        if (!(p[i] > 0.0 && p[i] <= 1.0)) throw NumericError("probability outside (0, 1]");
    }
    if (!std::isfinite(mean_loss)) throw NumericError("mean loss not finite");
    if (!grad.all_finite()) throw NumericError("gradient not finite");
}

namespace {

void require_margin_match(const PriorMarginTable& margins, int n) {
    if (margins.n != n || margins.m.rows() != n || margins.m.cols() != n)
        throw ValidationError("margin table dimension mismatch");
}

double mean_of(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

// Plain cross-entropy over precomputed logits; writes grad rows of
// d(mean)/d(cosine) = s*(q - onehot)/B.
LossEvaluation cross_entropy_eval(const CosineBatch& batch, double s, const Matrix& logits,
                                  double reported_margin) {
    const int b = batch.batch_size(), n = batch.classes();
    LossEvaluation out;
    out.loss.resize(b);
    out.p.resize(b);
    out.margin.assign(b, reported_margin);
    out.grad = Matrix(b, n);
    for (int i = 0; i < b; ++i) {
        const int y = batch.labels[i];
        const auto u = logits.row(i);
        const double lse = log_sum_exp(u);
        out.loss[i] = lse - u[y];
        out.p[i] = std::exp(u[y] - lse);
        for (int j = 0; j < n; ++j) {
            const double q = std::exp(u[j] - lse);
            out.grad.at(i, j) = s * (q - (j == y ? 1.0 : 0.0)) / b;
        }
    }
    out.mean_loss = mean_of(out.loss);
    out.validate();
    return out;
}

Matrix margin_logits(const CosineBatch& batch, const LossConfig& cfg, const PriorMarginTable& margins) {
    const int b = batch.batch_size(), n = batch.classes();
    Matrix u(b, n);
    for (int i = 0; i < b; ++i) {
        const int y = batch.labels[i];
        for (int j = 0; j < n; ++j) u.at(i, j) = cfg.s * batch.cosines.at(i, j) + cfg.beta * margins.m.at(y, j);
    }
    return u;
}

LossEvaluation instance_eval(const CosineBatch& batch, const LossConfig& cfg, const PriorMarginTable& margins,
                             double alpha, const std::vector<double>* fixed_margin) {
    batch.validate();
    cfg.validate();
    require_margin_match(margins, batch.classes());
    if (!std::isfinite(alpha) || alpha < 0.0) throw ValidationError("alpha must be finite and nonnegative");
    if (fixed_margin && fixed_margin->size() != static_cast<size_t>(batch.batch_size()))
        throw ValidationError("fixed margin count mismatch");

    const int b = batch.batch_size(), n = batch.classes();
    const Matrix u = margin_logits(batch, cfg, margins);
    LossEvaluation out;
    out.loss.resize(b);
    out.p.resize(b);
    out.margin.resize(b);
    out.grad = Matrix(b, n);
    std::vector<double> rest(n - 1);
    for (int i = 0; i < b; ++i) {
        const int y = batch.labels[i];
        const auto row = u.row(i);
        const double lse = log_sum_exp(row);
        int k = 0;
        for (int j = 0; j < n; ++j)
            if (j != y) rest[k++] = row[j];
        const double lse_rest = log_sum_exp(rest);
        const double logp = row[y] - lse;
        const double log1mp = lse_rest - lse;
        const double p = std::exp(logp);

        double m_a;
        if (fixed_margin) {
            m_a = (*fixed_margin)[i];
        } else if (cfg.gamma == 0.0) {
            m_a = alpha;
        } else {
            m_a = alpha * std::exp(cfg.gamma * log1mp);
        }

        const double t = log1mp - logp + cfg.s * m_a;
        const double softplus = log_sum_exp(std::array{t, 0.0});
        const double sigma = std::exp(t - softplus);

        double mult = 1.0;
        if (!fixed_margin && cfg.margin_backprop == MarginBackprop::Differentiated && cfg.gamma > 0.0)
            mult = 1.0 + cfg.s * alpha * cfg.gamma * p * std::exp(cfg.gamma * log1mp);

        out.loss[i] = softplus;
        out.p[i] = p;
        out.margin[i] = m_a;
        for (int j = 0; j < n; ++j) {
            if (j == y) {
                out.grad.at(i, j) = -cfg.s * sigma * mult / b;
            } else {
                const double r = std::exp(row[j] - lse_rest);
                out.grad.at(i, j) = cfg.s * sigma * r * mult / b;
            }
        }
    }
    out.mean_loss = mean_of(out.loss);
    out.validate();
    return out;
}

}  // namespace

LossEvaluation am_softmax_loss(const CosineBatch& batch, const LossConfig& cfg) {
    batch.validate();
    cfg.validate();
    const int b = batch.batch_size(), n = batch.classes();
    Matrix u(b, n);
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < n; ++j)
            u.at(i, j) = cfg.s * (batch.cosines.at(i, j) - (j == batch.labels[i] ? cfg.fixed_m : 0.0));
    return cross_entropy_eval(batch, cfg.s, u, cfg.fixed_m);
}

std::vector<double> estimated_probability(const CosineBatch& batch, const LossConfig& cfg,
                                          const PriorMarginTable& margins) {
    batch.validate();
    cfg.validate();
    require_margin_match(margins, batch.classes());
    const Matrix u = margin_logits(batch, cfg, margins);
    std::vector<double> p(batch.batch_size());
    for (int i = 0; i < batch.batch_size(); ++i) {
        const auto row = u.row(i);
        p[i] = std::exp(row[batch.labels[i]] - log_sum_exp(row));
    }
    return p;
}

double adaptive_margin(double p, double alpha, double gamma) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probability outside [0, 1]");
    if (gamma < 0.0) throw ValidationError("gamma must be nonnegative");
    if (gamma == 0.0) return alpha;  // 0^0 = 1 by convention
    return alpha * std::pow(1.0 - p, gamma);
}

LossEvaluation template_loss_only(const CosineBatch& batch, const LossConfig& cfg,
                                  const PriorMarginTable& margins) {
    batch.validate();
    cfg.validate();
    require_margin_match(margins, batch.classes());
    return cross_entropy_eval(batch, cfg.s, margin_logits(batch, cfg, margins), 0.0);
}

LossEvaluation template_instance_loss(const CosineBatch& batch, const LossConfig& cfg,
                                      const PriorMarginTable& margins, double alpha) {
    return instance_eval(batch, cfg, margins, alpha, nullptr);
}

LossEvaluation template_instance_loss_with_fixed_margin(const CosineBatch& batch, const LossConfig& cfg,
                                                        const PriorMarginTable& margins,
                                                        const std::vector<double>& per_sample_margin) {
    return instance_eval(batch, cfg, margins, 0.0, &per_sample_margin);
}

double alpha_schedule(int64_t iter, int64_t max_iter, const LossConfig& cfg) {
    cfg.validate();
    if (max_iter <= 0) throw ValidationError("max_iter must be positive");
    if (iter < 1 || iter > max_iter) throw ValidationError("iteration outside [1, max_iter]");
    const double x = static_cast<double>(iter) / static_cast<double>(max_iter);
    return cfg.alpha_max / (1.0 + std::exp(-cfg.rho * (x - 0.5)));
}

}  // namespace gm
