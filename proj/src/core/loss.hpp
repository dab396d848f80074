#pragma once

#include <optional>
#include <vector>

#include "core/affinity.hpp"
#include "core/numeric.hpp"

namespace gm {

enum class MarginBackprop { Detached, Differentiated };

struct LossConfig {
    double s = 30.0;        // cosine logit scale
    double alpha_max = 0.1; // adaptive margin upper bound
    double gamma = 2.0;     // focusing exponent
    double beta = 1.0;      // prior margin scale
    double rho = 10.0;      // schedule steepness
    double fixed_m = 0.35;  // additive margin for the fixed-margin baseline
    MarginBackprop margin_backprop = MarginBackprop::Detached;
    void validate() const;
};

struct CosineBatch {
    Matrix cosines;           // B x n
    std::vector<int> labels;  // B entries in [0, n)
    std::optional<int64_t> iteration;
    int batch_size() const { return cosines.rows(); }
    int classes() const { return cosines.cols(); }
    void validate() const;
};

struct LossEvaluation {
    std::vector<double> loss;    // per-sample, >= 0
    double mean_loss = 0.0;
    std::vector<double> p;       // per-sample target probability
    std::vector<double> margin;  // per-sample margin in effect
    Matrix grad;                 // d(mean loss)/d(cosines), B x n
    void validate() const;
};

// Fixed additive margin on the target cosine: logits s*(cos - m*[j==y]).
LossEvaluation am_softmax_loss(const CosineBatch& batch, const LossConfig& cfg);

// Target probability with prior margins inflating rival logits.
std::vector<double> estimated_probability(const CosineBatch& batch, const LossConfig& cfg,
                                          const PriorMarginTable& margins);

// alpha * (1-p)^gamma with 0^0 = 1.
double adaptive_margin(double p, double alpha, double gamma);

// Prior-margin cross-entropy, no adaptive term.
LossEvaluation template_loss_only(const CosineBatch& batch, const LossConfig& cfg,
                                  const PriorMarginTable& margins);

// Full loss: prior margins inside p, adaptive per-sample margin on top.
LossEvaluation template_instance_loss(const CosineBatch& batch, const LossConfig& cfg,
                                      const PriorMarginTable& margins, double alpha);

// Same loss surface but with caller-supplied per-sample margins held constant;
// finite-difference checks of the detached mode differentiate exactly this.
LossEvaluation template_instance_loss_with_fixed_margin(const CosineBatch& batch, const LossConfig& cfg,
                                                        const PriorMarginTable& margins,
                                                        const std::vector<double>& per_sample_margin);

// Sigmoid ramp from ~0 to ~alpha_max over [1, max_iter].
double alpha_schedule(int64_t iter, int64_t max_iter, const LossConfig& cfg);

}  // namespace gm
