#pragma once

#include <string>
#include <vector>

#include "core/loss.hpp"

namespace gm {

struct GradcheckOptions {
    std::vector<std::string> ops = {"am", "template", "instance"};
    std::vector<MarginBackprop> instance_modes = {MarginBackprop::Detached, MarginBackprop::Differentiated};
    int batches = 100;
    int batch_size = 8;
    std::vector<int> class_counts = {3, 10, 50};
    uint64_t seed = 1234;
    double step = 1e-5;
    double threshold = 1e-5;
    // Self-test: added to one analytic gradient entry so the harness must fail.
    double corrupt = 0.0;
    void validate() const;
};

struct GradcheckReport {
    std::string op;
    std::string mode;  // empty for ops without a margin-backprop choice
    int batch_size = 0;
    int n = 0;
    double max_rel_error = 0.0;
    uint64_t seed = 0;
    bool pass = false;
};

// Central finite differences of the mean loss against analytic gradients.
// Detached instance mode differentiates the loss with the per-sample margin
// frozen at its on-path value; differentiated mode uses the full expression.
std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& opts);

}  // namespace gm
