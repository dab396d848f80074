#include "core/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "core/errors.hpp"

namespace gm {

void GradcheckOptions::validate() const {
    if (batches < 1 || batch_size < 1) throw ValidationError("gradcheck counts must be positive");
    if (step <= 0.0 || threshold <= 0.0) throw ValidationError("gradcheck step and threshold must be positive");
    if (ops.empty() || class_counts.empty()) throw ValidationError("gradcheck needs ops and class counts");
    for (const std::string& op : ops)
        if (op != "am" && op != "template" && op != "instance")
            throw ValidationError("unknown gradcheck op: " + op);
    for (int n : class_counts)
        if (n < 2) throw ValidationError("gradcheck class count must be at least 2");
}

namespace {

double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

PriorMarginTable random_margin_table(Prng& stream, int n) {
    AffinityMatrix aff;
    aff.n = n;
    aff.a = Matrix(n, n);
    for (int i = 0; i < n; ++i) {
        aff.a.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            const double v = stream.next_double();
            aff.a.at(i, j) = v;
            aff.a.at(j, i) = v;
        }
    }
    return prior_margin_table(aff);
}

CosineBatch random_batch(Prng& stream, int b, int n) {
    CosineBatch batch;
    batch.cosines = Matrix(b, n);
    // Interior points only: +-h perturbations must stay inside [-1, 1].
    for (double& v : batch.cosines.data()) v = stream.uniform(-0.999, 0.999);
    batch.labels.resize(b);
    for (int i = 0; i < b; ++i) batch.labels[i] = static_cast<int>(stream.next_below(n));
    return batch;
}

std::string mode_name(MarginBackprop mode) {
    return mode == MarginBackprop::Detached ? "detached" : "differentiated";
}

}  // namespace

std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& opts) {
    opts.validate();
    std::vector<GradcheckReport> reports;
    const Prng root(opts.seed);

    struct Case {
        std::string op;
        std::string mode;
    };
    std::vector<Case> cases;
    for (const std::string& op : opts.ops) {
        if (op == "instance") {
            for (MarginBackprop mode : opts.instance_modes) cases.push_back({op, mode_name(mode)});
        } else {
            cases.push_back({op, ""});
        }
    }

    for (const Case& c : cases) {
        for (int n : opts.class_counts) {
            Prng stream = root.derive(c.op + ":" + c.mode).derive(static_cast<uint64_t>(n));
            GradcheckReport report;
            report.op = c.op;
            report.mode = c.mode;
            report.batch_size = opts.batch_size;
            report.n = n;
            report.seed = opts.seed;

            for (int bi = 0; bi < opts.batches; ++bi) {
                LossConfig cfg;
                cfg.s = stream.uniform(5.0, 32.0);
                cfg.beta = stream.uniform(0.0, 2.0);
                cfg.gamma = static_cast<double>(bi % 3);  // exercise the constant-margin corner
                cfg.fixed_m = stream.uniform(0.0, 0.5);
                cfg.margin_backprop =
                    c.mode == "differentiated" ? MarginBackprop::Differentiated : MarginBackprop::Detached;
                const double alpha = stream.uniform(0.0, 0.4);
                const PriorMarginTable margins = random_margin_table(stream, n);
                CosineBatch batch = random_batch(stream, opts.batch_size, n);

                Matrix analytic;
                std::function<double(const CosineBatch&)> loss_of;
                if (c.op == "am") {
                    analytic = am_softmax_loss(batch, cfg).grad;
                    loss_of = [&](const CosineBatch& pb) { return am_softmax_loss(pb, cfg).mean_loss; };
                } else if (c.op == "template") {
                    analytic = template_loss_only(batch, cfg, margins).grad;
                    loss_of = [&](const CosineBatch& pb) {
                        return template_loss_only(pb, cfg, margins).mean_loss;
                    };
                } else {
                    const LossEvaluation center = template_instance_loss(batch, cfg, margins, alpha);
                    analytic = center.grad;
                    if (cfg.margin_backprop == MarginBackprop::Detached) {
                        const std::vector<double> frozen = center.margin;
                        loss_of = [&, frozen](const CosineBatch& pb) {
                            return template_instance_loss_with_fixed_margin(pb, cfg, margins, frozen).mean_loss;
                        };
                    } else {
                        loss_of = [&](const CosineBatch& pb) {
                            return template_instance_loss(pb, cfg, margins, alpha).mean_loss;
                        };
                    }
                }
                if (opts.corrupt != 0.0) analytic.at(0, 0) += opts.corrupt;

                for (int i = 0; i < opts.batch_size; ++i) {
                    for (int j = 0; j < n; ++j) {
                        const double saved = batch.cosines.at(i, j);
                        batch.cosines.at(i, j) = saved + opts.step;
                        const double up = loss_of(batch);
                        batch.cosines.at(i, j) = saved - opts.step;
                        const double down = loss_of(batch);
                        batch.cosines.at(i, j) = saved;
                        const double fd = (up - down) / (2.0 * opts.step);
                        report.max_rel_error = std::max(report.max_rel_error, rel_error(fd, analytic.at(i, j)));
                    }
                }
            }
            report.pass = report.max_rel_error < opts.threshold;
            reports.push_back(std::move(report));
        }
    }
    return reports;
}

}  // namespace gm
