// Acceptance gate: one pass/fail line per criterion, nonzero exit if any
// fails. argv[1] is the CLI binary, used by the determinism criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/affinity.hpp"
#include "core/dataset.hpp"
#include "core/features.hpp"
#include "core/glyphs.hpp"
#include "core/gradcheck.hpp"
#include "core/loss.hpp"
#include "core/numeric.hpp"
#include "core/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

int g_failed = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
    if (!ok) ++g_failed;
    std::printf("%d %-24s %s  %s\n", id, name, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

std::string format(const char* fmt, ...) {
    char buf[256];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    return buf;
}

// Random margin table: symmetric affinity with unit diagonal.
gm::PriorMarginTable random_margins(gm::Prng& rng, int n) {
    gm::Matrix a(n, n);
    for (int i = 0; i < n; ++i) {
        a(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) a(i, j) = a(j, i) = rng.uniform(0.0, 1.0);
    }
    return gm::prior_margin_table(gm::AffinityMatrix{n, a});
}

gm::CosineBatch random_batch(gm::Prng& rng, int b, int n) {
    gm::CosineBatch batch;
    batch.cosines = gm::Matrix(b, n);
    for (double& v : batch.cosines.data()) v = rng.uniform(-0.999, 0.999);
    batch.labels.resize(b);
    for (int& y : batch.labels) y = static_cast<int>(rng.next_below(n));
    return batch;
}

double softmax_ce(std::span<const double> cosines, int y, double s) {
    std::vector<double> z(cosines.size());
    for (size_t j = 0; j < z.size(); ++j) z[j] = s * cosines[j];
    return gm::log_sum_exp(z) - z[y];
}

// 1. Analytic gradients of all three losses (both margin-backprop modes of
// the adaptive one) against central finite differences.
void check_gradient_fidelity() {
    gm::GradcheckOptions opts;  // 100 batches of 8 at n in {3, 10, 50}, step and threshold 1e-5
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<gm::GradcheckReport> reports = gm::run_gradcheck(opts);
    const double secs = seconds_since(t0);

    bool ok = reports.size() == 12;
    double worst = 0.0;
    for (const gm::GradcheckReport& r : reports) {
        ok = ok && r.pass && r.max_rel_error < 1e-5;
        worst = std::max(worst, r.max_rel_error);
    }
    ok = ok && secs < 10.0;
    report(1, "gradient fidelity", ok,
           format("%zu checks, worst rel err %.2e, %.1f s", reports.size(), worst, secs));
}

// 2. Explicit log-space softmax form of the adaptive-margin loss against the
// production closed form, including samples pushed down to p ~ 1e-12.
void check_closed_form() {
    gm::Prng rng(42);
    const int counts[3] = {3, 10, 50};
    std::map<int, gm::PriorMarginTable> margins;
    for (int n : counts) margins.emplace(n, random_margins(rng, n));

    gm::LossConfig cfg;
    cfg.s = 30.0;
    cfg.beta = 1.0;
    cfg.gamma = 2.0;

    double worst = 0.0;
    int tiny_p = 0;
    bool ok = true;
    for (int i = 0; i < 1000; ++i) {
        const int n = counts[i % 3];
        const gm::PriorMarginTable& table = margins.at(n);
        gm::CosineBatch batch = random_batch(rng, 1, n);
        const int y = batch.labels[0];
        const bool crafted = i % 10 == 0;
        if (crafted) {
            for (int j = 0; j < n; ++j) batch.cosines(0, j) = rng.uniform(-0.95, -0.85);
            batch.cosines(0, y) = -0.2;
            batch.cosines(0, (y + 1) % n) = 0.72;
        }
        const double alpha = rng.uniform(0.0, 0.4);

        const gm::LossEvaluation ev = gm::template_instance_loss(batch, cfg, table, alpha);
        if (crafted && ev.p[0] < 1e-11 && ev.p[0] > 1e-14) ++tiny_p;

        std::vector<double> z(n);
        for (int j = 0; j < n; ++j) {
            z[j] = j == y ? cfg.s * (batch.cosines(0, y) - ev.margin[0])
                          : cfg.s * batch.cosines(0, j) + cfg.beta * table.m(y, j);
        }
        const double explicit_loss = gm::log_sum_exp(z) - z[y];
        const double diff = std::abs(explicit_loss - ev.loss[0]);
        worst = std::max(worst, diff);
        ok = ok && diff <= 1e-10;
    }
    ok = ok && tiny_p >= 50;
    report(2, "closed-form identity", ok,
           format("1000 samples, worst |diff| %.2e, %d samples below p=1e-11", worst, tiny_p));
}

// 3. Collapses of the adaptive loss: alpha=0 with beta=0 is softmax
// cross-entropy; gamma=0 with beta=0 is the fixed additive margin at m=alpha.
void check_degeneracy_chain() {
    gm::Prng rng(7);
    const int counts[3] = {3, 10, 50};
    std::map<int, gm::PriorMarginTable> margins;
    for (int n : counts) margins.emplace(n, random_margins(rng, n));

    double worst_sm = 0.0, worst_am = 0.0;
    bool ok = true;
    for (int i = 0; i < 100; ++i) {
        const int n = counts[i % 3];
        const gm::CosineBatch batch = random_batch(rng, 8, n);

        gm::LossConfig zero_beta;
        zero_beta.s = 30.0;
        zero_beta.beta = 0.0;

        const gm::LossEvaluation as_softmax =
            gm::template_instance_loss(batch, zero_beta, margins.at(n), 0.0);
        for (int k = 0; k < 8; ++k) {
            const double ref = softmax_ce(batch.cosines.row(k), batch.labels[k], zero_beta.s);
            worst_sm = std::max(worst_sm, std::abs(as_softmax.loss[k] - ref));
        }

        const double alpha = rng.uniform(0.05, 0.4);
        gm::LossConfig flat = zero_beta;
        flat.gamma = 0.0;
        const gm::LossEvaluation as_am = gm::template_instance_loss(batch, flat, margins.at(n), alpha);
        gm::LossConfig am_cfg = zero_beta;
        am_cfg.fixed_m = alpha;
        const gm::LossEvaluation am = gm::am_softmax_loss(batch, am_cfg);
        for (int k = 0; k < 8; ++k)
            worst_am = std::max(worst_am, std::abs(as_am.loss[k] - am.loss[k]));
    }
    ok = worst_sm <= 1e-12 && worst_am <= 1e-12;
    report(3, "degeneracy chain", ok,
           format("vs softmax %.2e, vs fixed margin %.2e", worst_sm, worst_am));
}

// 4. Sigmoid ramp of the margin bound: exact half at the midpoint, saturated
// near 0.99331 of the bound at the end.
void check_schedule() {
    bool ok = true;
    double worst_end = 0.0;
    for (double alpha_max : {0.3, 0.4, 0.25}) {
        gm::LossConfig cfg;  // rho = 10
        cfg.alpha_max = alpha_max;
        ok = ok && gm::alpha_schedule(500, 1000, cfg) == alpha_max / 2;
        const double end_diff = std::abs(gm::alpha_schedule(1000, 1000, cfg) - 0.99331 * alpha_max);
        worst_end = std::max(worst_end, end_diff);
        ok = ok && end_diff <= 1e-5;
    }
    report(4, "margin schedule", ok, format("midpoint exact, end within %.1e of 0.99331x", worst_end));
}

// 5. Template affinity pipeline on the synthetic pool: matrix invariants,
// margin ordering between near and far template pairs, SVD cross-check.
void check_affinity_pipeline() {
    const auto t0 = std::chrono::steady_clock::now();
    const gm::TemplateSet set = gm::synth_template_set(7, 8, 3, 64);
    const gm::FeatureSimilarityTensor tensor = gm::build_tensor(set);
    const gm::AffinityMatrix affinity = gm::build_affinity(tensor);
    const gm::PriorMarginTable table = gm::prior_margin_table(affinity);
    const int n = affinity.n;

    bool ok = n == 8;
    for (int i = 0; i < n; ++i) {
        ok = ok && affinity.a(i, i) == 1.0 && table.m(i, i) == 0.0;
        for (int j = 0; j < n; ++j) {
            ok = ok && affinity.a(i, j) == affinity.a(j, i);
            if (i != j) ok = ok && table.m(i, j) > 0.0;
        }
    }

    // Consecutive templates differ in one stroke; pairs at index distance
    // >= kSynthStrokesPerTemplate share none.
    double near_min = 1.0, far_max = 0.0;
    for (int i = 0; i + 1 < n; ++i) {
        near_min = std::min(near_min, table.m(i, i + 1));
        near_min = std::min(near_min, table.m(i + 1, i));
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (std::abs(i - j) >= gm::kSynthStrokesPerTemplate)
                far_max = std::max(far_max, table.m(i, j));
    ok = ok && near_min > far_max;

    double worst_svd = 0.0;
    for (int i = 0; i < n; ++i) {
        const gm::DirectionalSimilarity ds = gm::directional_similarity(tensor, i);
        const gm::SvdResult f = gm::svd(ds.s);
        const int k = static_cast<int>(f.sigma.size());
        for (int r = 0; r < ds.s.rows(); ++r) {
            for (int c = 0; c < ds.s.cols(); ++c) {
                double v = 0.0;
                for (int t = 0; t < k; ++t) v += f.u(r, t) * f.sigma[t] * f.v(c, t);
                worst_svd = std::max(worst_svd, std::abs(v - ds.s(r, c)));
            }
        }
        const gm::Matrix st = ds.s.transposed();
        gm::Matrix gram(ds.s.cols(), ds.s.cols());
        for (int r = 0; r < gram.rows(); ++r)
            for (int c = 0; c < gram.cols(); ++c) {
                double v = 0.0;
                for (int t = 0; t < ds.s.rows(); ++t) v += ds.s(t, r) * ds.s(t, c);
                gram(r, c) = v;
            }
        const std::vector<double> eig = oracle::symmetric_eigenvalues(gram);
        for (int t = 0; t < k; ++t)
            worst_svd = std::max(worst_svd, std::abs(f.sigma[t] * f.sigma[t] - eig[t]));
    }
    ok = ok && worst_svd < 1e-10;

    const double secs = seconds_since(t0);
    ok = ok && secs < 30.0;
    report(5, "affinity pipeline", ok,
           format("near margin min %.4f > far max %.4f, svd err %.1e, %.1f s", near_min, far_max,
                  worst_svd, secs));
}

// 6. All five similarity extractors on random raster pairs: exact symmetry,
// [0, 1] range, exact 1 on identical inputs.
void check_feature_sanity() {
    gm::Prng rng(2026);
    bool ok = true;
    for (int i = 0; i < 500 && ok; ++i) {
        const gm::GlyphRaster a = testutil::random_raster(rng, 28, 28);
        const gm::GlyphRaster b = testutil::random_raster(rng, 28, 28);
        for (gm::FeatureId id : gm::kAllFeatures) {
            const double ab = gm::pair_similarity(id, a, b);
            const double ba = gm::pair_similarity(id, b, a);
            const double aa = gm::pair_similarity(id, a, a);
            ok = ok && ab == ba && ab >= 0.0 && ab <= 1.0 && aa == 1.0;
        }
    }
    report(6, "feature sanity", ok, "500 random pairs x 5 extractors");
}

// 7 + 8 share one sweep: alpha_max grid x 5 seeds on the synthetic
// 10-class dataset round-tripped through IDX files.
void check_training_trends() {
    const auto t0 = std::chrono::steady_clock::now();

    testutil::TempDir dir("acceptance_idx");
    const gm::SynthDataset synth = gm::synth_labeled_dataset(3, 10, 520, 100, 16);
    gm::write_idx_images(dir.path / "train-images", synth.train);
    gm::write_idx_labels(dir.path / "train-labels", synth.train);
    gm::write_idx_images(dir.path / "test-images", synth.test);
    gm::write_idx_labels(dir.path / "test-labels", synth.test);
    const gm::LabeledDataset train_set =
        gm::load_idx_dataset(dir.path / "train-images", dir.path / "train-labels");
    const gm::LabeledDataset test_set =
        gm::load_idx_dataset(dir.path / "test-images", dir.path / "test-labels");

    const gm::PriorMarginTable margins =
        gm::prior_margin_table(gm::build_affinity(gm::build_tensor(gm::synth_template_set(3, 10, 3, 64))));

    const std::vector<double> alphas = {0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4};
    const std::vector<uint64_t> seeds = {1, 3, 4, 6, 8};

    std::map<double, std::vector<double>> min_angle, intra_std, accuracy;
    for (uint64_t seed : seeds) {
        for (double alpha : alphas) {
            gm::TrainConfig cfg;
            cfg.loss.s = 10.0;
            cfg.loss.beta = 1.0;
            cfg.batch_size = 128;
            cfg.learning_rate = 0.1;
            cfg.lr_milestones = {2200, 2700};
            cfg.max_iter = 3000;
            cfg.hidden = {96, 48};
            cfg.feature_dim = 2;
            cfg.seed = seed;
            std::optional<gm::PriorMarginTable> margin_arg;
            if (alpha == 0.0) {
                cfg.mode = gm::LossMode::Softmax;
            } else {
                cfg.mode = gm::LossMode::TemplateInstance;
                cfg.loss.alpha_max = alpha;
                margin_arg = margins;
            }
            const gm::TrainResult result = gm::train(train_set, test_set, cfg, margin_arg);
            min_angle[alpha].push_back(result.report.train_angles.min_inter_class_weight_angle);
            intra_std[alpha].push_back(result.report.train_angles.mean_intra_class_std);
            accuracy[alpha].push_back(result.report.final_test_accuracy);
        }
    }
    const double secs = seconds_since(t0);

    bool ok7 = train_set.size() >= 5000 && secs < 900.0;
    std::string angles;
    double prev = -1.0;
    for (double alpha : {0.1, 0.2, 0.3, 0.4}) {
        const double med = median(min_angle.at(alpha));
        ok7 = ok7 && med >= prev;
        prev = med;
        angles += format("%.3f ", med);
    }
    const double intra_soft = median(intra_std.at(0.0));
    const double intra_full = median(intra_std.at(0.4));
    ok7 = ok7 && intra_full < intra_soft;
    report(7, "margin-effect trend", ok7,
           format("median min angle [%s], intra std %.4f < %.4f, %.0f s", angles.c_str(), intra_full,
                  intra_soft, secs));

    int wins = 0;
    for (size_t k = 0; k < seeds.size(); ++k) {
        double best = 0.0;
        for (double alpha : {0.01, 0.05, 0.1, 0.2}) best = std::max(best, accuracy.at(alpha)[k]);
        if (best >= accuracy.at(0.0)[k]) ++wins;
    }
    report(8, "accuracy sweep trend", wins >= 4,
           format("best nonzero bound >= baseline for %d of %zu seeds", wins, seeds.size()));
}

// 9. Every CLI subcommand rerun with identical config and seed reproduces its
// artifacts and stdout byte for byte.
struct CliRunner {
    std::string cli;
    fs::path root;

    int run(const std::string& args, const fs::path& log) const {
        const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
        return std::system(cmd.c_str());
    }
};

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::ostringstream body;
        body << in.rdbuf();
        files[fs::relative(entry.path(), root).string()] = body.str();
    }
    return files;
}

void check_cli_determinism(const std::string& cli) {
    testutil::TempDir dir("acceptance_cli");
    const fs::path out = dir.path / "out";
    const fs::path margins_bin = out / "affinity" / "margins.bin";

    nlohmann::ordered_json cfg;
    cfg["seed"] = 5;
    cfg["synth"] = {{"templates", 3}, {"fonts", 2}, {"side", 32}};
    cfg["train"] = {
        {"dataset",
         {{"synth",
           {{"classes", 3}, {"train_per_class", 40}, {"test_per_class", 10}, {"side", 16}}}}},
        {"batch_size", 16},
        {"max_iter", 60},
        {"hidden", {16}},
        {"margins", margins_bin.string()},
        {"sweep_alpha", {0.0, 0.05}},
    };
    cfg["gradcheck"] = {{"batches", 3}, {"batch_size", 4}, {"class_counts", {3, 5}}};
    const fs::path cfg_path = dir.path / "config.json";
    std::ofstream(cfg_path) << cfg.dump(2) << "\n";

    const CliRunner runner{cli, dir.path};
    const std::string base = "--config \"" + cfg_path.string() + "\"";
    bool ok = true;
    std::map<std::string, std::string> first;
    for (int pass = 0; pass < 2 && ok; ++pass) {
        const fs::path logs = dir.path / ("logs" + std::to_string(pass));
        fs::create_directories(logs);
        ok = ok && runner.run(base + " --out \"" + (out / "synth").string() + "\" synth",
                              logs / "synth.txt") == 0;
        ok = ok && runner.run(base + " --out \"" + (out / "affinity").string() + "\" affinity",
                              logs / "affinity.txt") == 0;
        ok = ok && runner.run("margins \"" + margins_bin.string() + "\"", logs / "margins.txt") == 0;
        ok = ok && runner.run(base + " --out \"" + (out / "train").string() + "\" train --sweep-alpha",
                              logs / "train.txt") == 0;
        ok = ok && runner.run(base + " --out \"" + (out / "gradcheck").string() + "\" gradcheck",
                              logs / "gradcheck.txt") == 0;
        ok = ok && runner.run("--dump-defaults", logs / "defaults.txt") == 0;
        if (!ok) break;
        if (pass == 0) {
            first = snapshot(out);
            for (const auto& entry : snapshot(logs)) first["log/" + entry.first] = entry.second;
        } else {
            std::map<std::string, std::string> second = snapshot(out);
            for (const auto& entry : snapshot(logs)) second["log/" + entry.first] = entry.second;
            ok = first == second;
        }
    }
    report(9, "cli determinism", ok, format("%zu artifacts compared across reruns", first.size()));
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <cli-binary>\n", argv[0]);
        return 2;
    }
    check_gradient_fidelity();
    check_closed_form();
    check_degeneracy_chain();
    check_schedule();
    check_affinity_pipeline();
    check_feature_sanity();
    check_training_trends();
    check_cli_determinism(argv[1]);
    if (g_failed == 0) {
        std::printf("acceptance: all 9 criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criteria failed\n", g_failed);
    return 1;
}
