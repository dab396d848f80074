#include <glyphmargin.h>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kFeatureNames[] = {"pixel_miou", "phash", "hog", "lbp", "gabor"};

struct CliError {
    int exit_code;
    std::string message;
};

int exit_code_for(int status) {
    switch (status) {
        case GM_OK:
            return 0;
        case GM_ERR_VALIDATION:
        case GM_ERR_NUMERIC:
        case GM_ERR_INTERNAL:
            return 1;
        default:
            return 2;
    }
}

void check(int status, const std::string& stage) {
    if (status != GM_OK) throw CliError{exit_code_for(status), stage + ": " + gm_last_error()};
}

struct TemplateSetHandle {
    gm_template_set* p = nullptr;
    ~TemplateSetHandle() { gm_template_set_free(p); }
};

struct MarginTableHandle {
    gm_margin_table* p = nullptr;
    ~MarginTableHandle() { gm_margin_table_free(p); }
};

struct OwnedString {
    char* p = nullptr;
    ~OwnedString() { gm_string_free(p); }
};

ordered_json default_config() {
    gm_loss_config loss;
    gm_loss_config_defaults(&loss);

    ordered_json j;
    j["seed"] = 7;
    j["out"] = "out";

    ordered_json synth;
    synth["templates"] = 8;
    synth["fonts"] = 3;
    synth["side"] = 64;
    j["synth"] = synth;

    ordered_json affinity;
    affinity["manifest"] = "";
    affinity["side"] = 64;
    affinity["features"] = ordered_json::array();
    j["affinity"] = affinity;

    ordered_json margins;
    margins["cache"] = "";
    j["margins"] = margins;

    ordered_json dataset_synth;
    dataset_synth["classes"] = 10;
    dataset_synth["train_per_class"] = 520;
    dataset_synth["test_per_class"] = 100;
    dataset_synth["side"] = 16;
    ordered_json dataset;
    dataset["synth"] = dataset_synth;

    ordered_json train;
    train["dataset"] = dataset;
    train["loss"] = "softmax";
    train["s"] = loss.s;
    train["alpha_max"] = loss.alpha_max;
    train["gamma"] = loss.gamma;
    train["beta"] = loss.beta;
    train["rho"] = loss.rho;
    train["fixed_m"] = loss.fixed_m;
    train["differentiate_margin"] = loss.differentiate_margin != 0;
    train["batch_size"] = 128;
    train["momentum"] = 0.9;
    train["learning_rate"] = 0.1;
    train["lr_milestones"] = ordered_json::array();
    train["max_iter"] = 3000;
    train["hidden"] = ordered_json::array({256, 64});
    train["feature_dim"] = 2;
    train["margins"] = "";
    train["sweep_alpha"] = ordered_json::array({0.0, 0.01, 0.05, 0.1, 0.2});
    j["train"] = train;

    ordered_json gradcheck;
    gradcheck["ops"] = ordered_json::array({"am", "template", "instance"});
    gradcheck["modes"] = ordered_json::array({"detached", "differentiated"});
    gradcheck["batches"] = 100;
    gradcheck["batch_size"] = 8;
    gradcheck["class_counts"] = ordered_json::array({3, 10, 50});
    gradcheck["step"] = 1e-5;
    gradcheck["threshold"] = 1e-5;
    gradcheck["corrupt"] = 0.0;
    j["gradcheck"] = gradcheck;

    return j;
}

void validate_dataset_section(const ordered_json& d) {
    if (!d.is_object()) throw CliError{2, "config: train.dataset must be an object"};
    const auto allow = [&](std::initializer_list<const char*> keys) {
        for (auto it = d.begin(); it != d.end(); ++it) {
            bool ok = false;
            for (const char* k : keys) ok = ok || it.key() == k;
            if (!ok) throw CliError{2, "config: unknown key 'train.dataset." + it.key() + "'"};
        }
    };
    if (d.contains("synth")) {
        allow({"synth"});
        for (auto it = d.at("synth").begin(); it != d.at("synth").end(); ++it) {
            bool ok = false;
            for (const char* k : {"seed", "classes", "train_per_class", "test_per_class", "side"})
                ok = ok || it.key() == k;
            if (!ok) throw CliError{2, "config: unknown key 'train.dataset.synth." + it.key() + "'"};
        }
    } else {
        allow({"train_images", "train_labels", "test_images", "test_labels"});
    }
}

ordered_json merge_config(const ordered_json& base, const ordered_json& user, const std::string& prefix) {
    ordered_json out = base;
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw CliError{2, "config: unknown key '" + path + "'"};
        if (path == "train.dataset") {
            validate_dataset_section(it.value());
            out[it.key()] = it.value();
        } else if (base.at(it.key()).is_object() && it.value().is_object()) {
            out[it.key()] = merge_config(base.at(it.key()), it.value(), path);
        } else {
            out[it.key()] = it.value();
        }
    }
    return out;
}

ordered_json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CliError{2, "config: cannot open " + path};
    try {
        ordered_json j = ordered_json::parse(in);
        if (!j.is_object()) throw CliError{2, "config: " + path + " must hold a JSON object"};
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw CliError{2, "config: " + path + ": " + e.what()};
    }
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CliError{2, "cannot write " + path.string()};
    out << text;
    if (!out) throw CliError{2, "write failed: " + path.string()};
}

void write_matrix_csv(const fs::path& path, const std::vector<std::string>& ids,
                      const std::vector<double>& values, int n) {
    std::string text = "id";
    for (const std::string& id : ids) {
        text += ',';
        text += id;
    }
    text += '\n';
    char buf[40];
    for (int i = 0; i < n; ++i) {
        text += ids[i];
        for (int j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof buf, ",%.17g", values[static_cast<size_t>(i) * n + j]);
            text += buf;
        }
        text += '\n';
    }
    write_text_file(path, text);
}

std::vector<std::string> template_ids(const gm_template_set* set, int n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
        const char* id = nullptr;
        check(gm_template_set_id(set, i, &id), "template ids");
        ids.emplace_back(id);
    }
    return ids;
}

std::string alpha_tag(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

// Shared by affinity and margins-from-synth paths: either loads the manifest
// or synthesizes the pool from the run seed.
void open_template_set(const ordered_json& cfg, uint64_t seed, const std::string& stage,
                       TemplateSetHandle& ts) {
    const std::string manifest = cfg.at("affinity").at("manifest").get<std::string>();
    if (manifest.empty()) {
        const ordered_json& s = cfg.at("synth");
        check(gm_template_set_synth(seed, s.at("templates").get<int>(), s.at("fonts").get<int>(),
                                    s.at("side").get<int>(), &ts.p),
              stage + ": synthesize templates");
    } else {
        check(gm_template_set_load(manifest.c_str(), cfg.at("affinity").at("side").get<int>(), &ts.p),
              stage + ": load manifest");
    }
}

int cmd_synth(const ordered_json& cfg, uint64_t seed, const fs::path& out_dir) {
    const ordered_json& s = cfg.at("synth");
    TemplateSetHandle ts;
    check(gm_template_set_synth(seed, s.at("templates").get<int>(), s.at("fonts").get<int>(),
                                s.at("side").get<int>(), &ts.p),
          "synth");
    fs::create_directories(out_dir);
    check(gm_template_set_write(ts.p, out_dir.string().c_str()), "synth: write");
    int n = 0, f = 0, side = 0;
    check(gm_template_set_shape(ts.p, &n, &f, &side), "synth");
    std::printf("synth: wrote %d templates x %d fonts (side %d) to %s\n", n, f, side,
                out_dir.string().c_str());
    return 0;
}

int cmd_affinity(const ordered_json& cfg, uint64_t seed, const fs::path& out_dir,
                 const std::string& feature_flag) {
    TemplateSetHandle ts;
    open_template_set(cfg, seed, "affinity", ts);
    int n = 0, f = 0, side = 0;
    check(gm_template_set_shape(ts.p, &n, &f, &side), "affinity");
    const std::vector<std::string> ids = template_ids(ts.p, n);

    std::vector<std::string> features;
    if (!feature_flag.empty()) {
        features.push_back(feature_flag);
    } else {
        for (const auto& name : cfg.at("affinity").at("features"))
            features.push_back(name.get<std::string>());
        if (features.empty()) features.assign(std::begin(kFeatureNames), std::end(kFeatureNames));
    }

    fs::create_directories(out_dir);
    std::vector<double> values(static_cast<size_t>(n) * n);
    for (const std::string& name : features) {
        check(gm_similarity_matrix(ts.p, name.c_str(), values.data()), "affinity: feature " + name);
        write_matrix_csv(out_dir / ("feature_" + name + ".csv"), ids, values, n);
    }

    std::vector<const char*> name_ptrs;
    for (const std::string& name : features) name_ptrs.push_back(name.c_str());
    check(gm_affinity_matrix(ts.p, name_ptrs.data(), static_cast<int>(name_ptrs.size()), values.data()),
          "affinity: fuse");
    write_matrix_csv(out_dir / "affinity.csv", ids, values, n);

    MarginTableHandle mt;
    check(gm_margin_table_from_affinity(values.data(), n, &mt.p), "affinity: margins");
    check(gm_margin_table_values(mt.p, values.data()), "affinity: margins");
    write_matrix_csv(out_dir / "margins.csv", ids, values, n);
    check(gm_margin_table_write(mt.p, (out_dir / "margins.bin").string().c_str()),
          "affinity: margin cache");

    std::printf("affinity: %d templates, %zu features -> %s\n", n, features.size(),
                out_dir.string().c_str());
    return 0;
}

int cmd_margins(const ordered_json& cfg, const std::string& cache_flag) {
    std::string cache = cache_flag;
    if (cache.empty()) cache = cfg.at("margins").at("cache").get<std::string>();
    if (cache.empty()) throw CliError{2, "margins: no cache path (argument or config margins.cache)"};

    MarginTableHandle mt;
    check(gm_margin_table_read(cache.c_str(), &mt.p), "margins: read");
    int n = 0;
    check(gm_margin_table_size(mt.p, &n), "margins");
    std::vector<double> values(static_cast<size_t>(n) * n);
    check(gm_margin_table_values(mt.p, values.data()), "margins");

    std::printf("prior margin table: %d x %d\n", n, n);
    for (int i = 0; i < n; ++i) {
        std::printf("row %2d:", i);
        for (int j = 0; j < n; ++j) std::printf(" %.6f", values[static_cast<size_t>(i) * n + j]);
        std::printf("\n");
    }
    return 0;
}

int cmd_gradcheck(const ordered_json& cfg, uint64_t seed, const fs::path& out_dir,
                  const std::string& mode_flag, bool corrupt_flag) {
    ordered_json opts = cfg.at("gradcheck");
    opts["seed"] = seed;
    if (!mode_flag.empty()) opts["modes"] = ordered_json::array({mode_flag});
    if (corrupt_flag) opts["corrupt"] = 1e-3;

    OwnedString report;
    int all_pass = 0;
    check(gm_gradcheck_run(opts.dump().c_str(), &report.p, &all_pass), "gradcheck");

    fs::create_directories(out_dir);
    write_text_file(out_dir / "gradcheck_report.json", std::string(report.p) + "\n");

    const ordered_json parsed = ordered_json::parse(report.p);
    for (const auto& c : parsed.at("checks")) {
        const std::string mode = c.at("mode").get<std::string>();
        std::printf("%s%s n=%d: max_rel_error %.3e %s\n", c.at("op").get<std::string>().c_str(),
                    mode.empty() ? "" : (" (" + mode + ")").c_str(), c.at("classes").get<int>(),
                    c.at("max_rel_error").get<double>(), c.at("pass").get<bool>() ? "pass" : "FAIL");
    }
    if (!all_pass) throw CliError{1, "gradcheck: max relative error above threshold"};
    std::printf("gradcheck: all checks passed\n");
    return 0;
}

int cmd_train(const ordered_json& cfg, uint64_t seed, const fs::path& out_dir,
              const std::string& loss_flag, bool sweep) {
    const ordered_json& tcfg = cfg.at("train");

    MarginTableHandle mt;
    const std::string margins_path = tcfg.at("margins").get<std::string>();
    if (!margins_path.empty())
        check(gm_margin_table_read(margins_path.c_str(), &mt.p), "train: margin cache");

    ordered_json payload = tcfg;
    payload.erase("margins");
    payload.erase("sweep_alpha");
    payload["seed"] = seed;
    if (payload.at("dataset").contains("synth") && !payload.at("dataset").at("synth").contains("seed"))
        payload["dataset"]["synth"]["seed"] = seed;
    if (!loss_flag.empty()) payload["loss"] = loss_flag;
    const bool emit_embeddings = payload.at("feature_dim").get<int>() == 2;

    fs::create_directories(out_dir);

    const auto run_one = [&](ordered_json run_cfg, const fs::path& report_path,
                             const fs::path& embeddings_path, const std::string& stage) {
        if (emit_embeddings) run_cfg["embeddings_out"] = embeddings_path.string();
        OwnedString report;
        check(gm_train_run(run_cfg.dump().c_str(), mt.p, &report.p), stage);
        write_text_file(report_path, std::string(report.p) + "\n");
        return ordered_json::parse(report.p);
    };

    if (!sweep) {
        const ordered_json report = run_one(payload, out_dir / "train_report.json",
                                            out_dir / "embeddings.csv", "train");
        std::printf("train (%s): train accuracy %.4f, test accuracy %.4f\n",
                    report.at("loss").get<std::string>().c_str(),
                    report.at("final_train_accuracy").get<double>(),
                    report.at("final_test_accuracy").get<double>());
        return 0;
    }

    ordered_json summary = ordered_json::array();
    for (const auto& av : tcfg.at("sweep_alpha")) {
        const double alpha = av.get<double>();
        const std::string tag = alpha_tag(alpha);
        ordered_json run_cfg = payload;
        // Table I slot 0 is the plain softmax baseline.
        run_cfg["loss"] = alpha == 0.0 ? "softmax" : "template_instance";
        run_cfg["alpha_max"] = alpha;
        const ordered_json report =
            run_one(run_cfg, out_dir / ("report_alpha_" + tag + ".json"),
                    out_dir / ("embeddings_alpha_" + tag + ".csv"), "train: alpha " + tag);
        ordered_json entry;
        entry["alpha_max"] = alpha;
        entry["loss"] = report.at("loss");
        entry["final_test_accuracy"] = report.at("final_test_accuracy");
        summary.push_back(entry);
        std::printf("alpha %s (%s): test accuracy %.4f\n", tag.c_str(),
                    report.at("loss").get<std::string>().c_str(),
                    report.at("final_test_accuracy").get<double>());
    }
    write_text_file(out_dir / "sweep_summary.json", summary.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"glyph template margins: features, affinity fusion, margin losses, toy trainer"};
    app.require_subcommand(0, 1);

    std::string config_path;
    uint64_t seed_flag = 0;
    std::string out_flag;
    bool dump_defaults = false;
    app.add_option("--config", config_path, "JSON config file");
    auto* seed_opt = app.add_option("--seed", seed_flag, "run seed (overrides config)");
    auto* out_opt = app.add_option("--out", out_flag, "output directory (overrides config)");
    app.add_flag("--dump-defaults", dump_defaults, "print the default config and exit");

    std::string feature_flag;
    auto* sub_affinity = app.add_subcommand("affinity", "similarity features -> affinity -> margin table");
    sub_affinity->add_option("--feature", feature_flag, "restrict to one feature")
        ->check(CLI::IsMember({"pixel_miou", "phash", "hog", "lbp", "gabor"}));

    std::string cache_flag;
    auto* sub_margins = app.add_subcommand("margins", "pretty-print a margin table cache");
    sub_margins->add_option("cache", cache_flag, "margin cache file");

    std::string loss_flag;
    bool sweep_flag = false;
    auto* sub_train = app.add_subcommand("train", "train the toy cosine-head network");
    sub_train->add_option("--loss", loss_flag, "loss mode")
        ->check(CLI::IsMember({"softmax", "am", "template_instance"}));
    sub_train->add_flag("--sweep-alpha", sweep_flag, "sweep alpha_max over config train.sweep_alpha");

    std::string mode_flag;
    bool corrupt_flag = false;
    auto* sub_gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the loss gradients");
    sub_gradcheck->add_option("--mode", mode_flag, "restrict margin backprop mode")
        ->check(CLI::IsMember({"detached", "differentiated"}));
    sub_gradcheck->add_flag("--corrupt-gradients", corrupt_flag,
                            "self-test: perturb one analytic entry by 1e-3 and expect failure");

    auto* sub_synth = app.add_subcommand("synth", "write a synthetic template set");

    for (auto* sub : {sub_affinity, sub_margins, sub_train, sub_gradcheck, sub_synth})
        sub->fallthrough();

    try {
        app.parse(argc, argv);

        if (dump_defaults) {
            std::printf("%s\n", default_config().dump(2).c_str());
            return 0;
        }
        if (app.get_subcommands().empty()) throw CliError{2, "no subcommand (see --help)"};

        ordered_json cfg = default_config();
        if (!config_path.empty()) cfg = merge_config(cfg, load_config(config_path), "");
        if (seed_opt->count() > 0) cfg["seed"] = seed_flag;
        if (out_opt->count() > 0) cfg["out"] = out_flag;

        const uint64_t seed = cfg.at("seed").get<uint64_t>();
        const fs::path out_dir = cfg.at("out").get<std::string>();

        if (sub_synth->parsed()) return cmd_synth(cfg, seed, out_dir);
        if (sub_affinity->parsed()) return cmd_affinity(cfg, seed, out_dir, feature_flag);
        if (sub_margins->parsed()) return cmd_margins(cfg, cache_flag);
        if (sub_gradcheck->parsed()) return cmd_gradcheck(cfg, seed, out_dir, mode_flag, corrupt_flag);
        if (sub_train->parsed()) return cmd_train(cfg, seed, out_dir, loss_flag, sweep_flag);
        throw CliError{2, "no subcommand (see --help)"};
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const CliError& e) {
        std::fprintf(stderr, "%s\n", e.message.c_str());
        return e.exit_code;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "config: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }
}
