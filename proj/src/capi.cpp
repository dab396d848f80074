#include "glyphmargin.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/affinity.hpp"
#include "core/dataset.hpp"
#include "core/errors.hpp"
#include "core/features.hpp"
#include "core/glyphs.hpp"
#include "core/gradcheck.hpp"
#include "core/image_io.hpp"
#include "core/loss.hpp"
#include "core/trainer.hpp"

using nlohmann::ordered_json;

struct gm_template_set {
    gm::TemplateSet set;
};

struct gm_margin_table {
    gm::PriorMarginTable table;
};

namespace {

thread_local std::string t_last_error;

int fail(int code, const std::string& message) {
    t_last_error = message;
    return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return GM_OK;
    } catch (const gm::ValidationError& e) {
        return fail(GM_ERR_VALIDATION, e.what());
    } catch (const gm::NumericError& e) {
        return fail(GM_ERR_NUMERIC, e.what());
    } catch (const gm::IoError& e) {
        return fail(GM_ERR_IO, e.what());
    } catch (const gm::ConfigError& e) {
        return fail(GM_ERR_CONFIG, e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(GM_ERR_CONFIG, e.what());
    } catch (const std::exception& e) {
        return fail(GM_ERR_INTERNAL, e.what());
    }
}

void require(bool ok, const std::string& message) {
    if (!ok) throw gm::ValidationError(message);
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::vector<gm::FeatureId> resolve_features(const char* const* names, int count) {
    if (!names || count <= 0)
        return {gm::kAllFeatures.begin(), gm::kAllFeatures.end()};
    std::vector<gm::FeatureId> ids;
    for (int i = 0; i < count; ++i) {
        require(names[i] != nullptr, "null feature name");
        ids.push_back(gm::feature_from_name(names[i]));
    }
    return ids;
}

gm::FeatureSimilarityTensor tensor_for(const gm::TemplateSet& set,
                                       const std::vector<gm::FeatureId>& ids) {
    gm::FeatureSimilarityTensor tensor;
    tensor.n = set.templates();
    for (gm::FeatureId id : ids) tensor.matrices[id] = gm::feature_similarity_matrix(set, id);
    tensor.validate();
    return tensor;
}

gm::CosineBatch make_batch(const double* cosines, const int* labels, int batch, int classes) {
    require(cosines && labels, "null batch arrays");
    require(batch >= 1 && classes >= 2, "batch needs at least 1 row and 2 classes");
    gm::CosineBatch b;
    b.cosines = gm::Matrix(batch, classes);
    std::copy(cosines, cosines + static_cast<size_t>(batch) * classes, b.cosines.data().begin());
    b.labels.assign(labels, labels + batch);
    return b;
}

gm::LossConfig to_core(const gm_loss_config* cfg) {
    require(cfg != nullptr, "null loss config");
    gm::LossConfig out;
    out.s = cfg->s;
    out.alpha_max = cfg->alpha_max;
    out.gamma = cfg->gamma;
    out.beta = cfg->beta;
    out.rho = cfg->rho;
    out.fixed_m = cfg->fixed_m;
    out.margin_backprop = cfg->differentiate_margin ? gm::MarginBackprop::Differentiated
                                                    : gm::MarginBackprop::Detached;
    return out;
}

void copy_eval(const gm::LossEvaluation& eval, double* mean_loss, double* grad, double* p,
               double* sample_margins) {
    if (mean_loss) *mean_loss = eval.mean_loss;
    if (grad) std::copy(eval.grad.data().begin(), eval.grad.data().end(), grad);
    if (p) std::copy(eval.p.begin(), eval.p.end(), p);
    if (sample_margins) std::copy(eval.margin.begin(), eval.margin.end(), sample_margins);
}

void reject_unknown_keys(const ordered_json& obj, const std::string& where,
                         std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* k) { return it.key() == k; });
        if (!known) throw gm::ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

ordered_json parse_object(const char* text, const std::string& where) {
    require(text != nullptr, "null " + where);
    ordered_json j = ordered_json::parse(text, nullptr, true);
    if (!j.is_object()) throw gm::ConfigError(where + " must be a JSON object");
    return j;
}

ordered_json angles_json(const gm::AngleStats& a) {
    ordered_json j;
    j["intra_class_std"] = a.intra_class_std;
    j["mean_intra_class_std"] = a.mean_intra_class_std;
    j["min_inter_class_weight_angle"] = a.min_inter_class_weight_angle;
    if (!a.weight_angles.empty()) j["weight_angles"] = a.weight_angles;
    return j;
}

}  // namespace

extern "C" {

const char* gm_last_error(void) { return t_last_error.c_str(); }

void gm_string_free(char* s) { std::free(s); }

const char* gm_version(void) { return "0.1.0"; }

int gm_template_set_synth(uint64_t seed, int templates, int fonts, int side,
                          gm_template_set** out) {
    return guarded([&] {
        require(out != nullptr, "null output handle");
        auto handle = std::make_unique<gm_template_set>();
        handle->set = gm::synth_template_set(seed, templates, fonts, side);
        *out = handle.release();
    });
}

int gm_template_set_load(const char* manifest_path, int side, gm_template_set** out) {
    return guarded([&] {
        require(manifest_path && out, "null argument");
        auto handle = std::make_unique<gm_template_set>();
        handle->set = gm::load_template_set(manifest_path, side);
        *out = handle.release();
    });
}

int gm_template_set_write(const gm_template_set* set, const char* directory) {
    return guarded([&] {
        require(set && directory, "null argument");
        gm::write_template_set(directory, set->set);
    });
}

int gm_template_set_shape(const gm_template_set* set, int* templates, int* fonts, int* side) {
    return guarded([&] {
        require(set != nullptr, "null template set");
        if (templates) *templates = set->set.templates();
        if (fonts) *fonts = set->set.font_count();
        if (side) *side = set->set.side();
    });
}

int gm_template_set_id(const gm_template_set* set, int index, const char** id) {
    return guarded([&] {
        require(set && id, "null argument");
        require(index >= 0 && index < set->set.templates(), "template index out of range");
        *id = set->set.template_ids[static_cast<size_t>(index)].c_str();
    });
}

void gm_template_set_free(gm_template_set* set) { delete set; }

int gm_similarity_matrix(const gm_template_set* set, const char* feature_name, double* out) {
    return guarded([&] {
        require(set && feature_name && out, "null argument");
        const gm::Matrix m = gm::feature_similarity_matrix(set->set, gm::feature_from_name(feature_name));
        std::copy(m.data().begin(), m.data().end(), out);
    });
}

int gm_affinity_matrix(const gm_template_set* set, const char* const* feature_names,
                       int feature_count, double* out) {
    return guarded([&] {
        require(set && out, "null argument");
        const gm::FeatureSimilarityTensor tensor = tensor_for(set->set, resolve_features(feature_names, feature_count));
        const gm::AffinityMatrix a = gm::build_affinity(tensor);
        std::copy(a.a.data().begin(), a.a.data().end(), out);
    });
}

int gm_margin_table_build(const gm_template_set* set, const char* const* feature_names,
                          int feature_count, gm_margin_table** out) {
    return guarded([&] {
        require(set && out, "null argument");
        const gm::FeatureSimilarityTensor tensor = tensor_for(set->set, resolve_features(feature_names, feature_count));
        auto handle = std::make_unique<gm_margin_table>();
        handle->table = gm::prior_margin_table(gm::build_affinity(tensor));
        *out = handle.release();
    });
}

int gm_margin_table_from_affinity(const double* affinity, int n, gm_margin_table** out) {
    return guarded([&] {
        require(affinity && out, "null argument");
        require(n >= 2, "affinity needs at least 2 templates");
        gm::AffinityMatrix a;
        a.n = n;
        a.a = gm::Matrix(n, n);
        std::copy(affinity, affinity + static_cast<size_t>(n) * n, a.a.data().begin());
        a.validate();
        auto handle = std::make_unique<gm_margin_table>();
        handle->table = gm::prior_margin_table(a);
        *out = handle.release();
    });
}

int gm_margin_table_read(const char* path, gm_margin_table** out) {
    return guarded([&] {
        require(path && out, "null argument");
        auto handle = std::make_unique<gm_margin_table>();
        handle->table = gm::read_margin_cache(path);
        *out = handle.release();
    });
}

int gm_margin_table_write(const gm_margin_table* table, const char* path) {
    return guarded([&] {
        require(table && path, "null argument");
        gm::write_margin_cache(path, table->table);
    });
}

int gm_margin_table_size(const gm_margin_table* table, int* n) {
    return guarded([&] {
        require(table && n, "null argument");
        *n = table->table.n;
    });
}

int gm_margin_table_values(const gm_margin_table* table, double* out) {
    return guarded([&] {
        require(table && out, "null argument");
        std::copy(table->table.m.data().begin(), table->table.m.data().end(), out);
    });
}

void gm_margin_table_free(gm_margin_table* table) { delete table; }

void gm_loss_config_defaults(gm_loss_config* cfg) {
    if (!cfg) return;
    const gm::LossConfig d;
    cfg->s = d.s;
    cfg->alpha_max = d.alpha_max;
    cfg->gamma = d.gamma;
    cfg->beta = d.beta;
    cfg->rho = d.rho;
    cfg->fixed_m = d.fixed_m;
    cfg->differentiate_margin = d.margin_backprop == gm::MarginBackprop::Differentiated;
}

int gm_loss_am(const gm_loss_config* cfg, const double* cosines, const int* labels, int batch,
               int classes, double* mean_loss, double* grad) {
    return guarded([&] {
        const gm::LossEvaluation eval =
            gm::am_softmax_loss(make_batch(cosines, labels, batch, classes), to_core(cfg));
        copy_eval(eval, mean_loss, grad, nullptr, nullptr);
    });
}

int gm_loss_template(const gm_loss_config* cfg, const gm_margin_table* margins,
                     const double* cosines, const int* labels, int batch, int classes,
                     double* mean_loss, double* grad) {
    return guarded([&] {
        require(margins != nullptr, "null margin table");
        const gm::LossEvaluation eval = gm::template_loss_only(
            make_batch(cosines, labels, batch, classes), to_core(cfg), margins->table);
        copy_eval(eval, mean_loss, grad, nullptr, nullptr);
    });
}

int gm_loss_template_instance(const gm_loss_config* cfg, const gm_margin_table* margins,
                              double alpha, const double* cosines, const int* labels, int batch,
                              int classes, double* mean_loss, double* grad, double* p,
                              double* sample_margins) {
    return guarded([&] {
        require(margins != nullptr, "null margin table");
        const gm::LossEvaluation eval = gm::template_instance_loss(
            make_batch(cosines, labels, batch, classes), to_core(cfg), margins->table, alpha);
        copy_eval(eval, mean_loss, grad, p, sample_margins);
    });
}

int gm_alpha_schedule(const gm_loss_config* cfg, int64_t iter, int64_t max_iter, double* out) {
    return guarded([&] {
        require(out != nullptr, "null output");
        *out = gm::alpha_schedule(iter, max_iter, to_core(cfg));
    });
}

int gm_train_run(const char* config_json, const gm_margin_table* margins, char** report_json) {
    return guarded([&] {
        require(report_json != nullptr, "null output");
        const ordered_json j = parse_object(config_json, "train config");
        reject_unknown_keys(j, "train config",
                            {"dataset", "loss", "s", "alpha_max", "gamma", "beta", "rho",
                             "fixed_m", "differentiate_margin", "batch_size", "momentum",
                             "learning_rate", "lr_milestones", "max_iter", "seed", "hidden",
                             "feature_dim", "embeddings_out"});
        if (!j.contains("dataset")) throw gm::ConfigError("train config: missing 'dataset'");

        gm::LabeledDataset train_set, test_set;
        const ordered_json& d = j.at("dataset");
        if (!d.is_object()) throw gm::ConfigError("train config: 'dataset' must be an object");
        if (d.contains("synth")) {
            reject_unknown_keys(d, "dataset", {"synth"});
            const ordered_json& s = d.at("synth");
            reject_unknown_keys(s, "dataset.synth",
                                {"seed", "classes", "train_per_class", "test_per_class", "side"});
            const gm::SynthDataset synth = gm::synth_labeled_dataset(
                s.value("seed", uint64_t{1}), s.at("classes").get<int>(),
                s.at("train_per_class").get<int>(), s.at("test_per_class").get<int>(),
                s.value("side", 16));
            train_set = synth.train;
            test_set = synth.test;
        } else {
            reject_unknown_keys(d, "dataset",
                                {"train_images", "train_labels", "test_images", "test_labels"});
            for (const char* key : {"train_images", "train_labels", "test_images", "test_labels"})
                if (!d.contains(key))
                    throw gm::ConfigError(std::string("train config: dataset needs '") + key + "'");
            train_set = gm::load_idx_dataset(d.at("train_images").get<std::string>(),
                                             d.at("train_labels").get<std::string>());
            test_set = gm::load_idx_dataset(d.at("test_images").get<std::string>(),
                                            d.at("test_labels").get<std::string>());
            // Labels in either split may omit the last classes; align the counts.
            train_set.classes = test_set.classes = std::max(train_set.classes, test_set.classes);
        }

        gm::TrainConfig cfg;
        cfg.mode = gm::loss_mode_from_name(j.value("loss", std::string("softmax")));
        cfg.loss.s = j.value("s", cfg.loss.s);
        cfg.loss.alpha_max = j.value("alpha_max", cfg.loss.alpha_max);
        cfg.loss.gamma = j.value("gamma", cfg.loss.gamma);
        cfg.loss.beta = j.value("beta", cfg.loss.beta);
        cfg.loss.rho = j.value("rho", cfg.loss.rho);
        cfg.loss.fixed_m = j.value("fixed_m", cfg.loss.fixed_m);
        if (j.value("differentiate_margin", false))
            cfg.loss.margin_backprop = gm::MarginBackprop::Differentiated;
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.momentum = j.value("momentum", cfg.momentum);
        cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
        if (j.contains("lr_milestones"))
            cfg.lr_milestones = j.at("lr_milestones").get<std::vector<int64_t>>();
        cfg.max_iter = j.value("max_iter", cfg.max_iter);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<std::vector<int>>();
        cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);

        std::optional<gm::PriorMarginTable> margin_table;
        if (margins) margin_table = margins->table;

        gm::TrainResult result = gm::train(train_set, test_set, cfg, margin_table);

        if (j.contains("embeddings_out")) {
            const std::string path = j.at("embeddings_out").get<std::string>();
            gm::export_embeddings(result.net, train_set, path);
            result.report.embeddings_path = path;
        }

        ordered_json r;
        r["loss"] = gm::loss_mode_name(cfg.mode);
        r["alpha_max"] = cfg.loss.alpha_max;
        r["seed"] = cfg.seed;
        r["max_iter"] = cfg.max_iter;
        r["batch_size"] = cfg.batch_size;
        r["classes"] = train_set.classes;
        r["train_size"] = train_set.size();
        r["test_size"] = test_set.size();
        r["final_train_accuracy"] = result.report.final_train_accuracy;
        r["final_test_accuracy"] = result.report.final_test_accuracy;
        r["train_angles"] = angles_json(result.report.train_angles);
        r["test_angles"] = angles_json(result.report.test_angles);
        ordered_json epochs = ordered_json::array();
        for (const gm::EpochStat& e : result.report.epochs) {
            ordered_json ej;
            ej["epoch"] = e.epoch;
            ej["train_accuracy"] = e.train_accuracy;
            ej["test_accuracy"] = e.test_accuracy;
            ej["mean_loss"] = e.mean_loss;
            epochs.push_back(std::move(ej));
        }
        r["epochs"] = std::move(epochs);
        r["init"] = result.report.init;
        if (!result.report.embeddings_path.empty())
            r["embeddings_path"] = result.report.embeddings_path;
        *report_json = dup_string(r.dump(2));
    });
}

int gm_gradcheck_run(const char* options_json, char** report_json, int* all_pass) {
    return guarded([&] {
        require(report_json != nullptr, "null output");
        gm::GradcheckOptions opts;
        const ordered_json j = parse_object(options_json ? options_json : "{}", "gradcheck options");
        reject_unknown_keys(j, "gradcheck options",
                            {"ops", "modes", "batches", "batch_size", "class_counts", "seed",
                             "step", "threshold", "corrupt"});
        if (j.contains("ops")) opts.ops = j.at("ops").get<std::vector<std::string>>();
        if (j.contains("modes")) {
            opts.instance_modes.clear();
            for (const auto& m : j.at("modes")) {
                const std::string name = m.get<std::string>();
                if (name == "detached")
                    opts.instance_modes.push_back(gm::MarginBackprop::Detached);
                else if (name == "differentiated")
                    opts.instance_modes.push_back(gm::MarginBackprop::Differentiated);
                else
                    throw gm::ConfigError("unknown gradcheck mode: " + name);
            }
        }
        opts.batches = j.value("batches", opts.batches);
        opts.batch_size = j.value("batch_size", opts.batch_size);
        if (j.contains("class_counts")) opts.class_counts = j.at("class_counts").get<std::vector<int>>();
        opts.seed = j.value("seed", opts.seed);
        opts.step = j.value("step", opts.step);
        opts.threshold = j.value("threshold", opts.threshold);
        opts.corrupt = j.value("corrupt", opts.corrupt);

        const std::vector<gm::GradcheckReport> reports = gm::run_gradcheck(opts);
        bool all = true;
        ordered_json checks = ordered_json::array();
        for (const gm::GradcheckReport& rep : reports) {
            all = all && rep.pass;
            ordered_json cj;
            cj["op"] = rep.op;
            cj["mode"] = rep.mode;
            cj["batch_size"] = rep.batch_size;
            cj["classes"] = rep.n;
            cj["max_rel_error"] = rep.max_rel_error;
            cj["pass"] = rep.pass;
            cj["seed"] = rep.seed;
            checks.push_back(std::move(cj));
        }
        ordered_json out;
        out["threshold"] = opts.threshold;
        out["all_pass"] = all;
        out["checks"] = std::move(checks);
        if (all_pass) *all_pass = all ? 1 : 0;
        *report_json = dup_string(out.dump(2));
    });
}

}  // extern "C"
