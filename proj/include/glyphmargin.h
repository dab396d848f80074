#ifndef GLYPHMARGIN_H
#define GLYPHMARGIN_H

/*
 * C interface to the glyph-margin library: synthetic template sets, glyph
 * similarity features, SVD-fused affinity, prior margin tables, the adaptive
 * margin losses, the toy trainer, and the gradient checker.
 *
 * Every fallible call returns a status code and leaves a message readable via
 * gm_last_error() on failure. Handles are opaque; free them with the matching
 * *_free. Strings returned through char** must be released with
 * gm_string_free.
 */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define GM_OK 0
#define GM_ERR_VALIDATION 1
#define GM_ERR_NUMERIC 2
#define GM_ERR_IO 3
#define GM_ERR_CONFIG 4
#define GM_ERR_INTERNAL 5

/* Message of the last failing call on the calling thread; never NULL. */
const char* gm_last_error(void);

void gm_string_free(char* s);

const char* gm_version(void);

typedef struct gm_template_set gm_template_set;
typedef struct gm_margin_table gm_margin_table;

/* ---------------- template sets ---------------- */

/* Deterministic pseudo-glyph pool: n templates x f fonts, side x side pixels.
 * Consecutive template indices differ in exactly one stroke. */
int gm_template_set_synth(uint64_t seed, int templates, int fonts, int side,
                          gm_template_set** out);

/* Manifest rows: template_id<TAB>font_id<TAB>relative_path[<TAB>invert].
 * Images (.pgm or .png) are resized to side x side. */
int gm_template_set_load(const char* manifest_path, int side, gm_template_set** out);

/* One PGM per cell plus manifest.tsv in the directory. */
int gm_template_set_write(const gm_template_set* set, const char* directory);

int gm_template_set_shape(const gm_template_set* set, int* templates, int* fonts,
                          int* side);

/* Pointer valid until the set is freed. */
int gm_template_set_id(const gm_template_set* set, int index, const char** id);

void gm_template_set_free(gm_template_set* set);

/* ---------------- features, affinity, margins ---------------- */

/* Feature names: "pixel_miou", "phash", "hog", "lbp", "gabor". */

/* Pairwise template similarity for one feature, averaged over fonts.
 * out receives n*n doubles row-major, unit diagonal, symmetric, in [0, 1]. */
int gm_similarity_matrix(const gm_template_set* set, const char* feature_name,
                         double* out);

/* SVD-fused affinity over the named features (NULL or count 0 = all five).
 * out receives n*n doubles, symmetric with unit diagonal. */
int gm_affinity_matrix(const gm_template_set* set, const char* const* feature_names,
                       int feature_count, double* out);

/* Prior margin table: row-softmax of the affinity, zero diagonal. */
int gm_margin_table_build(const gm_template_set* set, const char* const* feature_names,
                          int feature_count, gm_margin_table** out);

/* Same transform applied to a caller-supplied affinity (n*n row-major). */
int gm_margin_table_from_affinity(const double* affinity, int n, gm_margin_table** out);

int gm_margin_table_read(const char* path, gm_margin_table** out);
int gm_margin_table_write(const gm_margin_table* table, const char* path);
int gm_margin_table_size(const gm_margin_table* table, int* n);
/* out receives n*n doubles row-major. */
int gm_margin_table_values(const gm_margin_table* table, double* out);
void gm_margin_table_free(gm_margin_table* table);

/* ---------------- losses ---------------- */

typedef struct {
    double s;          /* cosine logit scale */
    double alpha_max;  /* adaptive margin upper bound */
    double gamma;      /* focusing exponent */
    double beta;       /* prior margin scale */
    double rho;        /* schedule steepness */
    double fixed_m;    /* additive margin of the fixed-margin loss */
    int differentiate_margin; /* 0: adaptive margin constant in backward */
} gm_loss_config;

void gm_loss_config_defaults(gm_loss_config* cfg);

/* cosines: batch x classes row-major in [-1, 1]; labels in [0, classes).
 * Output pointers may be NULL. grad receives batch x classes row-major
 * d(mean loss)/d(cosine); p and sample_margins receive batch doubles. */

/* Fixed additive margin fixed_m on the target cosine. */
int gm_loss_am(const gm_loss_config* cfg, const double* cosines, const int* labels,
               int batch, int classes, double* mean_loss, double* grad);

/* Class-pair prior margins inflate rival logits; no per-sample margin. */
int gm_loss_template(const gm_loss_config* cfg, const gm_margin_table* margins,
                     const double* cosines, const int* labels, int batch, int classes,
                     double* mean_loss, double* grad);

/* Full loss: prior margins plus the adaptive per-sample margin
 * alpha * (1 - p)^gamma on the target. */
int gm_loss_template_instance(const gm_loss_config* cfg, const gm_margin_table* margins,
                              double alpha, const double* cosines, const int* labels,
                              int batch, int classes, double* mean_loss, double* grad,
                              double* p, double* sample_margins);

/* Sigmoid ramp of the margin bound over [1, max_iter]. */
int gm_alpha_schedule(const gm_loss_config* cfg, int64_t iter, int64_t max_iter,
                      double* out);

/* ---------------- training ---------------- */

/* config_json keys (unknown keys are rejected):
 *   dataset: {"synth": {"seed", "classes", "train_per_class", "test_per_class",
 *             "side"}} or {"train_images", "train_labels", "test_images",
 *             "test_labels"} (IDX paths)
 *   loss ("softmax" | "am" | "template_instance"), s, alpha_max, gamma, beta,
 *   rho, fixed_m, differentiate_margin, batch_size, momentum, learning_rate,
 *   lr_milestones, max_iter, seed, hidden, feature_dim, embeddings_out
 * margins may be NULL unless loss is "template_instance".
 * report_json receives the training report. */
int gm_train_run(const char* config_json, const gm_margin_table* margins,
                 char** report_json);

/* ---------------- gradient checking ---------------- */

/* options_json keys (all optional, unknown keys rejected):
 *   ops (["am", "template", "instance"]), modes (["detached",
 *   "differentiated"]), batches, batch_size, class_counts, seed, step,
 *   threshold, corrupt
 * all_pass (may be NULL) receives 1 when every check stays under threshold. */
int gm_gradcheck_run(const char* options_json, char** report_json, int* all_pass);

#ifdef __cplusplus
}
#endif

#endif /* GLYPHMARGIN_H */
