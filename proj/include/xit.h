/* C interface to the xit library: self-supervised time-series pretraining
 * (cross-dataset interpolation + temporal and soft contextual contrastive
 * objectives), linear-probe finetuning, embedding diagnostics and synthetic
 * benchmarks.
 *
 * All functions return XIT_OK on success; on failure they return a status
 * code and leave a human-readable message in xit_last_error() (thread
 * local). Handles are opaque and must be released with their _free call.
 */

#ifndef XIT_H
#define XIT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum xit_status {
    XIT_OK = 0,
    XIT_ERR_RUNTIME = 1, /* training/evaluation failure */
    XIT_ERR_CONFIG = 2   /* configuration or input/output problem */
} xit_status;

typedef struct xit_config xit_config;         /* effective run configuration */
typedef struct xit_checkpoint xit_checkpoint; /* loaded encoder checkpoint */

const char* xit_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* xit_last_error(void);

/* Frees strings returned through output parameters. */
void xit_string_free(char* s);

/* ---- configuration ---- */

xit_status xit_config_default(xit_config** out);
xit_status xit_config_load(const char* path, xit_config** out);

/* Dotted-path override, e.g. ("train.steps", "500") or ("train.ablation",
 * "xd_tc"). Setting "seed" reseeds the train and finetune sections too. */
xit_status xit_config_set(xit_config* cfg, const char* dotted_key, const char* value);

/* Serializes the full effective config as JSON; free with xit_string_free. */
xit_status xit_config_dump(const xit_config* cfg, char** json_out);

void xit_config_free(xit_config* cfg);

/* ---- checkpoints ---- */

xit_status xit_checkpoint_open(const char* dir, xit_checkpoint** out);
void xit_checkpoint_free(xit_checkpoint* ckpt);

/* ---- pipeline commands ---- */

/* Self-supervised pretraining per the config. Writes checkpoint/,
 * telemetry.csv and config.json into out_dir (NULL: the config's
 * output_dir, made relative to $XIT_OUTPUT_ROOT when that is set). */
xit_status xit_pretrain(const xit_config* cfg, const char* out_dir);

/* Linear probing of a labeled dataset on a frozen encoder. ckpt may be NULL
 * for the randomly-initialized baseline. test_dataset_path may be NULL, in
 * which case metrics come from the validation split. Writes report.json and
 * the classifier tensors into out_dir. */
xit_status xit_finetune(const xit_config* cfg, const xit_checkpoint* ckpt, const char* dataset_path,
                        const char* test_dataset_path, const char* out_dir);

/* Frozen-encoder embeddings, their 2-D principal-component projection and
 * the Davies-Bouldin index (class labels as groups). Writes one CSV row per
 * series; *dbi_out may be NULL. */
xit_status xit_embed(const xit_checkpoint* ckpt, const char* dataset_path, const char* out_csv,
                     double* dbi_out);

/* Mean-rank table over report.json files laid out as
 * reports_dir/<method>/<dataset>.json. metric is one of macro_f1, auroc,
 * accuracy. Writes a CSV (methods by mean rank) and errors on missing
 * cells. */
xit_status xit_eval_reports(const char* reports_dir, const char* metric, const char* out_csv);

/* Synthetic benchmark data. spec_json_path holds {"datasets": [{"family":
 * "sine-freq", "classes": 2, "samples_per_class": 100, "length": 128,
 * "noise_sigma": 0.05, "seed": 1}, ...]}; writes one TSV per entry plus a
 * collection manifest.json into out_dir. */
xit_status xit_synth(const char* spec_json_path, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* XIT_H */
