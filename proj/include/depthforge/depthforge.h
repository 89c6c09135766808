#ifndef DEPTHFORGE_H
#define DEPTHFORGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DF_API __declspec(dllexport)
#else
#define DF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum df_status {
  DF_OK = 0,
  DF_E_INVALID_ARGUMENT = 1,
  DF_E_SHAPE = 2,
  DF_E_NUMERIC = 3,
  DF_E_IO = 4,
  DF_E_CONFIG = 5,
  DF_E_DIVERGED = 6,
  DF_E_INTERNAL = 7
} df_status;

/* Message of the last failing call on this thread ("" after success). */
DF_API const char* df_last_error(void);
DF_API const char* df_status_name(df_status status);
DF_API const char* df_version(void);

/* Process-wide settings. n = 0 means one worker per hardware thread. */
DF_API df_status df_set_threads(int n);
DF_API int df_threads(void);
DF_API df_status df_set_deterministic(int on);
/* "none", "warp_sign", "berhu_branch" or "weight_decay". */
DF_API df_status df_inject_fault(const char* name);

/* ---- data generation ---- */
typedef struct df_gen_params {
  size_t scenes;
  size_t width;
  size_t height;
  double gt_density;
  uint64_t seed;
} df_gen_params;

DF_API df_status df_generate(const char* out_dir, const df_gen_params* params);

/* ---- run configuration ---- */
typedef struct df_config df_config;

DF_API df_status df_config_load(const char* path, df_config** out);
DF_API df_status df_config_parse(const char* text, df_config** out);
/* Canonical text, owned by the handle. */
DF_API const char* df_config_text(const df_config* cfg);
DF_API void df_config_free(df_config* cfg);

/* ---- datasets ---- */
typedef struct df_dataset df_dataset;

DF_API df_status df_dataset_load(const char* dir, df_dataset** out);
DF_API size_t df_dataset_size(const df_dataset* ds);
DF_API void df_dataset_free(df_dataset* ds);

/* ---- training ---- */
typedef struct df_loss_breakdown {
  double lambda_t;
  double supervised;
  double unsupervised;
  double regularizer;
  double total;
} df_loss_breakdown;

typedef struct df_epoch_log {
  size_t epoch;
  int64_t t;
  double lambda_t;
  double supervised;
  double unsupervised;
  double regularizer;
  double total;
  double val_total;
  double lr;
} df_epoch_log;

typedef void (*df_epoch_fn)(const df_epoch_log* row, void* user);

typedef struct df_train_result {
  size_t epochs;
  int early_stopped;
  double best_val;
  /* Filled when the call returns DF_E_DIVERGED. */
  int64_t diverged_at;
  df_loss_breakdown last;
} df_train_result;

/* Writes train_log.csv, last.ckpt, best.ckpt into out_dir. resume may be NULL. */
DF_API df_status df_train(const df_dataset* data, const df_dataset* val, const df_config* cfg, const char* out_dir,
                          const char* resume, df_epoch_fn on_epoch, void* user, df_train_result* result);

/* Reads the listed directories/config and writes manifest.txt next to the outputs. */
DF_API df_status df_train_dirs(const char* data_dir, const char* val_dir, const char* config_path,
                               const char* out_dir, const char* resume, df_epoch_fn on_epoch, void* user,
                               df_train_result* result);

/* ---- models ---- */
typedef struct df_model df_model;

DF_API df_status df_model_load(const char* checkpoint, df_model** out);
DF_API int64_t df_model_iteration(const df_model* model);
/* Inverse depth at image resolution; image and rho_out are height*width, row-major. */
DF_API df_status df_model_predict(const df_model* model, const double* image, size_t height, size_t width,
                                  double* rho_out);
DF_API void df_model_free(df_model* model);

DF_API df_status df_predict_dir(const char* checkpoint, const char* images_dir, const char* out_dir);

/* ---- evaluation ---- */
typedef struct df_metrics {
  double rmse;
  double rmse_log;
  double ard;
  double srd;
  double acc1;
  double acc2;
  double acc3;
  size_t count;
} df_metrics;

/* Comma-separated list of protocol names. */
DF_API const char* df_protocol_names(void);
/* crop: NULL keeps the protocol's crop, else {top, bottom, left, right} as
   image fractions (applied only to protocols that crop). */
DF_API df_status df_eval_dirs(const char* pred_dir, const char* gt_dir, const char* protocol, const double* crop,
                              df_metrics* out);
DF_API df_status df_eval_pairs(const double* pred, const double* gt, size_t n, df_metrics* out);
DF_API const char* df_metrics_csv_header(void);
/* Writes the CSV row (NUL-terminated) into buf; needs at most 128 bytes. */
DF_API df_status df_metrics_csv_row(const df_metrics* m, char* buf, size_t cap);

/* ---- verification ---- */
typedef void (*df_check_fn)(const char* name, int passed, const char* detail, double seconds, void* user);

/* level: "quick" or "full". *all_passed is 1 iff every check passed. The
   gradient table (full level; "" otherwise) stays valid until the next call
   on this thread. */
DF_API df_status df_verify(const char* level, df_check_fn on_check, void* user, int* all_passed,
                           const char** grad_table);

#ifdef __cplusplus
}
#endif

#endif
