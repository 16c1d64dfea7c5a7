/* C interface to the evoloss library.
 *
 * Every object is an opaque handle released with its matching *_free
 * function. Functions return an evoloss_status; on failure the message of the
 * most recent error on the calling thread is available from
 * evoloss_last_error(). Strings returned through char** out-parameters are
 * owned by the caller and released with evoloss_string_free(). */
#ifndef EVOLOSS_H
#define EVOLOSS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define EVOLOSS_API __declspec(dllexport)
#else
#define EVOLOSS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum evoloss_status {
  EVOLOSS_OK = 0,
  EVOLOSS_ERR_USAGE = 1,       /* invalid argument or configuration */
  EVOLOSS_ERR_PARSE = 2,       /* malformed expression, document, CSV or JSON */
  EVOLOSS_ERR_VERSION = 3,     /* unsupported document version */
  EVOLOSS_ERR_DIVERGENCE = 4,  /* training produced non-finite values */
  EVOLOSS_ERR_IO = 5,          /* file could not be read or written */
  EVOLOSS_ERR_INTERNAL = 6
} evoloss_status;

typedef struct evoloss_loss evoloss_loss;
typedef struct evoloss_dataset evoloss_dataset;
typedef struct evoloss_config evoloss_config;
typedef struct evoloss_run evoloss_run;

EVOLOSS_API const char* evoloss_version(void);
EVOLOSS_API const char* evoloss_last_error(void);
EVOLOSS_API const char* evoloss_status_name(evoloss_status status);
EVOLOSS_API void evoloss_string_free(char* s);

/* ---- loss networks ---- */

/* Parses a prefix expression such as "(sq (- y f))". With unit != 0 every
 * edge weight is 1; otherwise weights are drawn N(1, init_sd) from seed.
 * activation is "identity" or "softplus" (NULL means identity). */
EVOLOSS_API evoloss_status evoloss_loss_from_expression(const char* expression, const char* activation,
                                                        int unit, double init_sd, uint64_t seed,
                                                        evoloss_loss** out);
EVOLOSS_API evoloss_status evoloss_loss_load(const char* path, evoloss_loss** out);
EVOLOSS_API evoloss_status evoloss_loss_save(const evoloss_loss* loss, const char* path);
EVOLOSS_API evoloss_status evoloss_loss_deserialize(const char* text, evoloss_loss** out);
EVOLOSS_API evoloss_status evoloss_loss_serialize(const evoloss_loss* loss, char** out);
EVOLOSS_API evoloss_status evoloss_loss_expression(const evoloss_loss* loss, char** out);
EVOLOSS_API evoloss_status evoloss_loss_infix(const evoloss_loss* loss, char** out);
EVOLOSS_API size_t evoloss_loss_weight_count(const evoloss_loss* loss);
/* Copies min(n, weight_count) weights into out. */
EVOLOSS_API evoloss_status evoloss_loss_weights(const evoloss_loss* loss, double* out, size_t n);
/* Mean loss over n (y, f) pairs. */
EVOLOSS_API evoloss_status evoloss_loss_evaluate(const evoloss_loss* loss, const double* y,
                                                 const double* f, size_t n, double* out);
EVOLOSS_API void evoloss_loss_free(evoloss_loss* loss);

/* ---- datasets ---- */

typedef struct evoloss_dataset_info {
  int classification; /* 1 for classification, 0 for regression */
  size_t classes;
  size_t features;
  size_t train;
  size_t val;
  size_t test;
} evoloss_dataset_info;

/* "blobs:C=2,dim=2,sep=4.0,n=500,seed=1", "linreg:dim=4,noise=0.1,n=500,seed=1"
 * or "csv:path=...,target=-1,kind=classification,header=1,split=tabular,seed=0". */
EVOLOSS_API evoloss_status evoloss_dataset_from_spec(const char* spec, evoloss_dataset** out);
EVOLOSS_API evoloss_status evoloss_dataset_info_get(const evoloss_dataset* data, evoloss_dataset_info* out);
EVOLOSS_API void evoloss_dataset_free(evoloss_dataset* data);

/* ---- meta-test training ---- */

typedef struct evoloss_train_options {
  size_t steps;
  double lr;
  double momentum;
  size_t batch_size;
  uint64_t seed;
} evoloss_train_options;

typedef struct evoloss_train_report {
  double val_metric;  /* error rate or MSE in normalized units */
  double test_metric;
  double final_train_loss;
  int diverged;
  size_t diverged_step;
} evoloss_train_report;

EVOLOSS_API evoloss_train_options evoloss_train_defaults(void);
/* Trains a fresh learner with a loss network. losses_csv (nullable) receives
 * "step,train_loss" rows. */
EVOLOSS_API evoloss_status evoloss_train_loss(const evoloss_loss* loss, const evoloss_dataset* data,
                                              const evoloss_train_options* options,
                                              evoloss_train_report* report, char** losses_csv);
/* Same with a built-in loss: squared, ce, lsr, ace, sparse_lsr, focal,
 * focal_sparse_lsr. */
EVOLOSS_API evoloss_status evoloss_train_builtin(const char* name, const evoloss_dataset* data,
                                                 const evoloss_train_options* options,
                                                 evoloss_train_report* report, char** losses_csv);

/* ---- meta-training ---- */

/* Parses a JSON run configuration; "{}" gives the defaults. */
EVOLOSS_API evoloss_status evoloss_config_parse(const char* json, evoloss_config** out);
EVOLOSS_API evoloss_status evoloss_config_load(const char* path, evoloss_config** out);
EVOLOSS_API evoloss_status evoloss_config_set_seed(evoloss_config* cfg, uint64_t seed);
EVOLOSS_API evoloss_status evoloss_config_set_local_search(evoloss_config* cfg, int enabled);
EVOLOSS_API evoloss_status evoloss_config_set_workers(evoloss_config* cfg, size_t workers);
EVOLOSS_API evoloss_status evoloss_config_json(const evoloss_config* cfg, char** out);
EVOLOSS_API void evoloss_config_free(evoloss_config* cfg);

typedef void (*evoloss_progress_fn)(size_t generation, double best_fitness, double mean_fitness,
                                    const char* best_expression, void* user);

/* Runs the evolutionary search. data may be NULL, in which case the
 * configuration's dataset spec is loaded. */
EVOLOSS_API evoloss_status evoloss_meta_train(const evoloss_config* cfg, const evoloss_dataset* data,
                                              evoloss_progress_fn progress, void* user,
                                              evoloss_run** out);
EVOLOSS_API double evoloss_run_best_fitness(const evoloss_run* run);
/* Copy of the best loss network, owned by the caller. */
EVOLOSS_API evoloss_status evoloss_run_best_loss(const evoloss_run* run, evoloss_loss** out);
EVOLOSS_API evoloss_status evoloss_run_manifest(const evoloss_run* run, char** out);
EVOLOSS_API evoloss_status evoloss_run_filter_csv(const evoloss_run* run, char** out);
EVOLOSS_API void evoloss_run_free(evoloss_run* run);

/* ---- label smoothing ---- */

/* losses: comma-separated names; classes: n_classes class counts. Writes the
 * benchmark CSV. */
EVOLOSS_API evoloss_status evoloss_bench_smoothing(const char* losses, const size_t* classes,
                                                   size_t n_classes, size_t batch, size_t reps,
                                                   uint64_t seed, char** csv);
/* regime: "null" or "zero". params: comma-separated key=value pairs among
 * C, xi, gamma, phi0, phi1, eps (eps is the zero-error distance). Writes a
 * one-row CSV. */
EVOLOSS_API evoloss_status evoloss_delta_report(const char* loss, const char* regime,
                                                const char* params, char** csv);

#ifdef __cplusplus
}
#endif

#endif /* EVOLOSS_H */
