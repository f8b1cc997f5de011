#ifndef DISEL_C_H
#define DISEL_C_H

/* C interface to the gated low-rank adapter library.
 *
 * Every function returns a disel_status. On failure a message is available
 * from disel_last_error() until the next call on the same thread. Handles
 * are opaque; release them with the matching *_destroy function. Strings
 * returned through char** are owned by the caller and freed with
 * disel_string_free. Matrices are dense row-major double arrays. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DISEL_API __declspec(dllexport)
#else
#define DISEL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum disel_status {
  DISEL_OK = 0,
  DISEL_ERR_INTERNAL = 1,
  DISEL_ERR_INVALID_ARGUMENT = 2, /* bad config, shapes or usage */
  DISEL_ERR_NUMERIC = 3,          /* non-finite values, divergence, singular systems */
  DISEL_ERR_CHECK_FAILED = 4,     /* a run completed but its checks did not pass */
  DISEL_ERR_IO = 5                /* unreadable or unwritable files */
} disel_status;

typedef struct disel_config disel_config;
typedef struct disel_run_result disel_run_result;
typedef struct disel_layer disel_layer;

DISEL_API const char* disel_version(void);
DISEL_API const char* disel_last_error(void);
DISEL_API const char* disel_status_name(disel_status status);
DISEL_API void disel_string_free(char* s);

/* ---- experiment configs and runs ----
 * experiment: "toy-figure1", "gradcheck", "mlp-retention" or "gates-report". */
DISEL_API disel_status disel_config_create(const char* experiment, disel_config** out);
DISEL_API disel_status disel_config_load(const char* experiment, const char* path, disel_config** out);
DISEL_API disel_status disel_config_parse(const char* experiment, const char* json_text, disel_config** out);
DISEL_API disel_status disel_config_set_seed(disel_config* cfg, uint64_t seed);
DISEL_API disel_status disel_config_set_output_dir(disel_config* cfg, const char* dir);
/* Replaces the method list ("frozen", "fullft", "lora", "disel"). */
DISEL_API disel_status disel_config_set_methods(disel_config* cfg, const char* const* names, size_t count);
/* gates-report inputs: the checkpoint and a CSV of layer inputs per domain. */
DISEL_API disel_status disel_config_set_gates_model(disel_config* cfg, const char* path);
DISEL_API disel_status disel_config_add_gates_domain(disel_config* cfg, const char* name, const char* csv_path);
DISEL_API disel_status disel_config_to_json(const disel_config* cfg, char** out);
DISEL_API void disel_config_destroy(disel_config* cfg);

/* Runs the experiment into a fresh directory under the output dir. Returns
 * DISEL_OK with *out set when the run completed, whether or not its checks
 * passed (see disel_run_result_passed). */
DISEL_API disel_status disel_run(const disel_config* cfg, disel_run_result** out);
DISEL_API const char* disel_run_result_dir(const disel_run_result* res);
DISEL_API int disel_run_result_passed(const disel_run_result* res);
/* results.json of the run. */
DISEL_API const char* disel_run_result_summary(const disel_run_result* res);
DISEL_API size_t disel_run_result_check_count(const disel_run_result* res);
DISEL_API disel_status disel_run_result_check(const disel_run_result* res, size_t index, const char** name,
                                              double* value, double* threshold, int* passed);
DISEL_API void disel_run_result_destroy(disel_run_result* res);

/* ---- single adapted layers ----
 * w0 is d_out x d_in; bias may be NULL. */
DISEL_API disel_status disel_layer_create(const double* w0, const double* bias, size_t d_in, size_t d_out,
                                          disel_layer** out);
/* A Kaiming-uniform, B = 0, Wg Kaiming-uniform, bg = gate_bias_init. */
DISEL_API disel_status disel_layer_attach_disel(disel_layer* layer, size_t rank, double alpha, double gate_bias_init,
                                                uint64_t seed);
DISEL_API disel_status disel_layer_attach_lora(disel_layer* layer, size_t rank, double alpha, uint64_t seed);
/* Sets every gated-adapter parameter: a (d_out x rank), b and wg (rank x d_in), bg (rank). */
DISEL_API disel_status disel_layer_set_disel(disel_layer* layer, size_t rank, double alpha, const double* a,
                                             const double* b, const double* wg, const double* bg);
DISEL_API disel_status disel_layer_dims(const disel_layer* layer, size_t* d_in, size_t* d_out, size_t* rank);
/* y has d_out entries. */
DISEL_API disel_status disel_layer_forward(const disel_layer* layer, const double* x, double* y);
/* gates has rank entries; the layer must carry a gated adapter. */
DISEL_API disel_status disel_layer_gate_values(const disel_layer* layer, const double* x, double* gates);
DISEL_API disel_status disel_layer_param_count(const disel_layer* layer, size_t* lora, size_t* gate);
/* W0 + (alpha / r) A B into out (d_out x d_in). Gated layers have no static
 * weight and return DISEL_ERR_INVALID_ARGUMENT. */
DISEL_API disel_status disel_layer_merge(const disel_layer* layer, double* out);
DISEL_API disel_status disel_layer_save(const disel_layer* layer, const char* path);
DISEL_API disel_status disel_layer_load(const char* path, disel_layer** out);
DISEL_API void disel_layer_destroy(disel_layer* layer);

/* ---- closed-form references for the two-population Gaussian model ---- */
/* wg (d) and bg of the logistic posterior for means mu_ft, mu_pt (d) and
 * shared covariance sigma (d x d). */
DISEL_API disel_status disel_bayes_gate(const double* mu_ft, const double* mu_pt, const double* sigma, size_t d,
                                        double* wg, double* bg);
/* 1/4 Tr(M S M^T) for M (d_y x d) and second moment S (d x d). */
DISEL_API disel_status disel_fixed_floor(const double* m, size_t d_y, size_t d, const double* second_moment,
                                         double* out);

#ifdef __cplusplus
}
#endif

#endif
