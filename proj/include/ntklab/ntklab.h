#ifndef NTKLAB_NTKLAB_H
#define NTKLAB_NTKLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(NTKLAB_BUILDING)
#define NTKLAB_API __attribute__((visibility("default")))
#else
#define NTKLAB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Nonzero values match the library's error kinds; 2, 3 and 4
 * coincide with the CLI exit codes for config errors, divergence and
 * infeasible plans. */
typedef enum ntklab_status {
  NTKLAB_OK = 0,
  NTKLAB_ERR_INVALID_ARGUMENT = 2,
  NTKLAB_ERR_DIVERGENCE = 3,
  NTKLAB_ERR_PLAN_INFEASIBLE = 4,
  NTKLAB_ERR_UNSUPPORTED_DIMENSION = 5,
  NTKLAB_ERR_LABEL_BOUND = 6,
  NTKLAB_ERR_INVALID_WIDTH = 7,
  NTKLAB_ERR_DIMENSION_MISMATCH = 8,
  NTKLAB_ERR_DOMAIN = 9,
  NTKLAB_ERR_NON_FINITE = 10,
  NTKLAB_ERR_SERIES = 11,
  NTKLAB_ERR_QUADRATURE = 12,
  NTKLAB_ERR_OVERFLOW = 13,
  NTKLAB_ERR_SCALE = 14,
  NTKLAB_ERR_INVALID_EIGENVALUE = 15,
  NTKLAB_ERR_IO = 16,
  NTKLAB_ERR_FORMAT = 17,
  NTKLAB_ERR_INTERNAL = 99
} ntklab_status;

typedef struct ntklab_network ntklab_network;
typedef struct ntklab_run ntklab_run;

NTKLAB_API const char* ntklab_version(void);

/* Message of the last failed call on this thread ("" if none). */
NTKLAB_API const char* ntklab_last_error(void);

/* Step index of the last divergence on this thread, -1 if none. */
NTKLAB_API long ntklab_last_divergence_step(void);

/* Strings and buffers returned through out-parameters are owned by the
 * caller and released with ntklab_free. */
NTKLAB_API void ntklab_free(void* ptr);

/* Spectrum table as JSON. With oracle != 0 every entry carries the
 * quadrature value and *max_rel_error (if given) receives the worst
 * relative disagreement over nonvanishing entries. */
NTKLAB_API int ntklab_spectrum(int d, int h_max, int oracle, char** json,
                               double* max_rel_error);

/* Scale-condition report for a JSON parameter tuple. */
NTKLAB_API int ntklab_check(const char* params_json, char** report_json,
                            int* all_hold);

/* Labelled sample as CSV (x_0..x_{d-1},y,xi_star). Config keys: d, n,
 * target, noise, seed. */
NTKLAB_API int ntklab_data(const char* config_json, char** csv);

/* Gradient-flow run. mode is "empirical", "population" or "joint". */
NTKLAB_API int ntklab_train(const char* config_json, const char* mode,
                            ntklab_run** run);
NTKLAB_API void ntklab_run_free(ntklab_run* run);
NTKLAB_API int ntklab_run_trajectory_csv(const ntklab_run* run, char** csv);
NTKLAB_API int ntklab_run_trajectory_json(const ntklab_run* run, char** json);
/* Fully resolved configuration, including defaults and the horizon. */
NTKLAB_API int ntklab_run_config_json(const ntklab_run* run, char** json);
NTKLAB_API int ntklab_run_checkpoint(const ntklab_run* run,
                                     unsigned char** bytes, size_t* size);
NTKLAB_API int ntklab_run_checkpoint_sidecar(const ntklab_run* run,
                                             char** json);

/* Network handles. */
NTKLAB_API int ntklab_network_init(int m, int d, uint64_t seed,
                                   ntklab_network** net);
NTKLAB_API int ntklab_network_from_run(const ntklab_run* run,
                                       ntklab_network** net);
NTKLAB_API int ntklab_network_load(const unsigned char* bytes, size_t size,
                                   ntklab_network** net);
NTKLAB_API void ntklab_network_free(ntklab_network* net);
NTKLAB_API int ntklab_network_shape(const ntklab_network* net, int* m, int* d);
/* x holds count unit vectors of length d, row after row. */
NTKLAB_API int ntklab_network_forward(const ntklab_network* net,
                                      const double* x, int count, double* out);

/* Verification suites. names is a JSON array of suite names. */
NTKLAB_API int ntklab_suite_names(char** json);
NTKLAB_API int ntklab_suite_defaults(const char* suite, char** json);
/* overrides_json may be NULL; seeds < 0 keeps the suite default. */
NTKLAB_API int ntklab_verify(const char* suite, const char* overrides_json,
                             int seeds, uint64_t base_seed, int jobs,
                             char** report_json, int* verdict);

#ifdef __cplusplus
}
#endif

#endif
