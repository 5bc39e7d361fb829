#ifndef RBF_PEARL_H
#define RBF_PEARL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Environment selectors for [`rp_env_new`].
typedef enum RpEnvKind {
  RP_ENV_KIND_GAZE_LINEAR = 0,
  RP_ENV_KIND_GAZE_NONLINEAR = 1,
  RP_ENV_KIND_SOCIALNAV = 2,
  RP_ENV_KIND_RACER = 3,
  RP_ENV_KIND_CONSTANT = 4,
} RpEnvKind;

// Result codes of fallible calls.
typedef enum RpStatus {
  RP_STATUS_OK = 0,
  RP_STATUS_NULL_POINTER = 1,
  RP_STATUS_SHAPE = 2,
  RP_STATUS_USAGE = 3,
  RP_STATUS_NON_FINITE = 4,
  RP_STATUS_CONFIG = 5,
  RP_STATUS_NOT_READY = 6,
  RP_STATUS_ENVIRONMENT = 7,
  RP_STATUS_CHECKPOINT = 8,
  RP_STATUS_IO = 9,
  RP_STATUS_PANIC = 10,
} RpStatus;

typedef struct RpEncoder RpEncoder;

typedef struct RpEnv RpEnv;

typedef struct RpRbf RpRbf;

typedef struct RpTrainer RpTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread, NUL-terminated and
// truncated to `len` bytes, into `buf`. Returns the full message length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t rp_last_error(char *buf, uintptr_t len);

// Layer with centers evenly spread over `[lo, hi]`; `trainable` selects the
// learnable-width parameterization (same initial output).
//
// # Safety
// `out` must be a valid pointer to write the handle to.
enum RpStatus rp_rbf_new(uintptr_t d,
                         uintptr_t k,
                         double lo,
                         double hi,
                         bool trainable,
                         struct RpRbf **out);

// # Safety
// `h` must be null or a live handle.
uintptr_t rp_rbf_output_dim(const struct RpRbf *h);

// Evaluates the layer on `z` (`z_len = d`) into `out` (`out_len = d * k`).
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum RpStatus rp_rbf_forward(const struct RpRbf *h,
                             const double *z,
                             uintptr_t z_len,
                             double *out,
                             uintptr_t out_len);

// # Safety
// `h` must be null or a handle from [`rp_rbf_new`] not yet freed.
void rp_rbf_free(struct RpRbf *h);

// Encoder with randomly initialized weights drawn from `seed`.
//
// # Safety
// `out` must be a valid pointer to write the handle to.
enum RpStatus rp_encoder_new(uintptr_t obs_dim,
                             uintptr_t act_dim,
                             uintptr_t latent_dim,
                             uintptr_t hidden,
                             uintptr_t depth,
                             uint64_t seed,
                             struct RpEncoder **out);

// Input width of one context row: `2 * obs_dim + act_dim + 1`.
//
// # Safety
// `h` must be null or a live handle.
uintptr_t rp_encoder_input_dim(const struct RpEncoder *h);

// Posterior over the latent from `rows` context rows laid out row-major
// as `[s | a | r | s']`. `mean` and `var` receive `latent_dim` values.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum RpStatus rp_encoder_posterior(const struct RpEncoder *h,
                                   const double *context,
                                   uintptr_t rows,
                                   double *mean,
                                   double *var,
                                   uintptr_t latent_dim);

// # Safety
// `h` must be null or a handle from [`rp_encoder_new`] not yet freed.
void rp_encoder_free(struct RpEncoder *h);

// Environment with default settings.
//
// # Safety
// `out` must be a valid pointer to write the handle to.
enum RpStatus rp_env_new(enum RpEnvKind kind, struct RpEnv **out);

// # Safety
// `h` must be null or a live handle.
uintptr_t rp_env_obs_dim(const struct RpEnv *h);

// # Safety
// `h` must be null or a live handle.
uintptr_t rp_env_act_dim(const struct RpEnv *h);

// # Safety
// `h` must be null or a live handle.
uintptr_t rp_env_n_components(const struct RpEnv *h);

// Installs the task sampled from `seed` for this environment family.
//
// # Safety
// `h` must be a live handle.
enum RpStatus rp_env_set_task(struct RpEnv *h, uint64_t seed);

// # Safety
// `obs` must reference `obs_len` writable values.
enum RpStatus rp_env_reset(struct RpEnv *h, uint64_t seed, double *obs, uintptr_t obs_len);

// Advances one step. `reward` (may be null) receives the task reward,
// which needs a task installed with [`rp_env_set_task`].
//
// # Safety
// Array pointers must reference the stated lengths.
enum RpStatus rp_env_step(struct RpEnv *h,
                          const double *action,
                          uintptr_t action_len,
                          double *obs,
                          uintptr_t obs_len,
                          double *components,
                          uintptr_t components_len,
                          double *reward);

// # Safety
// `h` must be null or a handle from [`rp_env_new`] not yet freed.
void rp_env_free(struct RpEnv *h);

// Fresh trainer from a TOML run configuration file.
//
// # Safety
// `config_path` must be a NUL-terminated string; `out` a valid pointer.
enum RpStatus rp_trainer_new(const char *config_path, struct RpTrainer **out);

// # Safety
// `checkpoint` must be a NUL-terminated string; `out` a valid pointer.
enum RpStatus rp_trainer_load(const char *checkpoint, struct RpTrainer **out);

// # Safety
// `h` must be a live handle; `checkpoint` a NUL-terminated string.
enum RpStatus rp_trainer_save(const struct RpTrainer *h, const char *checkpoint);

// One collection/update iteration.
//
// # Safety
// `h` must be a live handle.
enum RpStatus rp_trainer_step(struct RpTrainer *h);

// # Safety
// `h` must be null or a live handle.
uint64_t rp_trainer_env_steps(const struct RpTrainer *h);

// # Safety
// `h` must be null or a live handle.
uintptr_t rp_trainer_n_test_tasks(const struct RpTrainer *h);

// Meta-test on the first `n` test tasks; adapted returns go to `returns`.
//
// # Safety
// `returns` must reference `n` writable values.
enum RpStatus rp_trainer_evaluate(const struct RpTrainer *h,
                                  uint64_t seed,
                                  double *returns,
                                  uintptr_t n);

// # Safety
// `h` must be null or a handle from this library not yet freed.
void rp_trainer_free(struct RpTrainer *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RBF_PEARL_H */
