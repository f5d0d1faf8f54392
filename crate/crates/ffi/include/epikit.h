#ifndef EPIKIT_H
#define EPIKIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum EpikitStatus {
  EPIKIT_STATUS_OK = 0,
  EPIKIT_STATUS_NULL_POINTER = 1,
  EPIKIT_STATUS_INVALID_INPUT = 2,
  EPIKIT_STATUS_NUMERICAL = 3,
  EPIKIT_STATUS_EXTINCTION = 4,
  EPIKIT_STATUS_OUT_OF_RANGE = 5,
  EPIKIT_STATUS_IO = 6,
  EPIKIT_STATUS_PANIC = 7,
} EpikitStatus;

typedef enum EpikitModel {
  EPIKIT_MODEL_SEIR = 0,
  EPIKIT_MODEL_SEIR_LINEAR = 1,
  EPIKIT_MODEL_SIR = 2,
} EpikitModel;

typedef enum EpikitBranch {
  /**
   * Infection-free state.
   */
  EPIKIT_BRANCH_RED = 0,
  /**
   * Endemic state.
   */
  EPIKIT_BRANCH_BLUE = 1,
} EpikitBranch;

/**
 * Per-time means and standard errors of `(S, I, R, D, C)` totals.
 */
typedef struct EpikitEnsemble EpikitEnsemble;

/**
 * Samples of a compartment run.
 */
typedef struct EpikitSeries EpikitSeries;

/**
 * A compartment model with its parameters and schedule.
 */
typedef struct EpikitSimulation EpikitSimulation;

typedef struct EpikitSeirParams {
  double beta0;
  double sigma;
  double gamma;
  /**
   * Fraction of removals that die.
   */
  double f;
  double n;
} EpikitSeirParams;

/**
 * Transmission schedule. `removal_time` is NaN when controls are never lifted.
 */
typedef struct EpikitControl {
  double beta0;
  double t0;
  double alpha;
  double removal_time;
} EpikitControl;

typedef struct EpikitState {
  double t;
  double s;
  double e;
  double i;
  double r;
  double d;
  double c;
} EpikitState;

typedef struct EpikitDerivedStats {
  double r0;
  double i0_incub;
  double half_life_transmission;
  double half_life_incubation;
  double half_life_infectious;
  double control_response_time;
} EpikitDerivedStats;

typedef struct EpikitSpatialParams {
  double lambda;
  double mu;
  double nu;
  double f_source;
  double g;
  double d_s;
  double d_i;
} EpikitSpatialParams;

typedef struct EpikitSteadyState {
  enum EpikitBranch branch;
  double phi_i;
  double phi_s;
  bool feasible;
} EpikitSteadyState;

/**
 * Roots `ω±` of the dispersion relation at wavenumber `k`.
 */
typedef struct EpikitDispersion {
  double k;
  double b_k;
  double c_k;
  double omega_plus_re;
  double omega_plus_im;
  double omega_minus_re;
  double omega_minus_im;
  /**
   * Nonzero if some mode grows (`Im ω > 0`).
   */
  bool growing;
} EpikitDispersion;

/**
 * `cases(t) = exp(a) / (1 + exp(-gamma_fd (t - t0)))`.
 */
typedef struct EpikitFermiDirac {
  double a;
  double t0;
  double gamma_fd;
} EpikitFermiDirac;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length in bytes,
 * excluding the terminator; an empty message means the last call succeeded.
 */
size_t epikit_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *epikit_version(void);

/**
 * Create a simulation. A null `control` means constant `beta0`.
 */
enum EpikitStatus epikit_simulation_new(enum EpikitModel model,
                                        const struct EpikitSeirParams *params,
                                        const struct EpikitControl *control,
                                        struct EpikitSimulation **out);

/**
 * Create the simulation of a named preset; its initial state, horizon and
 * step are written to `init`, `t_end` and `dt`.
 */
enum EpikitStatus epikit_simulation_preset(const char *name,
                                           struct EpikitSimulation **out,
                                           struct EpikitState *init,
                                           double *t_end,
                                           double *dt);

void epikit_simulation_free(struct EpikitSimulation *sim);

/**
 * Integrate from `init` to `t_end` with fixed step `dt`.
 */
enum EpikitStatus epikit_simulation_run(const struct EpikitSimulation *sim,
                                        const struct EpikitState *init,
                                        double t_end,
                                        double dt,
                                        struct EpikitSeries **out);

size_t epikit_series_len(const struct EpikitSeries *series);

enum EpikitStatus epikit_series_get(const struct EpikitSeries *series,
                                    size_t index,
                                    struct EpikitState *out);

void epikit_series_free(struct EpikitSeries *series);

/**
 * R₀, incubation number, half-lives and control response time.
 */
enum EpikitStatus epikit_derived_stats(const struct EpikitSeirParams *params,
                                       const struct EpikitControl *control,
                                       struct EpikitDerivedStats *out);

enum EpikitStatus epikit_steady_state(const struct EpikitSpatialParams *params,
                                      enum EpikitBranch branch,
                                      struct EpikitSteadyState *out);

enum EpikitStatus epikit_dispersion(const struct EpikitSpatialParams *params,
                                    const struct EpikitSteadyState *state,
                                    double k,
                                    struct EpikitDispersion *out);

/**
 * Advance the density fields `phi_s`, `phi_i` (length `n`, a power of two
 * >= 64, on a periodic domain of `length`) to `t_end` in place.
 */
enum EpikitStatus epikit_spatial_run(const struct EpikitSpatialParams *params,
                                     double length,
                                     size_t n,
                                     double *phi_s,
                                     double *phi_i,
                                     double t_end,
                                     double dt);

/**
 * Gillespie ensemble of the SIR network on `cells` cells of volume
 * `cell_volume`. `s0`, `i0` hold the initial counts per cell; `times`
 * must be sorted. Replicate `k` uses stream `k` of `seed`, so results do
 * not depend on the thread count.
 */
enum EpikitStatus epikit_gillespie_ensemble(const struct EpikitSpatialParams *params,
                                            size_t cells,
                                            double cell_volume,
                                            const uint64_t *s0,
                                            const uint64_t *i0,
                                            const double *times,
                                            size_t n_times,
                                            size_t runs,
                                            uint64_t seed,
                                            struct EpikitEnsemble **out);

size_t epikit_ensemble_len(const struct EpikitEnsemble *ens);

/**
 * Mean and standard error of species `species` (0..5 for S, I, R, D, C)
 * at sample `index`.
 */
enum EpikitStatus epikit_ensemble_get(const struct EpikitEnsemble *ens,
                                      size_t index,
                                      size_t species,
                                      double *mean,
                                      double *std_error);

void epikit_ensemble_free(struct EpikitEnsemble *ens);

/**
 * Fit a Fermi-Dirac curve to cumulative `cases` at `times`, residuals in
 * log space if `log_space`. The final loss goes to `loss` unless it is null.
 */
enum EpikitStatus epikit_fit_fermi_dirac(const double *times,
                                         const double *cases,
                                         size_t n,
                                         bool log_space,
                                         struct EpikitFermiDirac *out,
                                         double *loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPIKIT_H */
