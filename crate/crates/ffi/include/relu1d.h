#ifndef RELU1D_H
#define RELU1D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Attractor class codes written by [`relu1d_classify_attractors`].
 */
#define RELU1D_ATTRACTOR_NEITHER 0

#define RELU1D_ATTRACTOR_LEFT 1

#define RELU1D_ATTRACTOR_RIGHT 2

#define RELU1D_ATTRACTOR_BOTH 3

typedef enum Relu1dStatus {
  RELU1D_STATUS_OK = 0,
  RELU1D_STATUS_NULL_POINTER = 1,
  RELU1D_STATUS_INVALID_INPUT = 2,
  RELU1D_STATUS_CONFIG = 3,
  RELU1D_STATUS_IO = 4,
  RELU1D_STATUS_DEGENERATE = 5,
  RELU1D_STATUS_DIVERGED = 6,
  RELU1D_STATUS_SINGULAR_GRAM = 7,
  RELU1D_STATUS_NUMERICAL = 8,
  RELU1D_STATUS_PANIC = 9,
} Relu1dStatus;

typedef enum Relu1dScaling {
  RELU1D_SCALING_M = 0,
  RELU1D_SCALING_SQRT_M = 1,
  RELU1D_SCALING_ONE = 2,
} Relu1dScaling;

typedef enum Relu1dIntegrator {
  RELU1D_INTEGRATOR_EULER = 0,
  RELU1D_INTEGRATOR_RK4 = 1,
} Relu1dIntegrator;

typedef enum Relu1dKernelKind {
  /**
   * Features of the given network.
   */
  RELU1D_KERNEL_KIND_EMPIRICAL_RF = 0,
  /**
   * Tangent kernel of the given network.
   */
  RELU1D_KERNEL_KIND_EMPIRICAL_NTK = 1,
  /**
   * Uniform knots on `[k1, k2]` with `|a| = a0`.
   */
  RELU1D_KERNEL_KIND_UNIFORM_RF = 2,
  /**
   * Rotation-invariant first layer with `E[a^2 + b^2] = c`.
   */
  RELU1D_KERNEL_KIND_RADIAL_RF = 3,
} Relu1dKernelKind;

typedef struct Relu1dKernelFit Relu1dKernelFit;

typedef struct Relu1dNetwork Relu1dNetwork;

typedef struct Relu1dSamples Relu1dSamples;

typedef struct Relu1dSpline Relu1dSpline;

/**
 * Training options for [`relu1d_network_train`].
 */
typedef struct Relu1dTrainParams {
  double lr;
  size_t steps;
  enum Relu1dIntegrator integrator;
  bool train_a;
  bool train_b;
  bool train_c;
  double tv_lambda;
  /**
   * Stop once the residual norm drops below this; `<= 0` disables.
   */
  double stop_residual_norm;
} Relu1dTrainParams;

/**
 * Kernel description. Fields not used by `kind` are ignored.
 */
typedef struct Relu1dKernelParams {
  enum Relu1dKernelKind kind;
  double a0;
  double k1;
  double k2;
  bool mirrored;
  double c;
  /**
   * Required for the empirical kernels, otherwise may be null.
   */
  const struct Relu1dNetwork *network;
} Relu1dKernelParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *relu1d_last_error_message(void);

/**
 * # Safety
 * `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
 */
enum Relu1dStatus relu1d_samples_new(const double *xs,
                                     const double *ys,
                                     size_t n,
                                     struct Relu1dSamples **out);

/**
 * # Safety
 * `samples` must come from [`relu1d_samples_new`] or be null.
 */
void relu1d_samples_free(struct Relu1dSamples *samples);

/**
 * # Safety
 * `samples` must be a live handle.
 */
size_t relu1d_samples_len(const struct Relu1dSamples *samples);

/**
 * Builds `f(x) = (1/alpha) sum c_i [a_i x - b_i]_+` with `m` neurons.
 *
 * # Safety
 * `a`, `b`, `c` must point to `m` readable doubles; `out` must be writable.
 */
enum Relu1dStatus relu1d_network_new(const double *a,
                                     const double *b,
                                     const double *c,
                                     size_t m,
                                     enum Relu1dScaling scaling,
                                     struct Relu1dNetwork **out);

/**
 * # Safety
 * `net` must come from [`relu1d_network_new`] or be null.
 */
void relu1d_network_free(struct Relu1dNetwork *net);

/**
 * # Safety
 * `net` must be a live handle or null.
 */
size_t relu1d_network_width(const struct Relu1dNetwork *net);

/**
 * Copies the weights into caller buffers of length `width`. Any of the
 * buffers may be null to skip it.
 *
 * # Safety
 * Non-null buffers must hold `width` writable doubles.
 */
enum Relu1dStatus relu1d_network_weights(const struct Relu1dNetwork *net,
                                         double *a,
                                         double *b,
                                         double *c);

/**
 * Per-neuron invariant `c^2 - a^2 - b^2`.
 *
 * # Safety
 * `out` must hold `width` writable doubles.
 */
enum Relu1dStatus relu1d_network_delta(const struct Relu1dNetwork *net, double *out);

/**
 * Canonical coordinates `(r_i, theta_i)`.
 *
 * # Safety
 * `r` and `theta` must each hold `width` writable doubles.
 */
enum Relu1dStatus relu1d_network_canonical(const struct Relu1dNetwork *net,
                                           double *r,
                                           double *theta);

/**
 * # Safety
 * `xs` must hold `n` readable and `out` `n` writable doubles.
 */
enum Relu1dStatus relu1d_network_eval(const struct Relu1dNetwork *net,
                                      const double *xs,
                                      size_t n,
                                      double *out);

/**
 * Runs gradient descent on the squared loss and replaces the network's
 * weights with the result. `final_loss` may be null.
 *
 * # Safety
 * `net` and `samples` must be live handles.
 */
enum Relu1dStatus relu1d_network_train(struct Relu1dNetwork *net,
                                       const struct Relu1dSamples *samples,
                                       struct Relu1dTrainParams params,
                                       double *final_loss);

/**
 * Kernel regression on the samples: interpolation when `ridge == 0`,
 * ridge regression otherwise.
 *
 * # Safety
 * `params` and `samples` must be valid; `out` must be writable.
 */
enum Relu1dStatus relu1d_kernel_fit_new(const struct Relu1dKernelParams *params,
                                        const struct Relu1dSamples *samples,
                                        double ridge,
                                        struct Relu1dKernelFit **out);

/**
 * # Safety
 * `fit` must come from [`relu1d_kernel_fit_new`] or be null.
 */
void relu1d_kernel_fit_free(struct Relu1dKernelFit *fit);

/**
 * # Safety
 * `xs` must hold `n` readable and `out` `n` writable doubles.
 */
enum Relu1dStatus relu1d_kernel_fit_predict(const struct Relu1dKernelFit *fit,
                                            const double *xs,
                                            size_t n,
                                            double *out);

/**
 * Natural cubic spline through the samples.
 *
 * # Safety
 * `samples` must be a live handle; `out` must be writable.
 */
enum Relu1dStatus relu1d_spline_new(const struct Relu1dSamples *samples, struct Relu1dSpline **out);

/**
 * # Safety
 * `spline` must come from [`relu1d_spline_new`] or be null.
 */
void relu1d_spline_free(struct Relu1dSpline *spline);

/**
 * Values and, when `d2` is non-null, second derivatives at `xs`.
 *
 * # Safety
 * `xs` must hold `n` readable doubles; `out` and non-null `d2` `n` writable.
 */
enum Relu1dStatus relu1d_spline_eval(const struct Relu1dSpline *spline,
                                     const double *xs,
                                     size_t n,
                                     double *out,
                                     double *d2);

/**
 * Classifies each sample's lines given the residual `rho`, writing one
 * `RELU1D_ATTRACTOR_*` code per sample.
 *
 * # Safety
 * `rho` must hold `len(samples)` readable doubles and `classes` as many
 * writable ints.
 */
enum Relu1dStatus relu1d_classify_attractors(const struct Relu1dSamples *samples,
                                             const double *rho,
                                             int32_t *classes);

/**
 * Runs a TOML scenario file, writing its run directory under `out_dir`.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum Relu1dStatus relu1d_run_scenario(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELU1D_H */
