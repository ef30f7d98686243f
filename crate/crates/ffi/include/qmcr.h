#ifndef QMCR_H
#define QMCR_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum QmcrStatus {
  QMCR_STATUS_OK = 0,
  QMCR_STATUS_NULL_POINTER = 1,
  // Malformed input: parse errors, bad dimensions, unknown names.
  QMCR_STATUS_INVALID = 2,
  QMCR_STATUS_NO_CONVERGENCE = 3,
  // Singular systems, missing invariant states and similar numerical failures.
  QMCR_STATUS_NUMERICAL = 4,
  QMCR_STATUS_PANIC = 5,
} QmcrStatus;

typedef enum QmcrTopology {
  QMCR_TOPOLOGY_FINITE = 0,
  QMCR_TOPOLOGY_HALF_LINE = 1,
  QMCR_TOPOLOGY_LINE = 2,
} QmcrTopology;

// A quantum channel given by Kraus operators.
typedef struct QmcrChannel QmcrChannel;

// A parsed model file with its current parameter bindings.
typedef struct QmcrModel QmcrModel;

// Return statistics; `tau` is `INFINITY` when the expected return time diverges.
typedef struct QmcrReturnStats {
  double pi;
  double tau;
  bool recurrent;
  bool positive_recurrent;
} QmcrReturnStats;

typedef struct QmcrKac {
  double ideal;
  double correction;
  double tau;
} QmcrKac;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *qmcr_version(void);

// Message of the last failed call on this thread, or NULL if none. The pointer
// stays valid until the next failing call on the same thread.
const char *qmcr_last_error_message(void);

// Forgets the last error of this thread.
void qmcr_clear_last_error(void);

// Parses a model from a NUL-terminated JSON string.
//
// # Safety
// `json` must be a valid C string and `out` a valid pointer.
enum QmcrStatus qmcr_model_from_json(const char *json, struct QmcrModel **out_model);

// Loads a model file from disk.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum QmcrStatus qmcr_model_load(const char *path, struct QmcrModel **out_model);

// # Safety
// `model` must come from this library and not be used afterwards; NULL is ignored.
void qmcr_model_free(struct QmcrModel *model);

// # Safety
// `model` and `out` must be valid pointers.
enum QmcrStatus qmcr_model_topology(const struct QmcrModel *model, enum QmcrTopology *out_topology);

// Binds a parameter and rebuilds the model. On failure the previous binding is kept.
//
// # Safety
// `model` must be valid and `name` a valid C string.
enum QmcrStatus qmcr_model_set_param(struct QmcrModel *model, const char *name, double value);

// Return statistics to a vertex (finite label, or integer site of a chain written
// as a string). `state` names a state of the model file; NULL means maximally mixed.
//
// # Safety
// Pointers must be valid; `state` may be NULL.
enum QmcrStatus qmcr_model_return_site(const struct QmcrModel *model,
                                       const char *site,
                                       const char *state,
                                       struct QmcrReturnStats *out_stats);

// Return statistics to a named subspace of a finite model.
//
// # Safety
// Pointers must be valid; `state` may be NULL.
enum QmcrStatus qmcr_model_return_subspace(const struct QmcrModel *model,
                                           const char *subspace,
                                           const char *state,
                                           struct QmcrReturnStats *out_stats);

// Builds a channel on `ℂᵈ` from `n_kraus` Kraus operators stored one after the
// other, each `d×d` in row-major order. `im` may be NULL for real operators.
//
// # Safety
// `re` (and `im` if non-NULL) must point to `n_kraus·d·d` doubles; `out` must be valid.
enum QmcrStatus qmcr_channel_new(uintptr_t d,
                                 uintptr_t n_kraus,
                                 const double *re,
                                 const double *im,
                                 struct QmcrChannel **out_channel);

// # Safety
// `channel` must come from this library and not be used afterwards; NULL is ignored.
void qmcr_channel_free(struct QmcrChannel *channel);

// Return statistics of the pure state `ψ` (length `d`, normalized internally) to itself.
//
// # Safety
// `channel` and `out` must be valid; `re` (and `im` if non-NULL) must hold `d` doubles.
enum QmcrStatus qmcr_channel_return_pure(const struct QmcrChannel *channel,
                                         const double *re,
                                         const double *im,
                                         struct QmcrReturnStats *out_stats);

// Kac's formula for `ψ` with respect to the invariant state of an irreducible channel.
//
// # Safety
// As for [`qmcr_channel_return_pure`].
enum QmcrStatus qmcr_channel_kac(const struct QmcrChannel *channel,
                                 const double *re,
                                 const double *im,
                                 struct QmcrKac *out_kac);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QMCR_H */
