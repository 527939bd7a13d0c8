#ifndef LEAKGUARD_H
#define LEAKGUARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LgStatus {
  LG_STATUS_OK = 0,
  LG_STATUS_NULL_POINTER = 1,
  LG_STATUS_INVALID_INPUT = 2,
  LG_STATUS_CALIBRATION = 3,
  LG_STATUS_CONFIG = 4,
  LG_STATUS_MISSING_BASELINE = 5,
  LG_STATUS_ARTIFACT_DIGEST = 6,
  LG_STATUS_ARTIFACT_CORRUPT = 7,
  LG_STATUS_CONFIG_MISMATCH = 8,
  LG_STATUS_DEGENERATE_PARTICLES = 9,
  LG_STATUS_LIFECYCLE = 10,
  LG_STATUS_IO = 11,
  LG_STATUS_SERDE = 12,
  LG_STATUS_BUFFER_TOO_SMALL = 13,
  LG_STATUS_PANIC = 14,
} LgStatus;

// Verified codebook and reference model.
typedef struct LgArtifacts LgArtifacts;

// Append-only hash-chained audit log.
typedef struct LgAuditLog LgAuditLog;

// Online monitor for one job: window state, thresholds and strikes.
typedef struct LgMonitor LgMonitor;

typedef struct LgEstimatorConfig {
  size_t window;
  size_t stride;
  double half_life;
  double alpha;
  double lambda;
  double beta_est;
} LgEstimatorConfig;

// One interval's operational features. `queue` is 0..=3 (idle, light,
// moderate, heavy).
typedef struct LgFeatures {
  double dt;
  double b;
  uint32_t queue;
  double zeta;
} LgFeatures;

typedef struct LgEstimate {
  // 1 when this push completed a window and the fields below are set.
  uint32_t emitted;
  double value;
  double raw;
  double kl;
  double penalty;
  uint32_t clamped;
  // 0 continue, 1 warn, 2 abort.
  uint32_t decision;
} LgEstimate;

typedef struct LgBound {
  double total;
  double budget_term;
  double estimation_term;
  size_t intervals;
  uint32_t vacuous;
} LgBound;

// Per-interval payload of an audit record. `decision` is 0..=2, or 255
// in monitor-only runs.
typedef struct LgPayload {
  uint64_t interval;
  uint32_t segment;
  uint32_t backend;
  double theta;
  double delta_hat;
  uint32_t decision;
  uint32_t flags;
} LgPayload;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the calling thread's last error message, NUL-terminated, into
// `buf`. Returns the full message length excluding the terminator.
size_t lg_last_error_message(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *lg_version(void);

struct LgEstimatorConfig lg_estimator_config_default(void);

// Load and verify an artifact file against the runtime estimator config.
enum LgStatus lg_artifacts_load(const char *path,
                                const struct LgEstimatorConfig *cfg,
                                struct LgArtifacts **out_handle);

// Write the 32-byte file digest into `out_digest`.
enum LgStatus lg_artifacts_digest(const struct LgArtifacts *a, uint8_t *out_digest);

void lg_artifacts_free(struct LgArtifacts *a);

// Create a monitor for an `n`-qubit job in segment class `class`
// (0 short, 1 medium, 2 long).
enum LgStatus lg_monitor_new(const struct LgArtifacts *artifacts,
                             uint32_t n,
                             uint32_t class_,
                             double delta_budget,
                             double delta_kill,
                             uint32_t strike_limit,
                             struct LgMonitor **out_handle);

// Push one interval. `crosstalk` points to a row-major 3x3 matrix or is
// null for none. After an abort every further push fails with
// `Lifecycle`.
enum LgStatus lg_monitor_push(struct LgMonitor *m,
                              const struct LgFeatures *features,
                              const double *crosstalk,
                              struct LgEstimate *out_estimate);

void lg_monitor_free(struct LgMonitor *m);

// KL divergence in nats. `q` must be strictly positive.
enum LgStatus lg_kl_divergence(const double *p, const double *q, size_t len, double *out_kl);

// Effective sample size `1 / sum w^2` of normalised weights.
enum LgStatus lg_ess(const double *weights, size_t len, double *out_ess);

// Advantage bound over `len` admitted intervals.
enum LgStatus lg_advantage_bound(const double *budgets,
                                 const double *eps_est,
                                 size_t len,
                                 double eps_sync,
                                 struct LgBound *out_bound);

enum LgStatus lg_uniform_bound(size_t intervals,
                               double delta_budget,
                               double eps_bar,
                               double eps_sync,
                               struct LgBound *out_bound);

// Nearest-rank thresholds from baseline estimates.
enum LgStatus lg_calibrate(const double *samples,
                           size_t len,
                           double q_budget,
                           double q_kill,
                           double g_min,
                           double *out_budget,
                           double *out_kill);

// Start a log. `workload` and `artifact_digest_hex` are NUL-terminated.
enum LgStatus lg_audit_new(uint32_t n,
                           uint8_t tier,
                           uint64_t seed,
                           const char *workload,
                           double delta_budget,
                           double delta_kill,
                           const char *artifact_digest_hex,
                           struct LgAuditLog **out_handle);

enum LgStatus lg_audit_append(struct LgAuditLog *log, const struct LgPayload *payload);

// Seal the log. `outcome` 0 completed, 1 aborted; `reason` 0 none, 1 kill
// threshold, 2 strike limit, 3 environment failure. Writes the 32-byte
// attestation digest.
enum LgStatus lg_audit_finalize(struct LgAuditLog *log,
                                uint32_t outcome,
                                uint32_t reason,
                                const struct LgPayload *last,
                                uint8_t *out_digest);

// Serialise the log into `buf`. `out_len` always receives the required
// size; a short buffer yields `BufferTooSmall` without writing.
enum LgStatus lg_audit_to_bytes(const struct LgAuditLog *log,
                                uint8_t *buf,
                                size_t cap,
                                size_t *out_len);

// Verify a serialised log. `out_ok` is 1 for an intact chain; otherwise
// `out_first_bad` holds the first failing record index.
enum LgStatus lg_audit_verify_bytes(const uint8_t *bytes,
                                    size_t len,
                                    uint32_t *out_ok,
                                    uint64_t *out_first_bad);

void lg_audit_free(struct LgAuditLog *log);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEAKGUARD_H */
