#ifndef SADDLE_MILP_H
#define SADDLE_MILP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_POINTER = 1,
  SM_STATUS_INVALID_UTF8 = 2,
  SM_STATUS_INVALID_JSON = 3,
  SM_STATUS_INVALID_INPUT = 4,
  SM_STATUS_RUNTIME = 5,
  SM_STATUS_BUFFER_TOO_SMALL = 6,
  SM_STATUS_PANIC = 7,
} SmStatus;

/**
 * A mixed-integer instance together with its Slater point.
 */
typedef struct SmInstance SmInstance;

/**
 * Outcome of one solve.
 */
typedef struct SmResult SmResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none.
 * Valid until the next call into this library from the same thread.
 */
const char *sm_last_error(void);

/**
 * Parses an instance document. `slater_point` must be present.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SmStatus sm_instance_from_json(const char *json, struct SmInstance **out);

/**
 * Draws a random instance; `config_json` may be null for the desk profile.
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `out` must be valid.
 */
enum SmStatus sm_instance_generate(const char *config_json, uint64_t seed, struct SmInstance **out);

/**
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum SmStatus sm_instance_to_json(const struct SmInstance *inst, char **out);

/**
 * Number of variables, or 0 for a null handle.
 *
 * # Safety
 * `inst` must be null or a live handle.
 */
size_t sm_instance_dim(const struct SmInstance *inst);

/**
 * # Safety
 * `inst` must be null or a handle not yet freed.
 */
void sm_instance_free(struct SmInstance *inst);

/**
 * Runs the asynchronous solver and rounds its output.
 * `config_json` may be null for the desk profile.
 *
 * # Safety
 * `inst` must be a live handle, `config_json` null or NUL-terminated and
 * `out` a valid pointer.
 */
enum SmStatus sm_solve(const struct SmInstance *inst,
                       const char *config_json,
                       uint64_t seed,
                       struct SmResult **out);

/**
 * Summary of a solve as JSON.
 *
 * # Safety
 * `res` must be a live handle and `out` a valid pointer.
 */
enum SmStatus sm_result_to_json(const struct SmResult *res, char **out);

/**
 * Copies the rounded solution into `buf`. `len` must be at least the
 * instance dimension; `written` (optional) receives the dimension.
 *
 * # Safety
 * `res` must be a live handle and `buf` valid for `len` doubles.
 */
enum SmStatus sm_result_solution(const struct SmResult *res,
                                 double *buf,
                                 size_t len,
                                 size_t *written);

/**
 * Cost of the rounded solution and whether it satisfies every constraint.
 *
 * # Safety
 * `res` must be a live handle; `cost` and `feasible` valid pointers.
 */
enum SmStatus sm_result_cost(const struct SmResult *res, double *cost, bool *feasible);

/**
 * # Safety
 * `res` must be null or a handle not yet freed.
 */
void sm_result_free(struct SmResult *res);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void sm_string_free(char *s);

const char *sm_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SADDLE_MILP_H */
