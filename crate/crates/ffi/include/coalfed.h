#ifndef COALFED_H
#define COALFED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CflStatus {
  CFL_STATUS_OK = 0,
  CFL_STATUS_NULL_ARGUMENT = 1,
  CFL_STATUS_INVALID_UTF8 = 2,
  CFL_STATUS_DOMAIN = 3,
  CFL_STATUS_PARSE = 4,
  CFL_STATUS_CONFIG = 5,
  CFL_STATUS_SCHEMA = 6,
  CFL_STATUS_IO = 7,
  CFL_STATUS_RUNTIME = 8,
  CFL_STATUS_PANIC = 9,
} CflStatus;

/**
 * Trained model.
 */
typedef struct CflModel CflModel;

/**
 * Parsed policy set.
 */
typedef struct CflPolicySet CflPolicySet;

/**
 * Loaded, resolved scenario.
 */
typedef struct CflScenario CflScenario;

/**
 * Library version, a static string.
 */
const char *cfl_version(void);

/**
 * Message of the last failure on this thread, or null after a success.
 * Valid until the next library call on the same thread.
 */
const char *cfl_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void cfl_string_free(char *s);

/**
 * `max(0, 1 - c0 * exp(-2 q (1 - nu)))`.
 *
 * # Safety
 * `result` must be a valid pointer.
 */
enum CflStatus cfl_precision_bound(double c0, uint64_t q, double nu, double *result);

/**
 * `max(0, 1 - c1 * exp(-q (1 - nu)))`.
 *
 * # Safety
 * `result` must be a valid pointer.
 */
enum CflStatus cfl_recall_bound(double c1, uint64_t q, double nu, double *result);

/**
 * Parses policy text, one policy per line.
 *
 * # Safety
 * `text` must be a nul-terminated string and `set` a valid pointer.
 */
enum CflStatus cfl_policy_set_parse(const char *text, struct CflPolicySet **set);

/**
 * Instantiates the guidance templates for a context. Both inputs are JSON;
 * a null `guidance_json` selects the default guidance.
 *
 * # Safety
 * String arguments must be null or nul-terminated; `set` must be valid.
 */
enum CflStatus cfl_generate_policies(const char *context_json,
                                     const char *guidance_json,
                                     struct CflPolicySet **set);

/**
 * Number of policies, 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t cfl_policy_set_len(const struct CflPolicySet *set);

/**
 * Canonical text of the set; free with [`cfl_string_free`].
 *
 * # Safety
 * `set` must be a live handle and `text_out` a valid pointer.
 */
enum CflStatus cfl_policy_set_to_text(const struct CflPolicySet *set, char **text_out);

/**
 * Evaluates the set against a JSON object of attributes and returns the
 * decision as JSON; free with [`cfl_string_free`].
 *
 * # Safety
 * `set` must be a live handle, `subject_json` nul-terminated and
 * `decision_json` a valid pointer.
 */
enum CflStatus cfl_policy_set_evaluate(const struct CflPolicySet *set,
                                       const char *subject_json,
                                       char **decision_json);

/**
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void cfl_policy_set_free(struct CflPolicySet *set);

/**
 * Loads and resolves a scenario file. Relative data paths resolve against
 * the file's directory.
 *
 * # Safety
 * `path` must be nul-terminated and `scenario` a valid pointer.
 */
enum CflStatus cfl_scenario_load(const char *path, struct CflScenario **scenario);

/**
 * Parses and resolves scenario TOML text.
 *
 * # Safety
 * `toml` must be nul-terminated and `scenario` a valid pointer.
 */
enum CflStatus cfl_scenario_from_toml(const char *toml, struct CflScenario **scenario);

/**
 * Re-seeds a scenario in place.
 *
 * # Safety
 * `scenario` must be a live handle.
 */
enum CflStatus cfl_scenario_set_seed(struct CflScenario *scenario, uint64_t seed);

/**
 * Runs the scenario, writes its artifacts under `out_dir` and returns the
 * summary (metrics and artifact paths) as JSON.
 *
 * # Safety
 * `scenario` must be a live handle, `out_dir` nul-terminated and
 * `summary_json` a valid pointer.
 */
enum CflStatus cfl_scenario_run(const struct CflScenario *scenario,
                                const char *out_dir,
                                char **summary_json);

/**
 * # Safety
 * `scenario` must be null or a handle not yet freed.
 */
void cfl_scenario_free(struct CflScenario *scenario);

/**
 * Loads a model written by the library.
 *
 * # Safety
 * `path` must be nul-terminated and `model` a valid pointer.
 */
enum CflStatus cfl_model_load(const char *path, struct CflModel **model);

/**
 * Input width the model expects.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cfl_model_input_dim(const struct CflModel *model);

/**
 * Regression output or class index for one feature row of `len` values.
 *
 * # Safety
 * `model` must be a live handle, `x` must point to `len` doubles and
 * `result` must be valid.
 */
enum CflStatus cfl_model_predict(const struct CflModel *model,
                                 const double *x,
                                 size_t len,
                                 double *result);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cfl_model_free(struct CflModel *model);

#endif  /* COALFED_H */
