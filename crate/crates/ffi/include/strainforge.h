#ifndef STRAINFORGE_H
#define STRAINFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. Nonzero codes match the command line exit codes where one
 exists.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_VALIDATION = 2,
  SF_STATUS_NUMERIC = 3,
  SF_STATUS_IO = 4,
  /*
   A null pointer or a string that is not UTF-8.
   */
  SF_STATUS_INVALID_ARGUMENT = 5,
  /*
   The library panicked; the handle arguments should not be reused.
   */
  SF_STATUS_INTERNAL = 6,
} SfStatus;

/*
 Pipeline settings.
 */
typedef struct SfConfig SfConfig;

/*
 Outcome of a pipeline run.
 */
typedef struct SfReport SfReport;

/*
 A loaded study bundle.
 */
typedef struct SfStudy SfStudy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next call into the library on the same thread.
 */
const char *sf_last_error(void);

/*
 Library version as a static string.
 */
const char *sf_version(void);

/*
 Frees a string returned by this library.

 # Safety
 `s` is null or was returned by a `sf_*` function documented as
 returning an owned string, and has not been freed.
 */
void sf_string_free(char *s);

/*
 Loads `<bundle_dir>/study.json`.

 # Safety
 `bundle_dir` is a NUL-terminated string; `out` is a valid pointer.
 */
enum SfStatus sf_study_load(const char *bundle_dir, struct SfStudy **out);

/*
 Number of views, or 0 for a null handle.

 # Safety
 `study` is null or a live handle from [`sf_study_load`].
 */
size_t sf_study_view_count(const struct SfStudy *study);

/*
 Number of frames, or 0 for a null handle.

 # Safety
 `study` is null or a live handle from [`sf_study_load`].
 */
size_t sf_study_frame_count(const struct SfStudy *study);

/*
 # Safety
 `study` is null or a live handle from [`sf_study_load`].
 */
void sf_study_free(struct SfStudy *study);

/*
 Default settings.
 */
struct SfConfig *sf_config_new(void);

/*
 Parses a JSON config; unknown keys are rejected.

 # Safety
 `json` is a NUL-terminated string; `out` is a valid pointer.
 */
enum SfStatus sf_config_from_json(const char *json, struct SfConfig **out);

/*
 The config as JSON (owned string, free with [`sf_string_free`]).

 # Safety
 `config` is null or a live config handle.
 */
char *sf_config_to_json(const struct SfConfig *config);

/*
 # Safety
 `config` is null or a live config handle.
 */
void sf_config_free(struct SfConfig *config);

/*
 Writes a phantom bundle for preset `incompressible`, `contractile`,
 `rigid` or `translate` with the default layout.

 # Safety
 `preset` and `out_dir` are NUL-terminated strings.
 */
enum SfStatus sf_phantom_write(const char *preset, const char *out_dir);

/*
 Runs every stage from `bundle_dir` into `out_dir`. `config` may be null
 for the defaults merged with the bundle's own `pipeline.json`.

 # Safety
 `config` is null or a live config handle; the strings are
 NUL-terminated; `out` is a valid pointer.
 */
enum SfStatus sf_run(const struct SfConfig *config,
                     const char *bundle_dir,
                     const char *out_dir,
                     struct SfReport **out);

/*
 Global peak strains `[Err, Ecc, Ell]`.

 # Safety
 `report` is a live report handle; `peaks` points to 3 writable doubles.
 */
enum SfStatus sf_report_global_peaks(const struct SfReport *report, double *peaks);

/*
 Fraction of mesh nodes whose motion was extrapolated, or NaN for a null
 handle.

 # Safety
 `report` is null or a live report handle.
 */
double sf_report_extrapolated_fraction(const struct SfReport *report);

/*
 1 if quality control marked the run degraded, 0 if not, -1 for null.

 # Safety
 `report` is null or a live report handle.
 */
int32_t sf_report_is_degraded(const struct SfReport *report);

/*
 The report as JSON (owned string, free with [`sf_string_free`]).

 # Safety
 `report` is null or a live report handle.
 */
char *sf_report_to_json(const struct SfReport *report);

/*
 # Safety
 `report` is null or a live report handle.
 */
void sf_report_free(struct SfReport *report);

/*
 Green-Lagrange strain `E = (F^T F - I) / 2`.

 # Safety
 `f` points to 9 readable and `e` to 9 writable doubles.
 */
enum SfStatus sf_green_lagrange(const double *f, double *e);

/*
 Mean and population SD over `n` global-peak triples `[Err, Ecc, Ell]`.

 # Safety
 `peaks` points to `3 * n` readable doubles; `mean` and `sd` to 3
 writable doubles each.
 */
enum SfStatus sf_cohort_summary(const double *peaks, size_t n, double *mean, double *sd);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRAINFORGE_H */
