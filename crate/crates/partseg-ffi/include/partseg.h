#ifndef PARTSEG_H
#define PARTSEG_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum PartsegStatus {
  /**
   * Success.
   */
  PARTSEG_STATUS_OK = 0,
  /**
   * Invalid configuration or argument values.
   */
  PARTSEG_STATUS_CONFIG_ERROR = 2,
  /**
   * Runtime failure (I/O, numerics, internal invariant).
   */
  PARTSEG_STATUS_RUNTIME_ERROR = 3,
  /**
   * A required pointer argument was null.
   */
  PARTSEG_STATUS_NULL_ARGUMENT = 4,
} PartsegStatus;

/**
 * Opaque dataset handle.
 */
typedef struct PartsegDataset PartsegDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message on this thread into `buf`
 * (NUL-terminated, truncated to `len`). Returns the full message length.
 */
uintptr_t partseg_last_error_message(char *buf, uintptr_t len);

/**
 * Generates a synthetic dataset with planted observer styles.
 *
 * # Safety
 * `out` must point to a writable `PartsegDataset*` slot.
 */
enum PartsegStatus partseg_dataset_generate(uintptr_t n_scans,
                                            uintptr_t image_size,
                                            uint32_t n_styles,
                                            uint64_t seed,
                                            struct PartsegDataset **out);

/**
 * Loads a dataset directory (manifest.json plus raster files).
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` a writable slot.
 */
enum PartsegStatus partseg_dataset_load(const char *dir, struct PartsegDataset **out);

/**
 * Writes a dataset directory.
 *
 * # Safety
 * `handle` must come from this library; `dir` must be NUL-terminated.
 */
enum PartsegStatus partseg_dataset_save(const struct PartsegDataset *handle, const char *dir);

/**
 * Number of scans in the dataset, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live handle from this library.
 */
uintptr_t partseg_dataset_len(const struct PartsegDataset *handle);

/**
 * Frees a dataset handle; a null handle is a no-op.
 *
 * # Safety
 * `handle` must be null or an unfreed handle from this library.
 */
void partseg_dataset_free(struct PartsegDataset *handle);

/**
 * Dice overlap of two row-major binary masks of shape `h` x `w`.
 *
 * # Safety
 * `pred` and `reference` must each point to `h * w` bytes; `out` must be
 * a writable double.
 */
enum PartsegStatus partseg_dice(const uint8_t *pred,
                                const uint8_t *reference,
                                uintptr_t h,
                                uintptr_t w,
                                double *out);

/**
 * Symmetric surface Dice at tolerance `tau_mm`, with pixel spacing
 * (`spacing_h`, `spacing_w`) in millimetres.
 *
 * # Safety
 * Same pointer contract as `partseg_dice`.
 */
enum PartsegStatus partseg_surface_dice(const uint8_t *pred,
                                        const uint8_t *reference,
                                        uintptr_t h,
                                        uintptr_t w,
                                        double spacing_h,
                                        double spacing_w,
                                        double tau_mm,
                                        double *out);

/**
 * Mean of Dice and surface Dice at the 2mm combined tolerance.
 *
 * # Safety
 * Same pointer contract as `partseg_dice`.
 */
enum PartsegStatus partseg_combined_score(const uint8_t *pred,
                                          const uint8_t *reference,
                                          uintptr_t h,
                                          uintptr_t w,
                                          double spacing_h,
                                          double spacing_w,
                                          double *out);

/**
 * Relabels a partition genotype to first-occurrence canonical form,
 * writing `n` labels into `out_genes` (may alias `genes`).
 *
 * # Safety
 * `genes` and `out_genes` must each point to `n` u32 values.
 */
enum PartsegStatus partseg_canonicalize(const uint32_t *genes,
                                        uintptr_t n,
                                        uint32_t alpha,
                                        uint32_t *out_genes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARTSEG_H */
