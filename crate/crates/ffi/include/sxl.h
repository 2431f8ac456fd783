#ifndef SXL_H
#define SXL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every FFI call.
 */
typedef enum SxlStatus {
  SxlStatus_Ok = 0,
  /**
   * A precondition on the inputs was violated (bad argument, bad file
   * format, null pointer).
   */
  SxlStatus_InvalidArgument = 1,
  /**
   * I/O or numerical failure at runtime.
   */
  SxlStatus_RuntimeError = 2,
  /**
   * A panic crossed the FFI boundary; the handle state is unchanged.
   */
  SxlStatus_InternalError = 3,
} SxlStatus;

/**
 * Opaque single-channel grid handle.
 */
typedef struct SxlGrid SxlGrid;

/**
 * Opaque multi-channel grid stack handle.
 */
typedef struct SxlGridStack SxlGridStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message of the most recent error on this thread, or null.
 * The pointer is valid until the next failing call on the same thread.
 */
const char *sxl_last_error_message(void);

/**
 * Creates a rows x cols grid from a row-major value buffer.
 *
 * # Safety
 * `values` must point to `rows * cols` doubles; `out` must be valid.
 */
enum SxlStatus sxl_grid_create(uintptr_t rows,
                               uintptr_t cols,
                               const double *values,
                               struct SxlGrid **out);

/**
 * Releases a grid handle. Null is a no-op.
 *
 * # Safety
 * `grid` must be a pointer returned by this library, freed at most once.
 */
void sxl_grid_free(struct SxlGrid *grid);

/**
 * # Safety
 * `stack` must be a pointer returned by this library, freed at most once.
 */
void sxl_grid_stack_free(struct SxlGridStack *stack);

/**
 * Writes grid dimensions to `rows`/`cols`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SxlStatus sxl_grid_shape(const struct SxlGrid *grid, uintptr_t *rows, uintptr_t *cols);

/**
 * Copies the row-major grid values into `buffer` (length `len`).
 *
 * # Safety
 * `buffer` must point to at least `len` writable doubles.
 */
enum SxlStatus sxl_grid_values(const struct SxlGrid *grid, double *buffer, uintptr_t len);

/**
 * Reads a single-channel GRDF file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum SxlStatus sxl_grid_read(const char *path, struct SxlGrid **out);

/**
 * Writes a grid as a single-channel GRDF file.
 *
 * # Safety
 * `grid` must be a valid handle; `path` a NUL-terminated string.
 */
enum SxlStatus sxl_grid_write(const struct SxlGrid *grid, const char *path);

/**
 * Computes the local Moran's I embedding of a grid.
 *
 * # Safety
 * `grid` must be a valid handle; `out` must be valid.
 */
enum SxlStatus sxl_local_moran(const struct SxlGrid *grid, struct SxlGrid **out);

/**
 * Computes the multi-resolution Moran stack with the given level count.
 *
 * # Safety
 * `grid` must be a valid handle; `out` must be valid.
 */
enum SxlStatus sxl_multires_moran(const struct SxlGrid *grid,
                                  uintptr_t levels,
                                  struct SxlGridStack **out);

/**
 * Number of channels in a stack.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SxlStatus sxl_grid_stack_channels(const struct SxlGridStack *stack, uintptr_t *out);

/**
 * Extracts one channel of a stack as a new grid handle.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SxlStatus sxl_grid_stack_channel(const struct SxlGridStack *stack,
                                      uintptr_t index,
                                      struct SxlGrid **out);

/**
 * Doubles the grid resolution with the named baseline method
 * ("bicubic", "idw", "ok" or "uk").
 *
 * # Safety
 * `grid` and `out` must be valid; `method` a NUL-terminated string.
 */
enum SxlStatus sxl_interpolate(const struct SxlGrid *grid,
                               const char *method,
                               struct SxlGrid **out);

/**
 * Root mean squared error between two equally-shaped grids.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SxlStatus sxl_rmse(const struct SxlGrid *truth, const struct SxlGrid *pred, double *out);

/**
 * Squared MMD between two equally-sized samples of grid handles, with an
 * explicit RBF bandwidth (`bandwidth <= 0` selects the median heuristic).
 *
 * # Safety
 * `x`/`y` must point to `n` valid grid handles each; `out` must be valid.
 */
enum SxlStatus sxl_mmd2(const struct SxlGrid *const *x,
                        const struct SxlGrid *const *y,
                        uintptr_t n,
                        double bandwidth,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SXL_H */
