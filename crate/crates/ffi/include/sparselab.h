#ifndef SPARSELAB_H
#define SPARSELAB_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes of every fallible call.
 */
typedef enum sl_status {
  SL_OK = 0,
  SL_NULL_POINTER = 1,
  SL_DOMAIN = 2,
  SL_DIMENSION = 3,
  SL_IO = 4,
  SL_PARSE = 5,
  SL_CHECK_FAILED = 6,
  SL_PANIC = 7,
} sl_status;

/**
 * A function on the dyadic grid of the torus.
 */
typedef struct sl_grid sl_grid;

/**
 * A Lerner decomposition: sparse family, oscillations and median.
 */
typedef struct sl_lerner sl_lerner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sl_last_error_message(void);

/**
 * Copies `len = 2^{dim·resolution}` values (row-major) into a new grid.
 *
 * # Safety
 * `values` must point to `len` readable doubles and `out` to writable storage.
 */
enum sl_status sl_grid_new(size_t dim,
                           uint32_t resolution,
                           const double *values,
                           size_t len,
                           struct sl_grid **out_grid);

/**
 * Reads a grid from a GFN1 text file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_grid` writable.
 */
enum sl_status sl_grid_read(const char *path, struct sl_grid **out_grid);

/**
 * Releases a grid; NULL is ignored.
 *
 * # Safety
 * `grid` must come from this library and not be used afterwards.
 */
void sl_grid_free(struct sl_grid *grid);

/**
 * Number of cells of the grid, 0 for NULL.
 *
 * # Safety
 * `grid` must be NULL or a live handle.
 */
size_t sl_grid_len(const struct sl_grid *grid);

/**
 * Copies up to `cap` values into `buf`.
 *
 * # Safety
 * `buf` must hold `cap` doubles.
 */
enum sl_status sl_grid_values(const struct sl_grid *grid, double *buf, size_t cap);

/**
 * `⟨f⟩_{Q,p0}` over the cube `(level, index[0..dim])`.
 *
 * # Safety
 * `index` must hold `dim` entries, `out_value` writable.
 */
enum sl_status sl_grid_average(const struct sl_grid *grid,
                               uint32_t level,
                               const uint32_t *index,
                               double p0,
                               double *out_value);

/**
 * Dyadic `[w]_{A_p}` over cubes of level at most `maxlevel`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum sl_status sl_ap_constant(const struct sl_grid *w,
                              double p,
                              uint32_t maxlevel,
                              double *out_value);

/**
 * Dyadic `[w]_{RH_q}`; pass `INFINITY` for `q = ∞`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum sl_status sl_rh_constant(const struct sl_grid *w,
                              double q,
                              uint32_t maxlevel,
                              double *out_value);

/**
 * `‖f‖_{L^{q,∞}}`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum sl_status sl_weak_norm(const struct sl_grid *f, double q, double *out_value);

/**
 * `f*(t)`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum sl_status sl_rearrangement(const struct sl_grid *f, double t, double *out_value);

/**
 * Lerner decomposition of `f` on the cube `(level, index[0..dim])`.
 *
 * # Safety
 * `index` must hold `dim` entries, `out_dec` writable.
 */
enum sl_status sl_lerner_decompose(const struct sl_grid *f,
                                   uint32_t level,
                                   const uint32_t *index,
                                   struct sl_lerner **out_dec);

/**
 * Releases a decomposition; NULL is ignored.
 *
 * # Safety
 * `dec` must come from this library and not be used afterwards.
 */
void sl_lerner_free(struct sl_lerner *dec);

/**
 * Number of cubes in the family, 0 for NULL.
 *
 * # Safety
 * `dec` must be NULL or a live handle.
 */
size_t sl_lerner_len(const struct sl_lerner *dec);

/**
 * Median of `f` on the root cube.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum sl_status sl_lerner_median(const struct sl_lerner *dec, double *out_value);

/**
 * Cube `i` of the family: its level, `dim` indices and oscillation.
 *
 * # Safety
 * `out_index` must hold the grid dimension's number of entries.
 */
enum sl_status sl_lerner_cube(const struct sl_lerner *dec,
                              size_t i,
                              uint32_t *out_level,
                              uint32_t *out_index,
                              double *out_omega);

/**
 * Checks `|f - m| <= 2 Σ ω χ_Q` pointwise with relative tolerance `tol`;
 * a violation returns `SL_CHECK_FAILED`.
 *
 * # Safety
 * Both handles must be live.
 */
enum sl_status sl_lerner_verify(const struct sl_lerner *dec, const struct sl_grid *f, double tol);

/**
 * Periodic Hilbert transform of a 1D grid.
 *
 * # Safety
 * `out_grid` must be writable.
 */
enum sl_status sl_hilbert_transform(const struct sl_grid *f, struct sl_grid **out_grid);

/**
 * Fitted decay exponent `δ̂` of the exact Hilbert kernel at resolution `L`,
 * on rings `jmin..=jmax` of the cube `(cube_level, 0)`. `out_delta0` may be NULL.
 *
 * # Safety
 * `out_delta_hat` must be writable.
 */
enum sl_status sl_check_h2_hilbert(uint32_t resolution,
                                   double p0,
                                   uint32_t cube_level,
                                   uint32_t jmin,
                                   uint32_t jmax,
                                   double *out_delta_hat,
                                   double *out_delta0);

/**
 * `β = max(1, max_i (p_i/p0)'/p)` for exponents `p[0..m]`.
 *
 * # Safety
 * `p` must hold `m` doubles.
 */
enum sl_status sl_beta_exponent(const double *p, size_t m, double p0, double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSELAB_H */
