#ifndef FUNNEL_H
#define FUNNEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FT_MODE_FINETUNE 0

#define FT_MODE_PRETRAIN 1

#define FT_ATTN_NAIVE 0

#define FT_ATTN_GATHER 1

#define FT_ATTN_FACTORIZED 2

/**
 * Result of every fallible call.
 */
typedef enum FtStatus {
  FT_STATUS_OK = 0,
  FT_STATUS_NULL_POINTER = 1,
  FT_STATUS_INVALID_UTF8 = 2,
  FT_STATUS_INVALID_ARGUMENT = 3,
  FT_STATUS_BUFFER_TOO_SMALL = 4,
  FT_STATUS_PARSE = 5,
  FT_STATUS_VALIDATION = 6,
  FT_STATUS_CONFIG = 7,
  FT_STATUS_IO = 8,
  FT_STATUS_CHECKPOINT = 9,
  FT_STATUS_SHAPE = 10,
  FT_STATUS_CONTRACT = 11,
  FT_STATUS_DIMENSION = 12,
  FT_STATUS_NUMERIC = 13,
  FT_STATUS_DIVERGED = 14,
  FT_STATUS_PANIC = 15,
} FtStatus;

/**
 * A parsed layout string such as `B6-6-6H768D2`.
 */
typedef struct FtLayout FtLayout;

/**
 * A config plus loaded parameters.
 */
typedef struct FtModel FtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ft_last_error(void);

/**
 * Parse `text` into a new layout handle written to `*out`.
 *
 * # Safety
 * `text` must be null or NUL-terminated; `out` must be null or writable.
 */
enum FtStatus ft_layout_parse(const char *text, struct FtLayout **out);

/**
 * Release a layout. Null is ignored.
 *
 * # Safety
 * `layout` must come from [`ft_layout_parse`] and not be freed twice.
 */
void ft_layout_free(struct FtLayout *layout);

/**
 * Canonical text of `layout`, NUL-terminated, into `buf` of `cap` bytes.
 * `*needed` receives the required size including the NUL, so a first call
 * with `cap = 0` sizes the buffer.
 *
 * # Safety
 * `buf` must be null or hold `cap` writable bytes.
 */
enum FtStatus ft_layout_format(const struct FtLayout *layout,
                               char *buf,
                               size_t cap,
                               size_t *needed);

/**
 * Number of blocks and hidden size.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum FtStatus ft_layout_shape(const struct FtLayout *layout, size_t *blocks, size_t *hidden);

/**
 * Depth in full-length layer equivalents under the linear cost model.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum FtStatus ft_effective_layers(const struct FtLayout *layout, uint32_t mode, double *out);

/**
 * Linear-model FLOPs of `layout` over `baseline` (costed without decoder).
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum FtStatus ft_flops_ratio(const struct FtLayout *layout,
                             const struct FtLayout *baseline,
                             uint32_t mode,
                             double *out);

/**
 * Total parameters with a `vocab`-entry embedding.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum FtStatus ft_param_count(const struct FtLayout *layout,
                             size_t vocab,
                             uint32_t mode,
                             uint64_t *out);

/**
 * Exact multiply-add FLOPs for one sequence of length `seq_len`.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum FtStatus ft_flops_exact(const struct FtLayout *layout,
                             size_t seq_len,
                             uint32_t mode,
                             uint32_t attn,
                             uint64_t *out);

/**
 * Load a JSON config and an FTNT checkpoint into a new model handle.
 *
 * # Safety
 * Strings must be null or NUL-terminated; `out` must be null or writable.
 */
enum FtStatus ft_model_load(const char *config_path,
                            const char *checkpoint_path,
                            struct FtModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`ft_model_load`] and not be freed twice.
 */
void ft_model_free(struct FtModel *model);

/**
 * Hidden size and the sequence length the model was trained at.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum FtStatus ft_model_dims(const struct FtModel *model, size_t *hidden, size_t *seq_len);

/**
 * CLS vector (row 0 of the last block) for token ids `ids[0..len]`; id 0
 * is padding. Writes `hidden` doubles to `out`.
 *
 * # Safety
 * `ids` must hold `len` values and `out` `cap` doubles.
 */
enum FtStatus ft_model_encode_cls(const struct FtModel *model,
                                  const uint32_t *ids,
                                  size_t len,
                                  double *out,
                                  size_t cap);

/**
 * Full-length decoder states, `len × hidden` doubles in row-major order.
 *
 * # Safety
 * `ids` must hold `len` values and `out` `cap` doubles.
 */
enum FtStatus ft_model_encode_tokens(const struct FtModel *model,
                                     const uint32_t *ids,
                                     size_t len,
                                     double *out,
                                     size_t cap);

/**
 * Largest deviation of the gather and factorized position scores from the
 * naive route over `trials` seeded random cases.
 *
 * # Safety
 * `max_dev` must be null or writable.
 */
enum FtStatus ft_verify_attention(size_t trials,
                                  size_t max_t,
                                  size_t max_d,
                                  uint64_t seed,
                                  double *max_dev);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FUNNEL_H */
