#ifndef CDMI_H
#define CDMI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. `CDMI_OK` is zero; everything else is a failure.
typedef enum CdmiStatus {
  CDMI_OK = 0,
  CDMI_NULL_POINTER = 1,
  CDMI_INVALID_ARGUMENT = 2,
  CDMI_IO_ERROR = 3,
  CDMI_FORMAT_ERROR = 4,
  CDMI_DATA_ERROR = 5,
  CDMI_NUMERICAL_ERROR = 6,
  CDMI_WRONG_TASK = 7,
  CDMI_BUFFER_TOO_SMALL = 8,
  CDMI_PANIC = 9,
} CdmiStatus;

// Opaque trained model checkpoint.
typedef struct CdmiCheckpoint CdmiCheckpoint;

// Opaque set of documents.
typedef struct CdmiCorpus CdmiCorpus;

// The four one-shot similarity scores averaged over a set of fields.
typedef struct CdmiScores {
  double pr;
  double hd;
  double ld;
  double jwd;
} CdmiScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *cdmi_last_error(void);

// Normalized Levenshtein similarity of two token sequences.
//
// # Safety
// `a` and `b` must point to `a_len` and `b_len` readable tokens (or be
// NULL with length 0); `out` must be writable.
enum CdmiStatus cdmi_levenshtein_norm(const uint32_t *a,
                                      size_t a_len,
                                      const uint32_t *b,
                                      size_t b_len,
                                      double *out);

// Normalized Jaro-Winkler similarity of two token sequences.
//
// # Safety
// Same contract as [`cdmi_levenshtein_norm`].
enum CdmiStatus cdmi_jaro_winkler_norm(const uint32_t *a,
                                       size_t a_len,
                                       const uint32_t *b,
                                       size_t b_len,
                                       double *out);

// Improvement factor of attack scores over baseline scores.
//
// # Safety
// `attack`, `baseline` and `out` must be valid pointers.
enum CdmiStatus cdmi_improvement_factor(const struct CdmiScores *attack,
                                        const struct CdmiScores *baseline,
                                        double epsilon,
                                        double *out);

// Loads a JSONL corpus file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable. On
// success `*out` owns a handle to release with [`cdmi_corpus_free`].
enum CdmiStatus cdmi_corpus_load(const char *path_ptr, struct CdmiCorpus **out);

// Number of documents in a corpus, 0 for NULL.
//
// # Safety
// `corpus` must be NULL or a live handle.
size_t cdmi_corpus_len(const struct CdmiCorpus *corpus);

// Number of annotated fields in document `doc`.
//
// # Safety
// `corpus` must be a live handle and `out` writable.
enum CdmiStatus cdmi_corpus_field_count(const struct CdmiCorpus *corpus, size_t doc, size_t *out);

// # Safety
// `corpus` must be NULL or a handle not yet freed.
void cdmi_corpus_free(struct CdmiCorpus *corpus);

// Loads a checkpoint file.
//
// # Safety
// As for [`cdmi_corpus_load`]; release with [`cdmi_checkpoint_free`].
enum CdmiStatus cdmi_checkpoint_load(const char *path_ptr, struct CdmiCheckpoint **out);

// Training epoch of a checkpoint, 0 for NULL.
//
// # Safety
// `ckpt` must be NULL or a live handle.
size_t cdmi_checkpoint_epoch(const struct CdmiCheckpoint *ckpt);

// Validation accuracy recorded with a checkpoint, NaN for NULL.
//
// # Safety
// `ckpt` must be NULL or a live handle.
double cdmi_checkpoint_val_accuracy(const struct CdmiCheckpoint *ckpt);

// # Safety
// `ckpt` must be NULL or a handle not yet freed.
void cdmi_checkpoint_free(struct CdmiCheckpoint *ckpt);

// Scrubs field `field` of document `doc` and reconstructs it with the
// default attack settings and the given seed. `baseline` selects the
// public-model-only reconstruction. Writes the field length to `out_len`
// and, when `buf_len` is large enough, the tokens to `buf`; otherwise
// returns `CDMI_BUFFER_TOO_SMALL`.
//
// # Safety
// Handles must be live; `buf` must hold `buf_len` tokens (or be NULL with
// `buf_len` 0); `out_len` must be writable.
enum CdmiStatus cdmi_reconstruct_field(const struct CdmiCheckpoint *target,
                                       const struct CdmiCheckpoint *public_,
                                       const struct CdmiCorpus *corpus,
                                       size_t doc,
                                       size_t field,
                                       uint64_t seed,
                                       bool baseline,
                                       uint32_t *buf,
                                       size_t buf_len,
                                       size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CDMI_H */
