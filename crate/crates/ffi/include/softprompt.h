#ifndef SOFTPROMPT_H
#define SOFTPROMPT_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_UTF8 = 2,
  SP_STATUS_IO = 3,
  SP_STATUS_FORMAT = 4,
  SP_STATUS_INVALID_ARGUMENT = 5,
  SP_STATUS_RUNTIME = 6,
  SP_STATUS_PANIC = 7,
} SpStatus;

/**
 * Frozen transformer handle.
 */
typedef struct SpModel SpModel;

/**
 * Trained prompt-encoder handle.
 */
typedef struct SpPrompt SpPrompt;

/**
 * Tokenizer handle.
 */
typedef struct SpVocab SpVocab;

typedef struct {
  size_t top_k;
  double top_p;
  double temperature;
  size_t max_new_tokens;
  uint64_t seed;
  bool use_kv_cache;
} SpGenerationConfig;

typedef struct {
  double precision;
  double recall;
  double f1;
} SpScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *sp_last_error_message(void);

/**
 * Greedy decoding settings with a 64-token budget.
 */
SpGenerationConfig sp_generation_config_default(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
SpStatus sp_vocab_load(const char *path, SpVocab **out);

/**
 * # Safety
 * `vocab` must come from [`sp_vocab_load`] and not be freed already.
 */
void sp_vocab_free(SpVocab *vocab);

/**
 * Number of token ids in the vocabulary.
 *
 * # Safety
 * `vocab` must be a live handle or NULL (which yields 0).
 */
size_t sp_vocab_size(const SpVocab *vocab);

/**
 * Encodes `text` into `ids`. `len` receives the full token count even when
 * it exceeds `capacity`; in that case nothing past `capacity` is written.
 *
 * # Safety
 * `ids` must have room for `capacity` values; `len` must be writable.
 */
SpStatus sp_vocab_encode(const SpVocab *vocab,
                         const char *text,
                         uint32_t *ids,
                         size_t capacity,
                         size_t *len);

/**
 * Loads a transformer checkpoint. The model is frozen.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
SpStatus sp_model_load(const char *path, SpModel **out);

/**
 * # Safety
 * `model` must come from [`sp_model_load`] and not be freed already.
 */
void sp_model_free(SpModel *model);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
SpStatus sp_prompt_load(const char *path, SpPrompt **out);

/**
 * # Safety
 * `prompt` must come from [`sp_prompt_load`] and not be freed already.
 */
void sp_prompt_free(SpPrompt *prompt);

/**
 * Summarizes `dialogue`. `prompt` and `config` may be NULL (bare frame,
 * default settings). The summary must be released with [`sp_string_free`].
 *
 * # Safety
 * Handles must be live; `dialogue` NUL-terminated; `out` writable.
 */
SpStatus sp_generate(const SpModel *model,
                     const SpPrompt *prompt,
                     const SpVocab *vocab,
                     const char *dialogue,
                     const SpGenerationConfig *config,
                     char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed already.
 */
void sp_string_free(char *s);

/**
 * ROUGE-N of one candidate against one reference.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` writable.
 */
SpStatus sp_rouge_n(const char *candidate, const char *reference, size_t n, SpScore *out);

/**
 * ROUGE-L of one candidate against one reference.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` writable.
 */
SpStatus sp_rouge_l(const char *candidate, const char *reference, SpScore *out);

/**
 * Corpus BLEU over `count` aligned candidate/reference pairs.
 *
 * # Safety
 * Both arrays must hold `count` NUL-terminated strings; `out` writable.
 */
SpStatus sp_bleu(const char *const *candidates,
                 const char *const *references,
                 size_t count,
                 double *out);

/**
 * Mean of the four metrics, plus BERTScore when `has_bertscore` is set.
 */
double sp_aggregate(double rouge1,
                    double rouge2,
                    double rouge_l,
                    double bleu,
                    double bertscore,
                    bool has_bertscore);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTPROMPT_H */
