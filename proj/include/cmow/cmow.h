#ifndef CMOW_CMOW_H
#define CMOW_CMOW_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CMOW_API __declspec(dllexport)
#else
#define CMOW_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes. */
typedef enum cmow_status {
  CMOW_OK = 0,
  CMOW_ERR_STRUCTURAL = 1, /* shape or dimension mismatch, bad id */
  CMOW_ERR_CONFIG = 2,     /* bad key, value or missing file */
  CMOW_ERR_DATA = 3,       /* malformed or inconsistent input data */
  CMOW_ERR_NUMERICAL = 4,  /* non-finite loss or gradient */
  CMOW_ERR_INTERNAL = 5
} cmow_status;

/* Message of the last failing call on this thread; "" after a success. */
CMOW_API const char* cmow_last_error(void);
CMOW_API const char* cmow_version(void);

/* Strings handed out by the library are released with this. */
CMOW_API void cmow_string_free(char* s);

/* ---- run configuration ------------------------------------------------ */

typedef struct cmow_config cmow_config;

/* A configuration holding every default. */
CMOW_API cmow_status cmow_config_new(cmow_config** out);
CMOW_API void cmow_config_free(cmow_config* config);
/* Merges a `key = value` file over the current values. */
CMOW_API cmow_status cmow_config_load(cmow_config* config, const char* path);
CMOW_API cmow_status cmow_config_set(cmow_config* config, const char* key, const char* value);
/* "key=value" */
CMOW_API cmow_status cmow_config_assign(cmow_config* config, const char* assignment);
/* *value stays valid until the key is set again or the config is freed. */
CMOW_API cmow_status cmow_config_get(const cmow_config* config, const char* key, const char** value);
/* Every key with its resolved value, one `key = value` per line. */
CMOW_API cmow_status cmow_config_resolved(const cmow_config* config, char** text);

/* ---- commands ----------------------------------------------------------- */

/* command: "pretrain", "finetune", "encode", "eval", "bench" or
 * "inspect-checkpoint". On success *summary_json (if non-null) receives a
 * JSON object describing the run. */
CMOW_API cmow_status cmow_run(const cmow_config* config, const char* command, char** summary_json);

/* ---- vocabulary and tokenizer ------------------------------------------- */

typedef struct cmow_vocab cmow_vocab;

CMOW_API cmow_status cmow_vocab_load(const char* path, cmow_vocab** out);
CMOW_API void cmow_vocab_free(cmow_vocab* vocab);
CMOW_API size_t cmow_vocab_size(const cmow_vocab* vocab);

/* WordPiece ids of `text` without [CLS]/[SEP]. Writes up to `capacity` ids
 * and stores the full count in *count, so a call with capacity 0 sizes the
 * buffer. */
CMOW_API cmow_status cmow_tokenize(const cmow_vocab* vocab, const char* text, int32_t* ids, size_t capacity,
                                   size_t* count);

/* ---- models -------------------------------------------------------------- */

typedef struct cmow_model cmow_model;

typedef struct cmow_model_info {
  uint32_t kind; /* 0 cmow-uni, 1 cmow-bidi, 2 cbow, 3 hybrid-uni, 4 hybrid-bidi */
  size_t d;
  size_t d_vec;
  size_t n_vocab;
  size_t pooled_dim;
  size_t per_token_dim;
  size_t embedding_parameters;
  size_t total_parameters;
  int has_mlm_head;
  int has_classifier;
  size_t classes;
} cmow_model_info;

CMOW_API cmow_status cmow_model_load(const char* checkpoint, cmow_model** out);
CMOW_API void cmow_model_free(cmow_model* model);
CMOW_API cmow_status cmow_model_info_get(const cmow_model* model, cmow_model_info* info);

/* Pooled encoding of one id sequence; out_len must be pooled_dim. */
CMOW_API cmow_status cmow_encode_pooled(const cmow_model* model, const int32_t* ids, size_t n, float* out,
                                        size_t out_len);
/* Per-token encodings, n rows of per_token_dim; out_len must be n * per_token_dim. */
CMOW_API cmow_status cmow_encode_per_token(const cmow_model* model, const int32_t* ids, size_t n, float* out,
                                           size_t out_len);
/* Classifier logits for sentence a, or the pair (a, b) when b is non-null,
 * tokenized and encoded as the checkpoint was trained. */
CMOW_API cmow_status cmow_classify(const cmow_model* model, const cmow_vocab* vocab, const char* a, const char* b,
                                   float* logits, size_t classes);

/* ---- teacher records ----------------------------------------------------- */

typedef struct cmow_records cmow_records;

typedef struct cmow_records_header {
  uint32_t kind; /* 0 mlm, 1 task */
  uint32_t n_labels;
  uint32_t top_k;
  uint64_t mask_seed;
  float mask_fraction;
  float temperature;
  size_t count;
} cmow_records_header;

/* kind: 0 mlm, 1 task. */
CMOW_API cmow_status cmow_records_load(const char* path, uint32_t kind, cmow_records** out);
CMOW_API void cmow_records_free(cmow_records* records);
CMOW_API cmow_status cmow_records_header_get(const cmow_records* records, cmow_records_header* header);
/* Support size of the record at (example, position); CMOW_ERR_DATA when
 * absent. Task records use position UINT64_MAX. Up to `capacity` ids and
 * renormalized probabilities are copied out. */
CMOW_API cmow_status cmow_records_lookup(const cmow_records* records, uint64_t example, uint64_t position,
                                         uint32_t* support, float* probs, size_t capacity, size_t* k);

#ifdef __cplusplus
}
#endif

#endif
