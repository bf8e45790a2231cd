/* C interface to the semicon hashing library. Every function returns a
 * semicon_status; on failure semicon_last_error() describes the problem for
 * the calling thread until its next call into the library. Handles are
 * opaque and released with the matching _free function (NULL is ignored). */
#ifndef SEMICON_H
#define SEMICON_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SEMICON_API __declspec(dllexport)
#else
#define SEMICON_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum semicon_status {
  SEMICON_OK = 0,
  SEMICON_ERR_INVALID_ARGUMENT = 1,
  SEMICON_ERR_SHAPE = 2,
  SEMICON_ERR_FORMAT = 3,
  SEMICON_ERR_IO = 4,
  SEMICON_ERR_NUMERIC = 5,
  SEMICON_ERR_CONFIG = 6,
  SEMICON_ERR_STATE = 7,
  SEMICON_ERR_MEMORY = 8,
  SEMICON_ERR_INTERNAL = 9
} semicon_status;

typedef struct semicon_config semicon_config;
typedef struct semicon_dataset semicon_dataset;
typedef struct semicon_model semicon_model;
typedef struct semicon_index semicon_index;
typedef struct semicon_eval semicon_eval;

SEMICON_API const char* semicon_last_error(void);
SEMICON_API const char* semicon_status_name(semicon_status status);

/* 0 restores the default (SEMICON_THREADS, else hardware concurrency). */
SEMICON_API semicon_status semicon_set_threads(size_t threads);

/* Run configuration: "key = value" lines. */
SEMICON_API semicon_status semicon_config_default(semicon_config** out);
SEMICON_API semicon_status semicon_config_parse(const char* text, semicon_config** out);
SEMICON_API semicon_status semicon_config_load(const char* path, semicon_config** out);
SEMICON_API semicon_status semicon_config_set_seed(semicon_config* cfg, uint64_t seed);
/* Canonical text; the returned string lives until the next call on cfg. */
SEMICON_API semicon_status semicon_config_text(semicon_config* cfg, const char** text);
SEMICON_API void semicon_config_free(semicon_config* cfg);

/* Synthetic data from the dataset keys of cfg: database and query splits. */
SEMICON_API semicon_status semicon_generate(const semicon_config* cfg, semicon_dataset** database,
                                            semicon_dataset** queries);
SEMICON_API semicon_status semicon_dataset_load(const char* path, semicon_dataset** out);
SEMICON_API semicon_status semicon_dataset_save(const semicon_dataset* data, const char* path);
SEMICON_API semicon_status semicon_dataset_size(const semicon_dataset* data, size_t* count);
SEMICON_API void semicon_dataset_free(semicon_dataset* data);

/* Called once per (iteration, epoch) during training. */
typedef void (*semicon_trace_fn)(void* user, size_t iteration, size_t epoch, double similarity,
                                 double quantization, double total);

/* Trains on `database`. `learned` (optional) receives the learned database
 * codes as an index. */
SEMICON_API semicon_status semicon_train(const semicon_config* cfg, const semicon_dataset* database,
                                         semicon_trace_fn trace, void* user, semicon_model** model,
                                         semicon_index** learned);
SEMICON_API semicon_status semicon_model_load(const char* path, semicon_model** out);
SEMICON_API semicon_status semicon_model_save(const semicon_model* model, const char* path);
SEMICON_API semicon_status semicon_model_bits(const semicon_model* model, size_t* bits);
SEMICON_API void semicon_model_free(semicon_model* model);

/* Inference-mode codes for every sample of `data`. */
SEMICON_API semicon_status semicon_encode(const semicon_model* model, const semicon_dataset* data,
                                          semicon_index** out);

SEMICON_API semicon_status semicon_index_load(const char* path, semicon_index** out);
SEMICON_API semicon_status semicon_index_save(const semicon_index* index, const char* path);
SEMICON_API semicon_status semicon_index_count(const semicon_index* index, size_t* count);
SEMICON_API semicon_status semicon_index_bits(const semicon_index* index, size_t* bits);
/* Code i as k values in {-1, +1}; `codes` holds at least k entries. */
SEMICON_API semicon_status semicon_index_code(const semicon_index* index, size_t i, int8_t* codes);
SEMICON_API void semicon_index_free(semicon_index* index);

/* Top-k database entries for query code `query_row`: ascending distance,
 * ties by ascending database position. Output arrays hold k entries. */
SEMICON_API semicon_status semicon_search(const semicon_index* db, const semicon_index* queries,
                                          size_t query_row, size_t k, size_t* indices,
                                          uint32_t* distances);

/* mAP over full Hamming rankings, relevance = equal labels. */
SEMICON_API semicon_status semicon_evaluate(const semicon_index* db, const semicon_index* queries,
                                            semicon_eval** out);
SEMICON_API double semicon_eval_map(const semicon_eval* eval);
SEMICON_API size_t semicon_eval_query_count(const semicon_eval* eval);
SEMICON_API size_t semicon_eval_skipped(const semicon_eval* eval);
/* Number of scored queries and, for entry i, its query position and AP. */
SEMICON_API size_t semicon_eval_scored(const semicon_eval* eval);
SEMICON_API semicon_status semicon_eval_entry(const semicon_eval* eval, size_t i, size_t* query,
                                              double* average_precision);
SEMICON_API void semicon_eval_free(semicon_eval* eval);

#ifdef __cplusplus
}
#endif

#endif
