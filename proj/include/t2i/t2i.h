#ifndef T2I_T2I_H
#define T2I_T2I_H

/* C interface of the t2i library. Every call that can fail returns a
 * t2i_status; on failure t2i_last_error() holds a one-line cause for the
 * calling thread. Handles are opaque and owned by the caller. */

#include <stddef.h>

#if defined(_WIN32)
#define T2I_API __declspec(dllexport)
#else
#define T2I_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum t2i_status {
  T2I_OK = 0,
  T2I_ERR_INTERNAL = 1,
  T2I_ERR_CONFIG = 2,  /* config, dimension and contract errors */
  T2I_ERR_DATA = 3,    /* data, io, checkpoint format/version/name errors */
  T2I_ERR_NUMERIC = 4
} t2i_status;

typedef struct t2i_run_config t2i_run_config;
typedef struct t2i_model t2i_model;

typedef struct t2i_model_info {
  size_t image_size;
  size_t in_channels;
  size_t out_channels;
  size_t parameter_count; /* trainable scalars */
  int segmentation;       /* 1 segmentation, 0 regression */
} t2i_model_info;

T2I_API const char* t2i_version(void);
T2I_API const char* t2i_last_error(void);
/* "config", "dimension", "data", "numeric", "format", "version",
 * "name_mismatch", "contract", "io", "internal" or "" after success. */
T2I_API const char* t2i_last_error_kind(void);
/* Text produced by the last successful command (report table, summary). */
T2I_API const char* t2i_last_summary(void);
/* 0 debug, 1 info, 2 warning, 3 error, 4 off. */
T2I_API void t2i_set_log_level(int level);

T2I_API t2i_status t2i_run_config_new(t2i_run_config** out);
T2I_API void t2i_run_config_free(t2i_run_config* config);
/* Applies a key=value file on top of the current values. */
T2I_API t2i_status t2i_run_config_load(t2i_run_config* config, const char* path);
T2I_API t2i_status t2i_run_config_set(t2i_run_config* config, const char* key, const char* value);
/* Copies the value (NUL-terminated) into buf when it fits; *length gets
 * the value length without the NUL. */
T2I_API t2i_status t2i_run_config_get(const t2i_run_config* config, const char* key, char* buf, size_t capacity,
                                      size_t* length);
T2I_API t2i_status t2i_run_config_text(const t2i_run_config* config, char* buf, size_t capacity, size_t* length);

T2I_API t2i_status t2i_train(const t2i_run_config* config);
T2I_API t2i_status t2i_eval(const t2i_run_config* config);
T2I_API t2i_status t2i_compare(const t2i_run_config* config);
T2I_API t2i_status t2i_infer(const char* checkpoint, const char* image_in, const char* image_out);

/* Builds an untrained model from the config's model keys. */
T2I_API t2i_status t2i_model_new(const t2i_run_config* config, t2i_model** out);
T2I_API t2i_status t2i_model_load(const char* path, t2i_model** out);
T2I_API t2i_status t2i_model_save(const t2i_model* model, const char* path);
T2I_API void t2i_model_free(t2i_model* model);
T2I_API t2i_status t2i_model_info_get(const t2i_model* model, t2i_model_info* out);
T2I_API t2i_status t2i_model_architecture(const t2i_model* model, char* buf, size_t capacity, size_t* length);
/* Eval-mode forward. input is [batch, S, S, in_channels] NHWC in [-1,1];
 * output must hold batch * S * S * out_channels values. */
T2I_API t2i_status t2i_model_forward(const t2i_model* model, const double* input, size_t batch, double* output,
                                     size_t output_length);

#ifdef __cplusplus
}
#endif

#endif
