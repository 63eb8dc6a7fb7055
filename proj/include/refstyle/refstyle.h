#ifndef REFSTYLE_H
#define REFSTYLE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RS_API __declspec(dllexport)
#else
#define RS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rs_status {
  RS_OK = 0,
  RS_ERR_INVALID_ARGUMENT = 1,
  RS_ERR_CONFIG = 2,
  RS_ERR_IO = 3,
  RS_ERR_SHAPE = 4,
  RS_ERR_NUMERIC = 5,
  RS_ERR_STATE = 6,
  RS_ERR_INTERNAL = 7
} rs_status;

typedef struct rs_config rs_config;
typedef struct rs_trainer rs_trainer;
typedef struct rs_model rs_model;

typedef struct rs_losses {
  int64_t step;
  double adv_d;
  double adv_g;
  double ct_d;
  double ct_g;
  double cyc;
  double r1;      /* only meaningful when has_r1 != 0 */
  int has_r1;
  int ct_active;  /* contrastive terms counted in the totals */
} rs_losses;

/* Message of the last failed call on this thread; "" after a success. */
RS_API const char* rs_last_error(void);
RS_API const char* rs_status_name(rs_status status);
RS_API const char* rs_version(void);

/* String outputs follow one convention: the text plus a terminating NUL is
   copied when it fits in `capacity`; `*needed` (if non-null) always receives
   the full size including the NUL. A too-small buffer is not an error. */

RS_API rs_status rs_config_default(rs_config** out);
RS_API rs_status rs_config_load(const char* path, rs_config** out);
RS_API rs_status rs_config_parse(const char* text, rs_config** out);
RS_API rs_status rs_config_set(rs_config* config, const char* key, const char* value);
/* "key=value" */
RS_API rs_status rs_config_override(rs_config* config, const char* assignment);
RS_API rs_status rs_config_get(const rs_config* config, const char* key, char* buffer, size_t capacity,
                               size_t* needed);
RS_API rs_status rs_config_serialize(const rs_config* config, char* buffer, size_t capacity, size_t* needed);
RS_API rs_status rs_config_save(const rs_config* config, const char* path);
RS_API void rs_config_free(rs_config* config);

RS_API rs_status rs_trainer_create(const rs_config* config, rs_trainer** out);
RS_API rs_status rs_trainer_resume(const char* checkpoint, rs_trainer** out);
/* Loads the configured dataset and trains up to train.total_iters, writing
   checkpoints/, samples/, logs/ and config.cfg below out_dir. */
RS_API rs_status rs_trainer_fit(rs_trainer* trainer, const char* out_dir);
/* One step on n images of (height, width, channels) float pixels in [-1, 1],
   interleaved HWC, images back to back. */
RS_API rs_status rs_trainer_step(rs_trainer* trainer, const float* images, int n, int height, int width,
                                 int channels, rs_losses* losses);
/* Copy of the trainer's run configuration; free with rs_config_free. */
RS_API rs_status rs_trainer_config(const rs_trainer* trainer, rs_config** out);
RS_API rs_status rs_trainer_get_step(const rs_trainer* trainer, int64_t* step);
RS_API rs_status rs_trainer_save(const rs_trainer* trainer, const char* path);
RS_API void rs_trainer_free(rs_trainer* trainer);

RS_API rs_status rs_model_load(const char* checkpoint, rs_model** out);
RS_API rs_status rs_model_from_trainer(const rs_trainer* trainer, rs_model** out);
RS_API rs_status rs_model_info(const rs_model* model, int* resolution, int* channels, int* style_dim);
/* codes receives n * style_dim floats. */
RS_API rs_status rs_model_style(rs_model* model, const float* images, int n, float* codes);
/* outputs[i] = G(inputs[i], E(references[i])); HWC float buffers of n images
   at the model resolution. */
RS_API rs_status rs_model_translate(rs_model* model, const float* inputs, const float* references, int n,
                                    float* outputs);
RS_API void rs_model_free(rs_model* model);

/* Writes the configured synthetic dataset as PNG files plus labels.csv. */
RS_API rs_status rs_make_synthetic(const rs_config* config, const char* out_dir, int64_t* count);
/* Every (input, reference) pair: out_dir/outputs/<input>__<reference>.png and
   out_dir/grid.png. */
RS_API rs_status rs_translate_dirs(rs_model* model, const char* input_dir, const char* reference_dir,
                                   const char* out_dir, int64_t* outputs);
/* Image row: input, interpolated frames, reference. */
RS_API rs_status rs_interpolate(rs_model* model, const char* input_path, const char* reference_path, int steps,
                                const char* out_path);
/* Query followed by its k nearest corpus images in style space; the ranked
   listing (rank,index,similarity,file) is returned as text. */
RS_API rs_status rs_search(rs_model* model, const char* query_path, const char* corpus_dir, int k,
                           const char* grid_path, char* report, size_t capacity, size_t* needed);
/* Translation metrics on eval.test_root; writes metrics/report.txt and
   metrics/metrics.kv below out_dir when out_dir is non-empty. The text report
   is returned in `report`. */
RS_API rs_status rs_evaluate(rs_model* model, const rs_config* config, const char* out_dir, char* report,
                             size_t capacity, size_t* needed);

#ifdef __cplusplus
}
#endif

#endif
