/*
 * C interface to the Dite-HRNet model library. All functions return
 * dite_status; on failure dite_last_error() gives a thread-local message.
 * Handles are opaque and freed with their matching *_free function; strings
 * returned through char** are freed with dite_string_free.
 */
#ifndef DITEHRNET_H
#define DITEHRNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dite_status {
    DITE_OK = 0,
    DITE_ERR_INVALID_ARG = 1,
    DITE_ERR_SHAPE = 2,
    DITE_ERR_IO = 3,
    DITE_ERR_CONFIG = 4,
    DITE_ERR_INTERNAL = 5
} dite_status;

typedef struct dite_config dite_config;
typedef struct dite_model dite_model;
typedef struct dite_tensor dite_tensor;

typedef struct dite_keypoint {
    double x;
    double y;
    double score;
    int flat_channel; /* nonzero: all-constant heatmap, center returned */
} dite_keypoint;

const char* dite_version(void);
const char* dite_last_error(void);
void dite_string_free(char* s);

/* ---- configuration ---- */

/* variant is 18 or 30 */
dite_status dite_config_variant(int variant, dite_config** out);
dite_status dite_config_from_json(const char* json_text, dite_config** out);
dite_status dite_config_from_file(const char* path, dite_config** out);
dite_status dite_config_to_json(const dite_config* cfg, char** json_out);
void dite_config_free(dite_config* cfg);

/* ---- tensors (batch, channels, height, width; float32) ---- */

dite_status dite_tensor_create(const int64_t shape[4], const float* data, dite_tensor** out);
/* fixture file format: 4 little-endian uint32 dims then raw element data */
dite_status dite_tensor_read(const char* path, dite_tensor** out);
dite_status dite_tensor_write(const dite_tensor* t, const char* path);
void dite_tensor_shape(const dite_tensor* t, int64_t shape_out[4]);
const float* dite_tensor_data(const dite_tensor* t);
void dite_tensor_free(dite_tensor* t);

/* ---- model ---- */

dite_status dite_model_build(const dite_config* cfg, uint64_t seed, dite_model** out);
void dite_model_free(dite_model* m);
int64_t dite_model_param_count(dite_model* m);
dite_status dite_model_save_weights(dite_model* m, const char* path);
dite_status dite_model_load_weights(dite_model* m, const char* path);
/* features_out and heatmaps_out may each be NULL when not needed */
dite_status dite_model_forward(dite_model* m, const dite_tensor* input,
                               dite_tensor** features_out, dite_tensor** heatmaps_out);
dite_status dite_model_summary_json(dite_model* m, char** json_out);

/* quarter-offset heatmap decoding into caller-provided storage */
dite_status dite_decode_heatmaps(const dite_tensor* heatmaps, int64_t sample, int64_t input_h,
                                 int64_t input_w, dite_keypoint* out, size_t capacity,
                                 size_t* count_out);

/* ---- analysis ---- */

dite_status dite_analyze_json(dite_model* m, int input_h, int input_w, char** json_out);
dite_status dite_analyze_csv(dite_model* m, int input_h, int input_w, char** csv_out);
/* 16-cell hyper-parameter grid on the given base config */
dite_status dite_sweep_json(const dite_config* base, int input_h, int input_w, char** json_out);
dite_status dite_sweep_csv(const dite_config* base, int input_h, int input_w, char** csv_out);
/* all_pass_out set to 1 when every expectation row is met */
dite_status dite_verify_expectations(const char* csv_path, char** json_out, int* all_pass_out);
dite_status dite_gradcheck(uint64_t seed, double tol_ops, double tol_end_to_end, char** json_out,
                           int* all_pass_out);

#ifdef __cplusplus
}
#endif

#endif /* DITEHRNET_H */
