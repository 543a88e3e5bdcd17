#include "ditehrnet.h"

#include <cstring>
#include <string>

#include "dite/checkpoint.hpp"
#include "dite/checks.hpp"
#include "dite/complexity.hpp"
#include "dite/config.hpp"
#include "dite/network.hpp"
#include "dite/tensor_io.hpp"

using dite::ModelConfig;
using dite::Tensor;
using dite::TensorError;

struct dite_config {
    ModelConfig cfg;
};

struct dite_model {
    dite::Model<float> model;
};

struct dite_tensor {
    Tensor<float> t;
};

namespace {

thread_local std::string g_last_error;

dite_status fail(dite_status code, const char* what) {
    g_last_error = what ? what : "unknown error";
    return code;
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <class Fn>
dite_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const TensorError& e) {
        return fail(DITE_ERR_INVALID_ARG, e.what());
    } catch (const std::exception& e) {
        return fail(DITE_ERR_INTERNAL, e.what());
    }
}

}  // namespace

extern "C" {

const char* dite_version(void) { return "0.1.0"; }

const char* dite_last_error(void) { return g_last_error.c_str(); }

void dite_string_free(char* s) { delete[] s; }

/* ---- configuration ---- */

dite_status dite_config_variant(int variant, dite_config** out) {
    if (!out) return fail(DITE_ERR_INVALID_ARG, "null output pointer");
    return guarded([&]() {
        if (variant == 18) *out = new dite_config{ModelConfig::dite18()};
        else if (variant == 30) *out = new dite_config{ModelConfig::dite30()};
        else return fail(DITE_ERR_CONFIG, "variant must be 18 or 30");
        return DITE_OK;
    });
}

dite_status dite_config_from_json(const char* json_text, dite_config** out) {
    if (!json_text || !out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            *out = new dite_config{ModelConfig::from_json(json_text)};
        } catch (const TensorError& e) {
            return fail(DITE_ERR_CONFIG, e.what());
        }
        return DITE_OK;
    });
}

dite_status dite_config_from_file(const char* path, dite_config** out) {
    if (!path || !out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            *out = new dite_config{ModelConfig::from_json_file(path)};
        } catch (const TensorError& e) {
            return fail(DITE_ERR_CONFIG, e.what());
        }
        return DITE_OK;
    });
}

dite_status dite_config_to_json(const dite_config* cfg, char** json_out) {
    if (!cfg || !json_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        *json_out = dup_string(cfg->cfg.to_json());
        return DITE_OK;
    });
}

void dite_config_free(dite_config* cfg) { delete cfg; }

/* ---- tensors ---- */

dite_status dite_tensor_create(const int64_t shape[4], const float* data, dite_tensor** out) {
    if (!shape || !out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        auto* t = new dite_tensor{Tensor<float>(shape[0], shape[1], shape[2], shape[3])};
        if (data) {
            std::memcpy(t->t.data.data(), data, t->t.data.size() * sizeof(float));
        }
        *out = t;
        return DITE_OK;
    });
}

dite_status dite_tensor_read(const char* path, dite_tensor** out) {
    if (!path || !out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            *out = new dite_tensor{dite::read_tensor_file<float>(path)};
        } catch (const TensorError& e) {
            return fail(DITE_ERR_IO, e.what());
        }
        return DITE_OK;
    });
}

dite_status dite_tensor_write(const dite_tensor* t, const char* path) {
    if (!t || !path) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            dite::write_tensor_file(path, t->t);
        } catch (const TensorError& e) {
            return fail(DITE_ERR_IO, e.what());
        }
        return DITE_OK;
    });
}

void dite_tensor_shape(const dite_tensor* t, int64_t shape_out[4]) {
    if (!t || !shape_out) return;
    shape_out[0] = t->t.shape.n;
    shape_out[1] = t->t.shape.c;
    shape_out[2] = t->t.shape.h;
    shape_out[3] = t->t.shape.w;
}

const float* dite_tensor_data(const dite_tensor* t) { return t ? t->t.data.data() : nullptr; }

void dite_tensor_free(dite_tensor* t) { delete t; }

/* ---- model ---- */

dite_status dite_model_build(const dite_config* cfg, uint64_t seed, dite_model** out) {
    if (!cfg || !out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            *out = new dite_model{dite::Model<float>::build(cfg->cfg, seed)};
        } catch (const TensorError& e) {
            return fail(DITE_ERR_CONFIG, e.what());
        }
        return DITE_OK;
    });
}

void dite_model_free(dite_model* m) { delete m; }

int64_t dite_model_param_count(dite_model* m) { return m ? m->model.param_count() : -1; }

dite_status dite_model_save_weights(dite_model* m, const char* path) {
    if (!m || !path) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            dite::save_checkpoint(m->model, path);
        } catch (const TensorError& e) {
            return fail(DITE_ERR_IO, e.what());
        }
        return DITE_OK;
    });
}

dite_status dite_model_load_weights(dite_model* m, const char* path) {
    if (!m || !path) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            dite::load_checkpoint(m->model, path);
        } catch (const TensorError& e) {
            return fail(DITE_ERR_IO, e.what());
        }
        return DITE_OK;
    });
}

dite_status dite_model_forward(dite_model* m, const dite_tensor* input,
                               dite_tensor** features_out, dite_tensor** heatmaps_out) {
    if (!m || !input) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            dite::Tape<float> tp;
            const auto nodes = m->model.forward_graph(tp, tp.leaf(input->t));
            if (features_out) *features_out = new dite_tensor{tp.value(nodes.features)};
            if (heatmaps_out) *heatmaps_out = new dite_tensor{tp.value(nodes.heatmaps)};
        } catch (const TensorError& e) {
            return fail(DITE_ERR_SHAPE, e.what());
        }
        return DITE_OK;
    });
}

dite_status dite_model_summary_json(dite_model* m, char** json_out) {
    if (!m || !json_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        *json_out = dup_string(dite::export_summary_json(m->model));
        return DITE_OK;
    });
}

dite_status dite_decode_heatmaps(const dite_tensor* heatmaps, int64_t sample, int64_t input_h,
                                 int64_t input_w, dite_keypoint* out, size_t capacity,
                                 size_t* count_out) {
    if (!heatmaps || !count_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            const auto kps = dite::decode_heatmaps(heatmaps->t, sample, input_h, input_w);
            *count_out = kps.size();
            if (out) {
                for (std::size_t i = 0; i < kps.size() && i < capacity; ++i) {
                    out[i].x = kps[i].x;
                    out[i].y = kps[i].y;
                    out[i].score = kps[i].score;
                    out[i].flat_channel = kps[i].flat_channel ? 1 : 0;
                }
            }
        } catch (const TensorError& e) {
            return fail(DITE_ERR_SHAPE, e.what());
        }
        return DITE_OK;
    });
}

/* ---- analysis ---- */

dite_status dite_analyze_json(dite_model* m, int input_h, int input_w, char** json_out) {
    if (!m || !json_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        *json_out = dup_string(dite::analyze(m->model, input_h, input_w).to_json());
        return DITE_OK;
    });
}

dite_status dite_analyze_csv(dite_model* m, int input_h, int input_w, char** csv_out) {
    if (!m || !csv_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        *csv_out = dup_string(dite::analyze(m->model, input_h, input_w).to_csv());
        return DITE_OK;
    });
}

dite_status dite_sweep_json(const dite_config* base, int input_h, int input_w, char** json_out) {
    if (!base || !json_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        const auto res = dite::sweep_hyperparams(base->cfg, dite::sweep_default_g_rows(),
                                                 dite::sweep_default_n_cols(), input_h, input_w);
        *json_out = dup_string(res.to_json());
        return DITE_OK;
    });
}

dite_status dite_sweep_csv(const dite_config* base, int input_h, int input_w, char** csv_out) {
    if (!base || !csv_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        const auto res = dite::sweep_hyperparams(base->cfg, dite::sweep_default_g_rows(),
                                                 dite::sweep_default_n_cols(), input_h, input_w);
        *csv_out = dup_string(res.to_csv());
        return DITE_OK;
    });
}

dite_status dite_verify_expectations(const char* csv_path, char** json_out, int* all_pass_out) {
    if (!csv_path || !all_pass_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        try {
            const auto res = dite::verify_against_expectations(csv_path);
            *all_pass_out = res.all_pass ? 1 : 0;
            if (json_out) *json_out = dup_string(res.to_json());
        } catch (const TensorError& e) {
            return fail(DITE_ERR_IO, e.what());
        }
        return DITE_OK;
    });
}

dite_status dite_gradcheck(uint64_t seed, double tol_ops, double tol_end_to_end, char** json_out,
                           int* all_pass_out) {
    if (!all_pass_out) return fail(DITE_ERR_INVALID_ARG, "null argument");
    return guarded([&]() {
        const auto suite = dite::run_gradcheck_suite(seed, tol_ops, tol_end_to_end);
        *all_pass_out = suite.all_pass ? 1 : 0;
        if (json_out) *json_out = dup_string(suite.to_json());
        return DITE_OK;
    });
}

}  // extern "C"
