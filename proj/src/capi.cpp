#include "mghand/mghand.h"

#include <cstring>
#include <string>

#include "mghand/config.hpp"
#include "mghand/denoiser.hpp"
#include "mghand/discriminator.hpp"
#include "mghand/error.hpp"
#include "mghand/lora.hpp"
#include "mghand/mask.hpp"
#include "mghand/metrics.hpp"
#include "mghand/pipeline.hpp"
#include "mghand/schedule.hpp"
#include "mghand/vocabulary.hpp"

struct mgh_schedule {
    mghand::NoiseSchedule value;
};
struct mgh_mask {
    mghand::CumulativeMask value;
};
struct mgh_denoiser {
    std::unique_ptr<mghand::Denoiser> value;
};
struct mgh_discriminator {
    mghand::Discriminator value;
};
struct mgh_adapter {
    mghand::LoraAdapter value;
};

namespace {

thread_local std::string g_last_error;

mgh_status to_status(mghand::ErrorCode code) {
    switch (code) {
        case mghand::ErrorCode::kInvalidArgument: return MGH_ERR_INVALID_ARGUMENT;
        case mghand::ErrorCode::kNumericalDegeneracy: return MGH_ERR_NUMERICAL_DEGENERACY;
        case mghand::ErrorCode::kGuidanceDiverged: return MGH_ERR_GUIDANCE_DIVERGED;
        case mghand::ErrorCode::kTrainingDiverged: return MGH_ERR_TRAINING_DIVERGED;
        case mghand::ErrorCode::kIo: return MGH_ERR_IO;
        case mghand::ErrorCode::kConfig: return MGH_ERR_CONFIG;
        case mghand::ErrorCode::kCaptionFailed: return MGH_ERR_CAPTION_FAILED;
        case mghand::ErrorCode::kUndefinedMetric: return MGH_ERR_UNDEFINED_METRIC;
        case mghand::ErrorCode::kInternal: return MGH_ERR_INTERNAL;
    }
    return MGH_ERR_INTERNAL;
}

template <typename F>
mgh_status guarded(F&& body) {
    g_last_error.clear();
    try {
        body();
        return MGH_OK;
    } catch (const mghand::Error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const nlohmann::json::exception& e) {
        g_last_error = std::string("malformed JSON: ") + e.what();
        return MGH_ERR_CONFIG;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return MGH_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MGH_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return MGH_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    if (p == nullptr) mghand::fail(mghand::ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

mghand::Vec vec_of(const double* p, size_t n) {
    need(p, "input buffer");
    return Eigen::Map<const mghand::Vec>(p, static_cast<Eigen::Index>(n));
}

void copy_out(const mghand::Vec& v, double* out) {
    need(out, "output buffer");
    std::memcpy(out, v.data(), sizeof(double) * static_cast<size_t>(v.size()));
}

mghand::FeatureSet features_of(const double* p, size_t rows, size_t dim) {
    need(p, "feature buffer");
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return {Eigen::Map<const RowMat>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim)), ""};
}

mghand::RunConfig parse_config(const char* config_json) {
    need(config_json, "config_json");
    return mghand::config_from_json(nlohmann::json::parse(config_json));
}

void emit(char** out, const nlohmann::json& j) {
    if (out != nullptr) *out = dup_string(j.dump(2));
}

}  // namespace

extern "C" {

const char* mgh_version(void) { return "1.0.0"; }

const char* mgh_last_error(void) { return g_last_error.c_str(); }

const char* mgh_status_name(mgh_status status) {
    switch (status) {
        case MGH_OK: return "ok";
        case MGH_ERR_INVALID_ARGUMENT: return "invalid-argument";
        case MGH_ERR_NUMERICAL_DEGENERACY: return "numerical-degeneracy";
        case MGH_ERR_GUIDANCE_DIVERGED: return "guidance-diverged";
        case MGH_ERR_TRAINING_DIVERGED: return "training-diverged";
        case MGH_ERR_IO: return "io";
        case MGH_ERR_CONFIG: return "config";
        case MGH_ERR_CAPTION_FAILED: return "caption-failed";
        case MGH_ERR_UNDEFINED_METRIC: return "undefined-metric";
        case MGH_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void mgh_free_string(char* s) { std::free(s); }

mgh_status mgh_schedule_create(int T, const char* kind, mgh_schedule** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        const auto k = kind == nullptr ? mghand::ScheduleKind::kLinearBeta : mghand::parse_schedule_kind(kind);
        *out = new mgh_schedule{mghand::make_schedule(T, k)};
    });
}

void mgh_schedule_destroy(mgh_schedule* s) { delete s; }

mgh_status mgh_schedule_alpha_bar(const mgh_schedule* s, int t, double* out) {
    return guarded([&] {
        need(s, "schedule");
        need(out, "out");
        *out = s->value.at(t);
    });
}

mgh_status mgh_add_noise(const mgh_schedule* s, const double* z0, const double* eps, size_t n, int t, double* out) {
    return guarded([&] {
        need(s, "schedule");
        copy_out(mghand::add_noise(vec_of(z0, n), t, vec_of(eps, n), s->value), out);
    });
}

mgh_status mgh_predict_x0(const mgh_schedule* s, const double* z_t, const double* eps, size_t n, int t, double* out) {
    return guarded([&] {
        need(s, "schedule");
        copy_out(mghand::predict_x0(vec_of(z_t, n), vec_of(eps, n), t, s->value), out);
    });
}

mgh_status mgh_ddim_step(const mgh_schedule* s, const double* z_t, const double* eps, size_t n, int t, int t_prev,
                         double eta, const double* noise, double* out) {
    return guarded([&] {
        need(s, "schedule");
        mghand::Vec nz;
        if (noise != nullptr) nz = vec_of(noise, n);
        copy_out(mghand::ddim_step(vec_of(z_t, n), vec_of(eps, n), t, t_prev, s->value, eta,
                                   noise != nullptr ? &nz : nullptr),
                 out);
    });
}

mgh_status mgh_cfg_combine(const double* eps_uncond, const double* eps_cond, size_t n, double scale, double* out) {
    return guarded([&] { copy_out(mghand::cfg_combine(vec_of(eps_uncond, n), vec_of(eps_cond, n), scale), out); });
}

mgh_status mgh_mask_create(int height, int width, mgh_mask** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        *out = new mgh_mask{mghand::init_mask(height, width)};
    });
}

void mgh_mask_destroy(mgh_mask* m) { delete m; }

mgh_status mgh_mask_update(mgh_mask* m, const uint8_t* region, int height, int width, double score, double tau) {
    return guarded([&] {
        need(m, "mask");
        need(region, "region");
        mghand::require(height >= 1 && width >= 1, "region dimensions must be positive");
        mghand::Detection det;
        det.region = mghand::BinaryGrid(height, width);
        for (size_t i = 0; i < det.region.cells.size(); ++i) {
            mghand::require(region[i] <= 1, "region values must be 0 or 1");
            det.region.cells[i] = region[i];
        }
        det.score = score;
        m->value = mghand::update_mask(m->value, det, tau);
    });
}

mgh_status mgh_mask_area(const mgh_mask* m, size_t* out) {
    return guarded([&] {
        need(m, "mask");
        need(out, "out");
        *out = m->value.area();
    });
}

mgh_status mgh_mask_read(const mgh_mask* m, uint8_t* out, size_t n) {
    return guarded([&] {
        need(m, "mask");
        need(out, "out");
        mghand::require(n == m->value.grid.cells.size(), "output size does not match the mask");
        std::memcpy(out, m->value.grid.cells.data(), n);
    });
}

mgh_status mgh_mask_downsample(const mgh_mask* m, int latent_height, int latent_width, uint8_t* out) {
    return guarded([&] {
        need(m, "mask");
        need(out, "out");
        const auto g = mghand::downsample_mask(m->value.grid, latent_height, latent_width);
        std::memcpy(out, g.cells.data(), g.cells.size());
    });
}

mgh_status mgh_fid(const double* a, size_t rows_a, const double* b, size_t rows_b, size_t dim, double* out) {
    return guarded([&] {
        need(out, "out");
        *out = mghand::compute_fid(features_of(a, rows_a, dim), features_of(b, rows_b, dim));
    });
}

mgh_status mgh_kid(const double* a, size_t rows_a, const double* b, size_t rows_b, size_t dim, int subset_size,
                   int subsets, uint64_t seed, double* mean, double* std_error) {
    return guarded([&] {
        need(mean, "mean");
        const auto r = mghand::compute_kid(features_of(a, rows_a, dim), features_of(b, rows_b, dim), subset_size,
                                           subsets, seed);
        *mean = r.mean;
        if (std_error != nullptr) *std_error = r.std_error;
    });
}

mgh_status mgh_denoiser_load(const char* path, mgh_denoiser** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        *out = new mgh_denoiser{mghand::load_denoiser(path)};
    });
}

void mgh_denoiser_destroy(mgh_denoiser* d) { delete d; }

mgh_status mgh_denoiser_latent_size(const mgh_denoiser* d, size_t* out) {
    return guarded([&] {
        need(d, "denoiser");
        need(out, "out");
        *out = static_cast<size_t>(d->value->latent_shape().size());
    });
}

mgh_status mgh_denoiser_predict(const mgh_denoiser* d, const mgh_adapter* adapter, const double* z, size_t n,
                                int token, int t, double* out) {
    return guarded([&] {
        need(d, "denoiser");
        mghand::token(token);
        copy_out(d->value->predict(vec_of(z, n), token, t, adapter != nullptr ? &adapter->value : nullptr), out);
    });
}

mgh_status mgh_discriminator_load(const char* path, mgh_discriminator** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        *out = new mgh_discriminator{mghand::load_discriminator(path)};
    });
}

void mgh_discriminator_destroy(mgh_discriminator* d) { delete d; }

size_t mgh_score_dim(void) { return static_cast<size_t>(mghand::kScoreDim); }

mgh_status mgh_discriminator_score(const mgh_discriminator* d, const double* pixels, size_t n, int token,
                                   double* out) {
    return guarded([&] {
        need(d, "discriminator");
        mghand::token(token);
        const mghand::Shape shape = d->value.input_shape();
        mghand::require(n == static_cast<size_t>(shape.size()), "pixel count does not match the discriminator input");
        copy_out(d->value.score(mghand::Image(shape, vec_of(pixels, n)), token), out);
    });
}

mgh_status mgh_adapter_load(const char* path, mgh_adapter** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        *out = new mgh_adapter{mghand::load_adapter(path)};
    });
}

void mgh_adapter_destroy(mgh_adapter* a) { delete a; }

mgh_status mgh_adapter_set_scale(mgh_adapter* a, double v) {
    return guarded([&] {
        need(a, "adapter");
        a->value = mghand::set_scale(a->value, v);
    });
}

mgh_status mgh_token_for_text(const char* text, int* out) {
    return guarded([&] {
        need(text, "text");
        need(out, "out");
        const auto tok = mghand::match_token(text);
        if (!tok) mghand::fail(mghand::ErrorCode::kInvalidArgument, std::string("no vocabulary phrase in '") + text + "'");
        *out = *tok;
    });
}

mgh_status mgh_default_config(char** out_json) {
    return guarded([&] {
        need(out_json, "out_json");
        emit(out_json, mghand::config_to_json(mghand::RunConfig{}));
    });
}

mgh_status mgh_validate_config(const char* config_json, char** errors_json) {
    std::vector<std::string> errors;
    mgh_status st = guarded([&] { errors = mghand::validate_config(parse_config(config_json)); });
    if (st != MGH_OK) {
        errors = {g_last_error};
    } else if (!errors.empty()) {
        st = MGH_ERR_CONFIG;
        g_last_error = errors.front();
    }
    if (errors_json != nullptr) {
        try {
            *errors_json = dup_string(nlohmann::json(errors).dump());
        } catch (...) {
            *errors_json = nullptr;
        }
    }
    return st;
}

mgh_status mgh_train_denoiser(const char* config_json, const char* out_path, char** summary_json) {
    return guarded([&] {
        need(out_path, "out_path");
        emit(summary_json, mghand::train_denoiser_command(parse_config(config_json), out_path));
    });
}

mgh_status mgh_train_discriminator(const char* config_json, const char* out_path, char** summary_json) {
    return guarded([&] {
        need(out_path, "out_path");
        emit(summary_json, mghand::train_discriminator_command(parse_config(config_json), out_path));
    });
}

mgh_status mgh_train_lora(const char* config_json, const char* out_path, char** summary_json) {
    return guarded([&] {
        need(out_path, "out_path");
        emit(summary_json, mghand::train_lora_command(parse_config(config_json), out_path));
    });
}

mgh_status mgh_build_dataset(const char* config_json, const char* out_manifest, char** summary_json) {
    return guarded([&] {
        need(out_manifest, "out_manifest");
        emit(summary_json, mghand::build_dataset_command(parse_config(config_json), out_manifest));
    });
}

mgh_status mgh_sample(const char* config_json, const char* out_dir, char** summary_json) {
    return guarded([&] {
        need(out_dir, "out_dir");
        emit(summary_json, mghand::sample_command(parse_config(config_json), out_dir));
    });
}

mgh_status mgh_evaluate(const char* config_json, const char* generated_dir, const char* reference_dir,
                        const char* prompts_path, const char* out_path, char** summary_json) {
    return guarded([&] {
        need(generated_dir, "generated_dir");
        need(out_path, "out_path");
        emit(summary_json, mghand::evaluate_command(parse_config(config_json), generated_dir,
                                                    reference_dir != nullptr ? reference_dir : "",
                                                    prompts_path != nullptr ? prompts_path : "", out_path));
    });
}

mgh_status mgh_run_pipeline(const char* config_json, char** summary_json) {
    return guarded([&] { emit(summary_json, mghand::run_pipeline(parse_config(config_json))); });
}

}  // extern "C"
