/* C interface to the mghand guided-diffusion toolkit.
 *
 * Every function returns an mgh_status. On failure, mgh_last_error() returns a
 * message for the calling thread until its next API call. Strings returned
 * through char** out-parameters are owned by the caller and released with
 * mgh_free_string(). Handles are opaque and released with their _destroy
 * function; destroying NULL is a no-op.
 */
#ifndef MGHAND_H
#define MGHAND_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MGH_API __declspec(dllexport)
#else
#define MGH_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mgh_status {
    MGH_OK = 0,
    MGH_ERR_INVALID_ARGUMENT = 1,
    MGH_ERR_NUMERICAL_DEGENERACY = 2,
    MGH_ERR_GUIDANCE_DIVERGED = 3,
    MGH_ERR_TRAINING_DIVERGED = 4,
    MGH_ERR_IO = 5,
    MGH_ERR_CONFIG = 6,
    MGH_ERR_CAPTION_FAILED = 7,
    MGH_ERR_UNDEFINED_METRIC = 8,
    MGH_ERR_INTERNAL = 99
} mgh_status;

typedef struct mgh_schedule mgh_schedule;
typedef struct mgh_mask mgh_mask;
typedef struct mgh_denoiser mgh_denoiser;
typedef struct mgh_discriminator mgh_discriminator;
typedef struct mgh_adapter mgh_adapter;

MGH_API const char* mgh_version(void);
MGH_API const char* mgh_last_error(void);
MGH_API const char* mgh_status_name(mgh_status status);
MGH_API void mgh_free_string(char* s);

/* Noise schedule and DDIM arithmetic. kind: "linear-beta" or "cosine". */
MGH_API mgh_status mgh_schedule_create(int T, const char* kind, mgh_schedule** out);
MGH_API void mgh_schedule_destroy(mgh_schedule* s);
MGH_API mgh_status mgh_schedule_alpha_bar(const mgh_schedule* s, int t, double* out);
MGH_API mgh_status mgh_add_noise(const mgh_schedule* s, const double* z0, const double* eps, size_t n, int t,
                                 double* out);
MGH_API mgh_status mgh_predict_x0(const mgh_schedule* s, const double* z_t, const double* eps, size_t n, int t,
                                  double* out);
/* noise may be NULL when eta == 0. */
MGH_API mgh_status mgh_ddim_step(const mgh_schedule* s, const double* z_t, const double* eps, size_t n, int t,
                                 int t_prev, double eta, const double* noise, double* out);
MGH_API mgh_status mgh_cfg_combine(const double* eps_uncond, const double* eps_cond, size_t n, double scale,
                                   double* out);

/* Cumulative mask; regions and outputs are row-major 0/1 bytes. */
MGH_API mgh_status mgh_mask_create(int height, int width, mgh_mask** out);
MGH_API void mgh_mask_destroy(mgh_mask* m);
MGH_API mgh_status mgh_mask_update(mgh_mask* m, const uint8_t* region, int height, int width, double score,
                                   double tau);
MGH_API mgh_status mgh_mask_area(const mgh_mask* m, size_t* out);
MGH_API mgh_status mgh_mask_read(const mgh_mask* m, uint8_t* out, size_t n);
MGH_API mgh_status mgh_mask_downsample(const mgh_mask* m, int latent_height, int latent_width, uint8_t* out);

/* Metrics over row-major feature matrices (rows x dim). */
MGH_API mgh_status mgh_fid(const double* a, size_t rows_a, const double* b, size_t rows_b, size_t dim, double* out);
MGH_API mgh_status mgh_kid(const double* a, size_t rows_a, const double* b, size_t rows_b, size_t dim,
                           int subset_size, int subsets, uint64_t seed, double* mean, double* std_error);

/* Checkpoints. */
MGH_API mgh_status mgh_denoiser_load(const char* path, mgh_denoiser** out);
MGH_API void mgh_denoiser_destroy(mgh_denoiser* d);
MGH_API mgh_status mgh_denoiser_latent_size(const mgh_denoiser* d, size_t* out);
/* adapter may be NULL. */
MGH_API mgh_status mgh_denoiser_predict(const mgh_denoiser* d, const mgh_adapter* adapter, const double* z,
                                        size_t n, int token, int t, double* out);
MGH_API mgh_status mgh_discriminator_load(const char* path, mgh_discriminator** out);
MGH_API void mgh_discriminator_destroy(mgh_discriminator* d);
MGH_API size_t mgh_score_dim(void);
MGH_API mgh_status mgh_discriminator_score(const mgh_discriminator* d, const double* pixels, size_t n, int token,
                                           double* out);
MGH_API mgh_status mgh_adapter_load(const char* path, mgh_adapter** out);
MGH_API void mgh_adapter_destroy(mgh_adapter* a);
MGH_API mgh_status mgh_adapter_set_scale(mgh_adapter* a, double v);

/* Vocabulary. Returns the token id of the longest phrase in text. */
MGH_API mgh_status mgh_token_for_text(const char* text, int* out);

/* Commands. config_json is a run configuration document; summaries are JSON. */
MGH_API mgh_status mgh_default_config(char** out_json);
/* Returns MGH_OK with "[]" or MGH_ERR_CONFIG with a JSON array of messages. */
MGH_API mgh_status mgh_validate_config(const char* config_json, char** errors_json);
MGH_API mgh_status mgh_train_denoiser(const char* config_json, const char* out_path, char** summary_json);
MGH_API mgh_status mgh_train_discriminator(const char* config_json, const char* out_path, char** summary_json);
MGH_API mgh_status mgh_train_lora(const char* config_json, const char* out_path, char** summary_json);
MGH_API mgh_status mgh_build_dataset(const char* config_json, const char* out_manifest, char** summary_json);
MGH_API mgh_status mgh_sample(const char* config_json, const char* out_dir, char** summary_json);
/* reference_dir and prompts_path may be NULL or empty. */
MGH_API mgh_status mgh_evaluate(const char* config_json, const char* generated_dir, const char* reference_dir,
                                const char* prompts_path, const char* out_path, char** summary_json);
MGH_API mgh_status mgh_run_pipeline(const char* config_json, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* MGHAND_H */
