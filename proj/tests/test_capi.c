/* Exercises the C interface from C. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "mghand/mghand.h"

static int failures = 0;

#define EXPECT(cond)                                                              \
    do {                                                                          \
        if (!(cond)) {                                                            \
            fprintf(stderr, "%s:%d: expectation failed: %s\n", __FILE__, __LINE__, #cond); \
            ++failures;                                                           \
        }                                                                         \
    } while (0)

static void schedule_and_ddim(void) {
    mgh_schedule* s = NULL;
    EXPECT(mgh_schedule_create(1000, "linear-beta", &s) == MGH_OK);
    double ab0 = 0, ab = 0;
    EXPECT(mgh_schedule_alpha_bar(s, 0, &ab0) == MGH_OK && ab0 == 1.0);
    EXPECT(mgh_schedule_alpha_bar(s, 500, &ab) == MGH_OK && ab > 0 && ab < 1);
    EXPECT(mgh_schedule_alpha_bar(s, 1001, &ab) == MGH_ERR_INVALID_ARGUMENT);
    EXPECT(strlen(mgh_last_error()) > 0);

    const double z0[3] = {0.5, -1.0, 2.0}, eps[3] = {0.1, 0.2, -0.3};
    double zt[3], back[3], next[3];
    EXPECT(mgh_add_noise(s, z0, eps, 3, 400, zt) == MGH_OK);
    EXPECT(mgh_predict_x0(s, zt, eps, 3, 400, back) == MGH_OK);
    for (int i = 0; i < 3; ++i) EXPECT(fabs(back[i] - z0[i]) < 1e-9);
    EXPECT(mgh_ddim_step(s, zt, eps, 3, 400, 390, 0.0, NULL, next) == MGH_OK);
    EXPECT(mgh_ddim_step(s, zt, eps, 3, 400, 390, 1.0, NULL, next) == MGH_ERR_INVALID_ARGUMENT);

    double g[3];
    EXPECT(mgh_cfg_combine(z0, eps, 3, 3.0, g) == MGH_OK);
    EXPECT(fabs(g[0] - (0.5 + 3.0 * (0.1 - 0.5))) < 1e-12);
    EXPECT(mgh_schedule_create(0, "linear-beta", &s) == MGH_ERR_INVALID_ARGUMENT);
    mgh_schedule_destroy(s);
    EXPECT(mgh_schedule_create(10, "bogus", &s) != MGH_OK);
    mgh_schedule_destroy(NULL);
}

static void masks(void) {
    mgh_mask* m = NULL;
    EXPECT(mgh_mask_create(4, 4, &m) == MGH_OK);
    uint8_t region[16] = {0};
    region[5] = 1;
    size_t area = 99;
    EXPECT(mgh_mask_update(m, region, 4, 4, 0.39, 0.4) == MGH_OK);
    EXPECT(mgh_mask_area(m, &area) == MGH_OK && area == 0);
    EXPECT(mgh_mask_update(m, region, 4, 4, 0.4, 0.4) == MGH_OK);
    EXPECT(mgh_mask_area(m, &area) == MGH_OK && area == 1);
    EXPECT(mgh_mask_update(m, region, 3, 3, 0.9, 0.4) == MGH_ERR_INVALID_ARGUMENT);
    uint8_t small[4];
    EXPECT(mgh_mask_downsample(m, 2, 2, small) == MGH_OK);
    EXPECT(small[0] == 1 && small[1] == 0 && small[2] == 0 && small[3] == 0);
    uint8_t full[16];
    EXPECT(mgh_mask_read(m, full, 16) == MGH_OK && full[5] == 1);
    EXPECT(mgh_mask_read(m, full, 15) == MGH_ERR_INVALID_ARGUMENT);
    mgh_mask_destroy(m);
}

static void metrics(void) {
    enum { N = 200, D = 3 };
    double* a = malloc(sizeof(double) * N * D);
    for (int i = 0; i < N * D; ++i) a[i] = sin(i * 0.37) + cos(i * 1.3);
    double fid = -1, kid = -1, se = -1;
    EXPECT(mgh_fid(a, N, a, N, D, &fid) == MGH_OK && fabs(fid) < 1e-6);
    EXPECT(mgh_kid(a, N, a, N, D, 50, 10, 1, &kid, &se) == MGH_OK && se >= 0);
    EXPECT(mgh_kid(a, N, a, N, D, 500, 10, 1, &kid, &se) == MGH_ERR_INVALID_ARGUMENT);
    EXPECT(mgh_fid(a, 1, a, N, D, &fid) == MGH_ERR_INVALID_ARGUMENT);
    free(a);
}

static void config_and_commands(const char* workdir) {
    char* json = NULL;
    EXPECT(mgh_default_config(&json) == MGH_OK && json != NULL);
    char* errors = NULL;
    EXPECT(mgh_validate_config(json, &errors) == MGH_ERR_CONFIG);
    EXPECT(errors != NULL && strstr(errors, "seed") != NULL);
    mgh_free_string(errors);
    mgh_free_string(json);

    EXPECT(mgh_validate_config("{\"seed\": 1}", &errors) == MGH_OK);
    EXPECT(strcmp(errors, "[]") == 0);
    mgh_free_string(errors);
    EXPECT(mgh_validate_config("{\"seed\": 1, \"guidance\": {\"tau\": 1.5}}", &errors) == MGH_ERR_CONFIG);
    EXPECT(strstr(errors, "guidance.tau") != NULL);
    mgh_free_string(errors);
    EXPECT(mgh_validate_config("{not json", &errors) == MGH_ERR_CONFIG);
    mgh_free_string(errors);

    char den[512], cfg[2048], out_dir[512];
    snprintf(den, sizeof den, "%s/den.json", workdir);
    snprintf(out_dir, sizeof out_dir, "%s/samples", workdir);
    snprintf(cfg, sizeof cfg,
             "{\"seed\": 3, \"train_denoiser\": {\"dataset_size\": 500, \"epochs\": 2},"
             " \"guidance\": {\"w\": 0, \"v\": 0}, \"num_samples\": 4, \"sampler\": {\"num_steps\": 10},"
             " \"checkpoints\": {\"denoiser\": \"%s\"}, \"evaluation\": {\"kid_subset_size\": 4, \"reference_samples\": 20,"
             " \"embedder_samples\": 10}}",
             den);
    char* summary = NULL;
    EXPECT(mgh_train_denoiser(cfg, den, &summary) == MGH_OK);
    EXPECT(summary != NULL && strstr(summary, "checksum") != NULL);
    mgh_free_string(summary);

    mgh_denoiser* d = NULL;
    EXPECT(mgh_denoiser_load(den, &d) == MGH_OK);
    size_t n = 0;
    EXPECT(mgh_denoiser_latent_size(d, &n) == MGH_OK && n == 2);
    const double z[2] = {0.1, 0.2};
    double e1[2], e2[2];
    EXPECT(mgh_denoiser_predict(d, NULL, z, 2, 1, 500, e1) == MGH_OK);
    EXPECT(mgh_denoiser_predict(d, NULL, z, 2, 1, 500, e2) == MGH_OK);
    EXPECT(e1[0] == e2[0] && e1[1] == e2[1]);
    EXPECT(mgh_denoiser_predict(d, NULL, z, 2, 77, 500, e2) == MGH_ERR_INVALID_ARGUMENT);
    mgh_denoiser_destroy(d);
    EXPECT(mgh_denoiser_load("/nonexistent/den.json", &d) == MGH_ERR_IO);

    EXPECT(mgh_sample(cfg, out_dir, &summary) == MGH_OK);
    mgh_free_string(summary);

    char report[512];
    snprintf(report, sizeof report, "%s/report.json", workdir);
    char samples[600];
    snprintf(samples, sizeof samples, "%s/samples", out_dir);
    EXPECT(mgh_evaluate(cfg, samples, NULL, NULL, report, &summary) == MGH_OK);
    EXPECT(summary != NULL && strstr(summary, "fid") != NULL);
    mgh_free_string(summary);

    EXPECT(mgh_sample("{\"seed\": 3, \"checkpoints\": {\"denoiser\": \"/nonexistent.json\"}}", out_dir, &summary) ==
           MGH_ERR_CONFIG);

    int tok = -1;
    EXPECT(mgh_token_for_text("Five fingers, please", &tok) == MGH_OK && tok == 3);
    EXPECT(mgh_token_for_text("fruit", &tok) == MGH_ERR_INVALID_ARGUMENT);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: %s <workdir>\n", argv[0]);
        return 2;
    }
    EXPECT(strcmp(mgh_status_name(MGH_ERR_CONFIG), "config") == 0);
    EXPECT(mgh_score_dim() == 4);
    EXPECT(strlen(mgh_version()) > 0);
    schedule_and_ddim();
    masks();
    metrics();
    config_and_commands(argv[1]);
    if (failures == 0) printf("C API: all expectations met\n");
    return failures == 0 ? 0 : 1;
}
