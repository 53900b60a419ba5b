#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mghand/backbone.hpp"
#include "mghand/guidance.hpp"
#include "mghand/schedule.hpp"

namespace mghand {

struct CheckpointPaths {
    std::string denoiser;
    std::string discriminator;
    std::string adapter;
};

struct DenoiserTraining {
    int dataset_size = 20000;
    int epochs = 40;
    int batch_size = 256;
    double lr = 2e-3;
    double cond_dropout = 0.1;
};

struct DiscriminatorTraining {
    std::string manifest;
    int epochs = 120;
    int batch_size = 64;
    double lr = 1e-3;
    bool augment = true;
    std::string loss = "least-squares";
};

struct LoraTraining {
    int rank = 4;
    double lr = 1e-4;
    int steps = 3000;
    double v_train = 1.0;
    int batch_size = 1;
    double weight_decay = 0.01;
    std::string triples;  // JSON file; empty = built-in prompt sets
    std::vector<std::string> targets;  // empty = every linear layer
    int anchor_count = 64;
    int anchor_steps = 20;
};

struct DatasetBuild {
    std::string input;
    double threshold = 0.8;
    std::string captioner = "stub";
    double max_source_share = 0.75;
    double fake_ratio = 1.0;
    double max_caption_failure_rate = 0.1;
    /// When > 0 and the input directory is absent, a synthetic corpus of this
    /// many images per source is written there first.
    int fixture_per_source = 0;
};

struct EvaluationConfig {
    int reference_samples = 200;
    int kid_subset_size = 50;
    int kid_subsets = 20;
    double tau_detect = 0.4;
    int embedder_samples = 200;
    bool include_undetected = false;
    /// Also sample the unguided model and add it to the comparison table.
    bool compare_base = true;
};

/// Everything a run needs; serialises to a single JSON document.
struct RunConfig {
    BackboneKind backbone = BackboneKind::kPoints;
    int T = kDefaultTimesteps;
    ScheduleKind schedule = ScheduleKind::kLinearBeta;
    double beta_start = kDefaultBetaStart;
    double beta_end = kDefaultBetaEnd;
    SamplerConfig sampler;
    GuidanceConfig guidance;
    std::string prompt = "hands";
    int num_samples = 200;
    CheckpointPaths checkpoints;
    std::string detector = "default";
    std::string output_dir = "run";
    std::optional<std::uint64_t> seed;
    DenoiserTraining train_denoiser;
    DiscriminatorTraining train_discriminator;
    LoraTraining train_lora;
    DatasetBuild dataset;
    EvaluationConfig evaluation;
};

nlohmann::json config_to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
/// Recursively overlays patch onto base (objects merge, everything else replaces).
nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& patch);

/// Every invariant violation as "field: message"; empty when valid.
std::vector<std::string> validate_config(const RunConfig& cfg);
/// Throws Error(kConfig) listing all violations.
void require_valid(const RunConfig& cfg);

NoiseSchedule schedule_of(const RunConfig& cfg);
int prompt_token(const RunConfig& cfg);
std::unique_ptr<RegionDetector> make_detector(const RunConfig& cfg);

}  // namespace mghand
