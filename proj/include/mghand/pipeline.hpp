#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mghand/config.hpp"
#include "mghand/metrics.hpp"

namespace mghand {

// Each command validates the config, does its work and returns a JSON summary.

nlohmann::json train_denoiser_command(const RunConfig& cfg, const std::string& out_path);
nlohmann::json train_discriminator_command(const RunConfig& cfg, const std::string& out_path);
nlohmann::json train_lora_command(const RunConfig& cfg, const std::string& out_path);
nlohmann::json build_dataset_command(const RunConfig& cfg, const std::string& out_manifest);

/// Guided samples under out_dir: samples/, masks/ (PNG + area log), traces/, prompts.txt.
nlohmann::json sample_command(const RunConfig& cfg, const std::string& out_dir);

/// Empty reference_dir draws a reference set from the backbone; empty
/// prompts_file pairs every sample with the configured prompt.
nlohmann::json evaluate_command(const RunConfig& cfg, const std::string& generated_dir,
                                const std::string& reference_dir, const std::string& prompts_file,
                                const std::string& out_path);

/// Sampling, masking and evaluation into cfg.output_dir.
nlohmann::json run_pipeline(const RunConfig& cfg);

/// Clean samples for the positive prompts, used as the "real" reference set.
std::vector<Image> reference_images(const Backbone& bb, int n, std::uint64_t seed);

MetricsReport evaluate_images(const Backbone& bb, std::span<const Image> generated, std::span<const Image> reference,
                              std::span<const int> prompts, const RegionDetector& detector,
                              const EvaluationConfig& eval, std::uint64_t seed);

/// Sample files (.png / .tensor.json) directly inside dir, sorted by name.
std::vector<std::string> list_samples(const std::string& dir);

}  // namespace mghand
