#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mghand/autodiff.hpp"
#include "mghand/nn.hpp"
#include "mghand/schedule.hpp"

namespace mghand {

struct LoraAdapter;

/// Sinusoidal timestep features, rows = timesteps.size(), 16 columns.
Mat time_features(std::span<const int> timesteps, int T);
inline constexpr int kTimeFeatures = 16;
inline constexpr int kConditionDim = 8;

/// Noise-prediction network eps(z, token, t). Rows of z are flattened latents.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual std::string kind() const = 0;
    virtual Shape latent_shape() const = 0;
    /// Layers with a "<name>.weight" matrix that adapters may target.
    virtual std::vector<std::string> linear_layers() const = 0;
    virtual ad::Var forward(ParamBinder& params, const ad::Var& z, std::span<const int> tokens,
                            std::span<const int> timesteps) const = 0;
    virtual nlohmann::json architecture() const = 0;
    virtual std::unique_ptr<Denoiser> clone() const = 0;

    /// Inference without gradient recording.
    Mat predict(const Mat& z, std::span<const int> tokens, std::span<const int> timesteps,
                const LoraAdapter* adapter = nullptr) const;
    Vec predict(const Vec& z, int token, int t, const LoraAdapter* adapter = nullptr) const;

    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    std::string checksum() const { return params_.checksum(); }

    std::uint64_t seed = 0;
    std::string config_hash;

protected:
    Denoiser(NoiseSchedule schedule) : schedule_(std::move(schedule)) {}

    ParamStore params_;
    NoiseSchedule schedule_;
};

/// Fully connected denoiser for 2-D point diffusion.
class PointDenoiser : public Denoiser {
public:
    PointDenoiser(NoiseSchedule schedule, int hidden, std::uint64_t init_seed);

    std::string kind() const override { return "point-mlp"; }
    Shape latent_shape() const override { return {2, 1, 1}; }
    std::vector<std::string> linear_layers() const override { return {"fc1", "fc2", "fc3", "out"}; }
    ad::Var forward(ParamBinder& params, const ad::Var& z, std::span<const int> tokens,
                    std::span<const int> timesteps) const override;
    nlohmann::json architecture() const override;
    std::unique_ptr<Denoiser> clone() const override { return std::make_unique<PointDenoiser>(*this); }

private:
    int hidden_;
};

/// Small convolutional denoiser for 1x16x16 latents. Time and condition enter
/// as per-channel offsets after the first two convolutions.
class ConvDenoiser : public Denoiser {
public:
    ConvDenoiser(NoiseSchedule schedule, Shape latent, int channels, int hidden, std::uint64_t init_seed);

    std::string kind() const override { return "conv"; }
    Shape latent_shape() const override { return latent_; }
    std::vector<std::string> linear_layers() const override {
        return {"temb", "mod1", "mod2", "conv1", "conv2", "conv3", "out"};
    }
    ad::Var forward(ParamBinder& params, const ad::Var& z, std::span<const int> tokens,
                    std::span<const int> timesteps) const override;
    nlohmann::json architecture() const override;
    std::unique_ptr<Denoiser> clone() const override { return std::make_unique<ConvDenoiser>(*this); }

private:
    Shape latent_;
    int channels_;
    int hidden_;
};

/// Training data in latent space: one row per sample.
struct LatentDataset {
    Shape shape;
    Mat samples;
    std::vector<int> tokens;
};

struct DenoiserTrainConfig {
    int epochs = 40;
    int batch_size = 256;
    double lr = 2e-3;
    /// Fraction of rows whose condition is replaced by the null token (enables cfg).
    double cond_dropout = 0.1;
    std::uint64_t seed = 0;
};

struct DenoiserTrainResult {
    std::unique_ptr<Denoiser> model;
    std::vector<double> epoch_losses;  // mean squared eps error per epoch
};

/// Trains a fresh model (initialised from config.seed) on the dataset.
DenoiserTrainResult train_toy_denoiser(std::unique_ptr<Denoiser> fresh, const LatentDataset& data,
                                       const DenoiserTrainConfig& config);

nlohmann::json denoiser_to_json(const Denoiser& model);
std::unique_ptr<Denoiser> denoiser_from_json(const nlohmann::json& j);
void save_denoiser(const Denoiser& model, const std::string& path);
std::unique_ptr<Denoiser> load_denoiser(const std::string& path);

nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

/// Plain DDIM + classifier-free guidance sampling from N(0, I) drawn with config.seed.
Vec sample_base(const Denoiser& model, int prompt, const SamplerConfig& config);

/// Evaluates [null; prompt] in one batch and combines with the cfg scale.
Vec cfg_eps(const Denoiser& model, const Vec& z, int prompt, int t, double cfg_scale);

}  // namespace mghand
