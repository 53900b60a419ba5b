#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mghand/autodiff.hpp"
#include "mghand/backbone.hpp"
#include "mghand/nn.hpp"

namespace mghand {

/// Length of the score vector f_D produces (and of the all-ones guidance target).
inline constexpr int kScoreDim = 4;

enum class DiscriminatorLoss {
    kLeastSquares,  // MSE on raw head outputs against {0,1} targets
    kSigmoidMse,    // MSE on sigmoid(head)
};
std::string to_string(DiscriminatorLoss loss);
DiscriminatorLoss parse_discriminator_loss(const std::string& name);

/// Conditional real/fake scorer over decoded pixels and a prompt token.
///
/// Points: MLP feature extractor. Images: avgpool, conv 1->8, pool, conv 8->8, pool.
/// Features are concatenated with a token embedding and mapped to kScoreDim scores.
class Discriminator {
public:
    Discriminator(BackboneKind backbone, DiscriminatorLoss loss, std::uint64_t init_seed);

    BackboneKind backbone_kind() const { return backbone_; }
    Shape input_shape() const { return input_; }
    DiscriminatorLoss loss() const { return loss_; }

    /// Rows of pixels (flattened) and one token per row; returns rows x kScoreDim.
    ad::Var forward(ParamBinder& params, const ad::Var& pixels, std::span<const int> tokens) const;
    /// Deterministic, never augments.
    Vec score(const Image& image, int token) const;
    Mat score(const Mat& pixels, std::span<const int> tokens) const;

    nlohmann::json architecture() const;
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }
    std::string checksum() const { return params_.checksum(); }

    std::uint64_t seed = 0;
    std::string config_hash;

private:
    ad::Var features(ParamBinder& p, const ad::Var& pixels) const;

    BackboneKind backbone_;
    Shape input_;
    DiscriminatorLoss loss_;
    ParamStore params_;
};

/// Labelled pixel samples: label 1 = real, 0 = fake.
struct DiscriminatorDataset {
    Mat pixels;
    std::vector<int> tokens;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

struct DiscriminatorTrainConfig {
    int epochs = 120;
    int batch_size = 64;
    double lr = 1e-3;
    bool augment = true;
    DiscriminatorLoss loss = DiscriminatorLoss::kLeastSquares;
    std::uint64_t seed = 0;
};

struct DiscriminatorTrainResult {
    Discriminator model;
    std::vector<double> epoch_losses;
};

DiscriminatorTrainResult train_discriminator(BackboneKind backbone, const DiscriminatorDataset& data,
                                             const DiscriminatorTrainConfig& config);

/// Fraction of samples whose mean score, thresholded at 0.5, matches the label.
double discriminator_accuracy(const Discriminator& model, const DiscriminatorDataset& data);

/// Random train-time perturbation of one flattened sample.
Vec augment_sample(BackboneKind backbone, const Vec& pixels, Rng& rng);

nlohmann::json discriminator_to_json(const Discriminator& model);
Discriminator discriminator_from_json(const nlohmann::json& j);
void save_discriminator(const Discriminator& model, const std::string& path);
Discriminator load_discriminator(const std::string& path);

}  // namespace mghand
