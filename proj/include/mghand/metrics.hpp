#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mghand/backbone.hpp"
#include "mghand/mask.hpp"

namespace mghand {

/// N x d feature matrix from an image embedder.
struct FeatureSet {
    Mat features;
    std::string source;
};

FeatureSet extract_features(const Backbone& bb, std::span<const Image> images, const std::string& source);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)); covariances use N - 1.
double compute_fid(const FeatureSet& a, const FeatureSet& b);

struct KidResult {
    double mean = 0.0;
    double std_error = 0.0;
    int subset_size = 0;
    int subsets = 0;
    std::uint64_t seed = 0;
};

/// Unbiased MMD^2 with kernel (x.y / d + 1)^3, averaged over random subsets.
KidResult compute_kid(const FeatureSet& a, const FeatureSet& b, int subset_size, int subsets, std::uint64_t seed);

inline constexpr double kDefaultDetectTau = 0.4;

/// Mean top-detection score over images where a region is found. With
/// include_undetected, images without a region count as 0. Empty optional when
/// no image is counted.
std::optional<double> hand_confidence(std::span<const Image> images, const RegionDetector& detector,
                                      bool include_undetected = false);

/// Fraction of images with at least one detection scoring >= tau_detect.
double hand_probability(std::span<const Image> images, const RegionDetector& detector,
                        double tau_detect = kDefaultDetectTau);

/// Shared text/image space for the synthetic worlds: an image embeds as
/// [1, standardised features]; a token embeds as the mean image embedding of
/// data drawn for it.
class ToyJointEmbedder {
public:
    static ToyJointEmbedder fit(const Backbone& bb, int samples_per_token, std::uint64_t seed);

    Vec embed_image(const Image& image) const;
    Vec embed_token(int token) const;

private:
    const Backbone* backbone_ = nullptr;
    Vec mean_;
    Vec scale_;
    Mat prototypes_;  // vocab_size x (1 + d)
};

/// 100 * mean cosine similarity between paired image and prompt embeddings.
double text_image_similarity(std::span<const Image> images, std::span<const int> prompts,
                             const ToyJointEmbedder& embedder);

struct MetricsReport {
    std::optional<double> fid;
    std::optional<double> kid;
    std::optional<double> kid_std_error;
    std::optional<double> hand_confidence;
    std::optional<double> hand_probability;
    std::optional<double> text_image_similarity;
    nlohmann::json metadata = nlohmann::json::object();

    bool operator==(const MetricsReport&) const = default;
};

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
void write_report(const MetricsReport& report, const std::string& path);
MetricsReport read_report(const std::string& path);

/// Markdown comparison table, rows sorted by FID ascending (missing FID last).
std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace mghand
