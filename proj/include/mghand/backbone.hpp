#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "mghand/autodiff.hpp"
#include "mghand/denoiser.hpp"
#include "mghand/mask.hpp"

namespace mghand {

enum class BackboneKind { kPoints, kImage };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone(const std::string& name);

// Point world: positive prompts live in mode A, negative prompts in mode B,
// the neutral and null prompts in an even mixture of both.
inline const Vec& point_mode_a() {
    static const Vec v = (Vec(2) << 2.0, 0.0).finished();
    return v;
}
inline const Vec& point_mode_b() {
    static const Vec v = (Vec(2) << -2.0, 0.0).finished();
    return v;
}
inline constexpr double kPointModeStd = 0.5;

// Image world: 1x16x16 latents decoded to 1x32x32 pixels. Positive prompts show
// a crisp bright square, negative prompts a dim blurred one.
inline constexpr int kImageLatentSize = 16;
inline constexpr int kImagePixelSize = 32;

/// A reference backbone: latent geometry, decoder, synthetic data and evaluation hooks.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual BackboneKind kind() const = 0;
    virtual Shape latent_shape() const = 0;
    virtual Shape pixel_shape() const = 0;
    /// Whether masks have spatial structure (false: the mask is a single always-on cell).
    virtual bool spatial() const = 0;

    virtual Image decode(const Vec& latent) const = 0;
    virtual ad::Var decode(const ad::Var& latents) const = 0;

    /// Draws one latent-space sample of the synthetic world for a prompt token.
    virtual Vec sample_data(int token, Rng& rng) const = 0;
    /// Evaluation embedding of a decoded sample.
    virtual Vec features(const Image& pixels) const = 0;
    /// True when a latent belongs to the prompt-positive ("mode A") population.
    virtual bool in_target_mode(const Vec& latent) const = 0;

    virtual std::unique_ptr<Denoiser> make_denoiser(const NoiseSchedule& schedule, std::uint64_t seed) const = 0;
    virtual std::unique_ptr<RegionDetector> make_detector() const = 0;
};

const Backbone& backbone(BackboneKind kind);

/// n samples: 40% neutral prompt, 30% positive prompts, 30% negative prompts.
LatentDataset make_synthetic_dataset(const Backbone& bb, int n, std::uint64_t seed);

}  // namespace mghand
