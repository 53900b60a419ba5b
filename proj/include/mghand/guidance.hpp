#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mghand/backbone.hpp"
#include "mghand/denoiser.hpp"
#include "mghand/discriminator.hpp"
#include "mghand/lora.hpp"
#include "mghand/mask.hpp"
#include "mghand/schedule.hpp"

namespace mghand {

/// How guidance_start_step is counted: from the first sampler step, or as the
/// number of steps remaining before the end.
enum class StartStepMode { kFromStart, kFromEnd };
/// Second term of the textual merge: the adapter's residual over the base
/// prediction, or the adapted prediction itself.
enum class TextualMerge { kResidual, kLiteral };

std::string to_string(StartStepMode mode);
StartStepMode parse_start_step_mode(const std::string& name);
std::string to_string(TextualMerge merge);
TextualMerge parse_textual_merge(const std::string& name);

inline constexpr double kDefaultVisualWeight = 10.0;
inline constexpr double kDefaultTextualScale = 0.5;
inline constexpr double kDefaultMaskTau = 0.4;

struct GuidanceConfig {
    double w = kDefaultVisualWeight;
    double v = kDefaultTextualScale;
    double tau = kDefaultMaskTau;
    int window_t_high = 650;
    int window_t_low = 150;
    int guidance_start_step = 65;
    StartStepMode start_mode = StartStepMode::kFromEnd;
    TextualMerge merge = TextualMerge::kResidual;
    /// Extra 4-neighbourhood dilation of the gating mask (0 = off).
    int mask_dilation = 0;
};

/// Every violated invariant, empty when the config is valid.
std::vector<std::string> validate_guidance(const GuidanceConfig& cfg, int T);

nlohmann::json guidance_to_json(const GuidanceConfig& cfg);
GuidanceConfig guidance_from_json(const nlohmann::json& j);

bool in_window(int t, const GuidanceConfig& cfg);
/// in_window(t) AND the start-step gate for sampler step `step` of `num_steps`.
bool guidance_active(int step, int t, int num_steps, const GuidanceConfig& cfg);

/// Zeroes every channel of grad at latent cells where mask is 0.
Vec apply_mask(const Vec& grad, const BinaryGrid& latent_mask, const Shape& latent);

/// Read-only models taking part in a guided run.
struct GuidanceModels {
    const Denoiser* model = nullptr;
    const Backbone* backbone = nullptr;
    const Discriminator* discriminator = nullptr;
    const LoraAdapter* adapter = nullptr;
    const RegionDetector* detector = nullptr;
};

/// cfg-combined prediction with the textual term merged in (mask-gated).
/// direction_out receives the ungated textual direction when non-null.
Vec textual_eps(const GuidanceModels& m, const Vec& z, int prompt, int t, double cfg_scale, const GuidanceConfig& cfg,
                const BinaryGrid& latent_mask, Vec* direction_out = nullptr);

struct GuidanceObjective {
    double loss = 0.0;
    Vec grad;  // d loss / d z_t
};

/// loss(z) = mean((1 - f_D(decode(x0_hat(z)), prompt))^2) where x0_hat uses the
/// textual prediction of z, differentiated through the whole chain.
GuidanceObjective guidance_objective(const GuidanceModels& m, const Vec& z, int prompt, int t, double cfg_scale,
                                     const GuidanceConfig& cfg, const BinaryGrid& latent_mask);

/// eps_textual + w * apply_mask(grad). w = 0 returns eps_textual unchanged.
Vec visual_guidance_eps(const Vec& eps_textual, const GuidanceObjective& objective, const BinaryGrid& latent_mask,
                        const Shape& latent, double w, int step);

struct TraceRecord {
    int step = 0;
    int t = 0;
    bool active = false;
    std::size_t mask_area = 0;         // pixel mask after this step's update
    std::size_t latent_mask_area = 0;  // gating mask used at this step
    double grad_norm = 0.0;            // norm of the masked visual gradient
    double textual_norm = 0.0;         // norm of the masked textual term
    double outside_mask_max_abs = 0.0; // max |added term| outside the gating mask
    bool detector_failed = false;
};

nlohmann::json trace_record_to_json(const TraceRecord& r);

struct GuidedSample {
    Vec latent;
    Image image;
    CumulativeMask mask;
    std::vector<TraceRecord> trace;
};

/// DDIM + cfg sampling with windowed textual and visual guidance and a
/// cumulative detection mask. Starts from the same noise as sample_base.
GuidedSample sample_guided(const GuidanceModels& m, int prompt, const GuidanceConfig& cfg, const SamplerConfig& sampler);

}  // namespace mghand
