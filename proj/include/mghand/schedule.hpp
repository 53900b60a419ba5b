#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mghand/tensor.hpp"

namespace mghand {

enum class ScheduleKind { kLinearBeta, kCosine };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

// Linear-beta defaults for a 1000-step schedule (betas 1e-4 .. 2e-2).
inline constexpr int kDefaultTimesteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;
inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxCosineBeta = 0.999;
/// predict_x0 refuses alpha_bar below this value.
inline constexpr double kAlphaBarFloor = 1e-12;

/// Cumulative signal fractions alpha_bar[t], t = 0..T, with alpha_bar[0] = 1.
struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::kLinearBeta;
    double beta_start = kDefaultBetaStart;
    double beta_end = kDefaultBetaEnd;
    std::vector<double> alpha_bar;

    double at(int t) const;
};

NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::kLinearBeta,
                            double beta_start = kDefaultBetaStart, double beta_end = kDefaultBetaEnd);

/// z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps
Vec add_noise(const Vec& z0, int t, const Vec& eps, const NoiseSchedule& sched);

/// Inverts add_noise given a noise estimate.
Vec predict_x0(const Vec& z_t, const Vec& eps_hat, int t, const NoiseSchedule& sched);

/// One DDIM update from t to t_prev. noise is required when eta > 0.
Vec ddim_step(const Vec& z_t, const Vec& eps_hat, int t, int t_prev, const NoiseSchedule& sched, double eta,
              const Vec* noise = nullptr);

/// eps_u + scale * (eps_c - eps_u); scale 0 and 1 return the inputs unchanged.
Vec cfg_combine(const Vec& eps_uncond, const Vec& eps_cond, double scale);

/// Descending sampler timesteps T, ..., T/num_steps; the step after the last one lands on 0.
std::vector<int> ddim_timesteps(int T, int num_steps);

struct SamplerConfig {
    int num_steps = 100;
    double eta = 0.0;
    double cfg_scale = 3.0;
    std::uint64_t seed = 0;
};

}  // namespace mghand
