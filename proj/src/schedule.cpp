#include "mghand/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mghand/error.hpp"

namespace mghand {

std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::kCosine ? "cosine" : "linear-beta";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "linear-beta" || name == "linear") return ScheduleKind::kLinearBeta;
    if (name == "cosine") return ScheduleKind::kCosine;
    fail(ErrorCode::kInvalidArgument, "unknown schedule kind '" + name + "'");
}

double NoiseSchedule::at(int t) const {
    if (t < 0 || t > T) {
        fail(ErrorCode::kInvalidArgument,
             "timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    }
    return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int T, ScheduleKind kind, double beta_start, double beta_end) {
    if (T < 1) {
        fail(ErrorCode::kInvalidArgument, "schedule needs T >= 1, got " + std::to_string(T));
    }
    require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end,
            "linear-beta range must satisfy 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    if (kind == ScheduleKind::kLinearBeta) {
        for (int t = 1; t <= T; ++t) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
            const double beta = beta_start + (beta_end - beta_start) * frac;
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
        }
    } else {
        auto f = [T](int t) {
            const double x = (static_cast<double>(t) / T + kCosineOffset) / (1.0 + kCosineOffset);
            const double c = std::cos(x * std::numbers::pi / 2.0);
            return c * c;
        };
        const double f0 = f(0);
        for (int t = 1; t <= T; ++t) {
            double beta = 1.0 - (f(t) / f0) / (f(t - 1) / f0);
            beta = std::clamp(beta, 1e-12, kMaxCosineBeta);
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
        }
    }
    return s;
}

Vec add_noise(const Vec& z0, int t, const Vec& eps, const NoiseSchedule& sched) {
    require(z0.size() == eps.size(), "add_noise: z0 and eps shapes differ");
    const double ab = sched.at(t);
    return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

Vec predict_x0(const Vec& z_t, const Vec& eps_hat, int t, const NoiseSchedule& sched) {
    require(z_t.size() == eps_hat.size(), "predict_x0: z_t and eps_hat shapes differ");
    const double ab = sched.at(t);
    if (ab < kAlphaBarFloor) {
        fail(ErrorCode::kNumericalDegeneracy,
             "predict_x0: alpha_bar[" + std::to_string(t) + "] below floor 1e-12");
    }
    return (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

Vec ddim_step(const Vec& z_t, const Vec& eps_hat, int t, int t_prev, const NoiseSchedule& sched, double eta,
              const Vec* noise) {
    if (t_prev >= t) {
        fail(ErrorCode::kInvalidArgument,
             "ddim_step: t_prev (" + std::to_string(t_prev) + ") must be < t (" + std::to_string(t) + ")");
    }
    require(eta >= 0.0, "ddim_step: eta must be >= 0");
    const double ab = sched.at(t);
    const double ab_prev = sched.at(t_prev);
    Vec x0 = predict_x0(z_t, eps_hat, t, sched);
    if (t_prev == 0) {
        return x0;
    }
    double sigma = 0.0;
    if (eta > 0.0) {
        sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    Vec out = std::sqrt(ab_prev) * x0 + dir * eps_hat;
    if (sigma > 0.0) {
        require(noise != nullptr && noise->size() == z_t.size(), "ddim_step: eta > 0 needs a noise vector");
        out += sigma * (*noise);
    }
    return out;
}

Vec cfg_combine(const Vec& eps_uncond, const Vec& eps_cond, double scale) {
    require(eps_uncond.size() == eps_cond.size(), "cfg_combine: shapes differ");
    if (scale == 1.0) return eps_cond;
    if (scale == 0.0) return eps_uncond;
    return eps_uncond + scale * (eps_cond - eps_uncond);
}

std::vector<int> ddim_timesteps(int T, int num_steps) {
    require(num_steps >= 1 && num_steps <= T, "sampler steps must be in [1, T]");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(num_steps));
    for (int i = 0; i < num_steps; ++i) {
        ts.push_back(static_cast<int>((static_cast<long long>(T) * (num_steps - i)) / num_steps));
    }
    return ts;
}

}  // namespace mghand
