#include "mghand/guidance.hpp"

#include <cmath>

#include "mghand/error.hpp"
#include "mghand/vocabulary.hpp"

namespace mghand {

std::string to_string(StartStepMode mode) { return mode == StartStepMode::kFromStart ? "from-start" : "from-end"; }

StartStepMode parse_start_step_mode(const std::string& name) {
    if (name == "from-start") return StartStepMode::kFromStart;
    if (name == "from-end") return StartStepMode::kFromEnd;
    fail(ErrorCode::kInvalidArgument, "unknown start-step mode '" + name + "'");
}

std::string to_string(TextualMerge merge) { return merge == TextualMerge::kResidual ? "residual" : "literal"; }

TextualMerge parse_textual_merge(const std::string& name) {
    if (name == "residual") return TextualMerge::kResidual;
    if (name == "literal") return TextualMerge::kLiteral;
    fail(ErrorCode::kInvalidArgument, "unknown textual merge '" + name + "'");
}

std::vector<std::string> validate_guidance(const GuidanceConfig& cfg, int T) {
    std::vector<std::string> errors;
    if (!(cfg.w >= 0.0) || !std::isfinite(cfg.w)) errors.push_back("guidance.w: must be finite and >= 0");
    if (!std::isfinite(cfg.v)) errors.push_back("guidance.v: must be finite");
    if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0)) errors.push_back("guidance.tau: must lie in [0, 1]");
    if (cfg.window_t_low < 0) errors.push_back("guidance.window_t_low: must be >= 0");
    if (cfg.window_t_low >= cfg.window_t_high) {
        errors.push_back("guidance.window_t_low: must be < window_t_high");
    }
    if (cfg.window_t_high > T) errors.push_back("guidance.window_t_high: must be <= T (" + std::to_string(T) + ")");
    if (cfg.guidance_start_step < 0) errors.push_back("guidance.guidance_start_step: must be >= 0");
    if (cfg.mask_dilation < 0) errors.push_back("guidance.mask_dilation: must be >= 0");
    return errors;
}

nlohmann::json guidance_to_json(const GuidanceConfig& cfg) {
    return {{"w", cfg.w},
            {"v", cfg.v},
            {"tau", cfg.tau},
            {"window_t_high", cfg.window_t_high},
            {"window_t_low", cfg.window_t_low},
            {"guidance_start_step", cfg.guidance_start_step},
            {"start_mode", to_string(cfg.start_mode)},
            {"textual_merge", to_string(cfg.merge)},
            {"mask_dilation", cfg.mask_dilation}};
}

GuidanceConfig guidance_from_json(const nlohmann::json& j) {
    GuidanceConfig c;
    c.w = j.value("w", c.w);
    c.v = j.value("v", c.v);
    c.tau = j.value("tau", c.tau);
    c.window_t_high = j.value("window_t_high", c.window_t_high);
    c.window_t_low = j.value("window_t_low", c.window_t_low);
    c.guidance_start_step = j.value("guidance_start_step", c.guidance_start_step);
    c.start_mode = parse_start_step_mode(j.value("start_mode", to_string(c.start_mode)));
    c.merge = parse_textual_merge(j.value("textual_merge", to_string(c.merge)));
    c.mask_dilation = j.value("mask_dilation", c.mask_dilation);
    return c;
}

bool in_window(int t, const GuidanceConfig& cfg) { return cfg.window_t_low <= t && t <= cfg.window_t_high; }

bool guidance_active(int step, int t, int num_steps, const GuidanceConfig& cfg) {
    if (!in_window(t, cfg)) return false;
    if (cfg.start_mode == StartStepMode::kFromStart) return step >= cfg.guidance_start_step;
    return num_steps - step <= cfg.guidance_start_step;
}

Vec apply_mask(const Vec& grad, const BinaryGrid& mask, const Shape& latent) {
    if (mask.height != latent.height || mask.width != latent.width) {
        fail(ErrorCode::kInvalidArgument, "apply_mask: mask " + std::to_string(mask.height) + "x" +
                                              std::to_string(mask.width) + " does not match latent " + latent.str());
    }
    require(grad.size() == latent.size(), "apply_mask: gradient size does not match latent shape");
    Vec out = grad;
    const int plane = latent.height * latent.width;
    for (int c = 0; c < latent.channels; ++c) {
        for (int i = 0; i < plane; ++i) {
            if (mask.cells[static_cast<std::size_t>(i)] == 0) out(c * plane + i) = 0.0;
        }
    }
    return out;
}

namespace {

Mat mask_row(const BinaryGrid& mask, const Shape& latent) {
    Mat row(1, latent.size());
    const int plane = latent.height * latent.width;
    for (int c = 0; c < latent.channels; ++c) {
        for (int i = 0; i < plane; ++i) row(0, c * plane + i) = mask.cells[static_cast<std::size_t>(i)];
    }
    return row;
}

void check_models(const GuidanceModels& m) {
    require(m.model != nullptr && m.backbone != nullptr, "guidance needs a denoiser and a backbone");
    require(m.model->latent_shape() == m.backbone->latent_shape(), "denoiser and backbone latent shapes differ");
}

/// v * mask * direction, or an empty vector when textual guidance is off.
Vec textual_term(const GuidanceModels& m, const Vec& z, int prompt, int t, const GuidanceConfig& cfg,
                 const BinaryGrid& latent_mask, Vec* direction_out) {
    if (m.adapter == nullptr || cfg.v == 0.0) return {};
    Vec dir = m.model->predict(z, prompt, t, m.adapter);
    if (cfg.merge == TextualMerge::kResidual) dir -= m.model->predict(z, prompt, t);
    if (direction_out != nullptr) *direction_out = dir;
    return cfg.v * apply_mask(dir, latent_mask, m.model->latent_shape());
}

}  // namespace

Vec textual_eps(const GuidanceModels& m, const Vec& z, int prompt, int t, double cfg_scale, const GuidanceConfig& cfg,
                const BinaryGrid& latent_mask, Vec* direction_out) {
    check_models(m);
    Vec eps = cfg_eps(*m.model, z, prompt, t, cfg_scale);
    Vec term = textual_term(m, z, prompt, t, cfg, latent_mask, direction_out);
    return term.size() == 0 ? eps : Vec(eps + term);
}

GuidanceObjective guidance_objective(const GuidanceModels& m, const Vec& z, int prompt, int t, double cfg_scale,
                                     const GuidanceConfig& cfg, const BinaryGrid& latent_mask) {
    check_models(m);
    require(m.discriminator != nullptr, "visual guidance needs a discriminator");
    const NoiseSchedule& sched = m.model->schedule();
    const double ab = sched.at(t);
    if (ab < kAlphaBarFloor) {
        fail(ErrorCode::kNumericalDegeneracy, "guidance: alpha_bar[" + std::to_string(t) + "] below floor");
    }
    const int tok[1] = {prompt};
    const int null_tok[1] = {kNullToken};
    const int ts[1] = {t};

    ad::Tape tape;
    ad::Var zv = tape.parameter(Mat(z.transpose()));
    ParamBinder base(tape, m.model->params());
    ad::Var eps_c = m.model->forward(base, zv, tok, ts);
    ad::Var eps;
    if (cfg_scale == 1.0) {
        eps = eps_c;
    } else {
        ad::Var eps_u = m.model->forward(base, zv, null_tok, ts);
        eps = cfg_scale == 0.0 ? eps_u : ad::add(eps_u, ad::scale(ad::sub(eps_c, eps_u), cfg_scale));
    }
    if (m.adapter != nullptr && cfg.v != 0.0) {
        ParamBinder adapted(tape, m.model->params(), ParamBinder::Mode::kFrozen, m.adapter);
        ad::Var dir = m.model->forward(adapted, zv, tok, ts);
        if (cfg.merge == TextualMerge::kResidual) dir = ad::sub(dir, eps_c);
        eps = ad::add(eps, ad::scale(ad::mul_const(dir, mask_row(latent_mask, m.model->latent_shape())), cfg.v));
    }
    ad::Var x0 = ad::scale(ad::sub(zv, ad::scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
    ParamBinder disc(tape, m.discriminator->params());
    ad::Var scores = m.discriminator->forward(disc, m.backbone->decode(x0), tok);
    ad::Var loss = ad::mse(scores, Mat::Ones(1, kScoreDim));
    tape.backward(loss);

    GuidanceObjective out;
    out.loss = loss.value()(0, 0);
    out.grad = tape.grad(zv).row(0).transpose();
    return out;
}

Vec visual_guidance_eps(const Vec& eps_textual, const GuidanceObjective& objective, const BinaryGrid& latent_mask,
                        const Shape& latent, double w, int step) {
    if (w == 0.0) return eps_textual;
    if (!all_finite(objective.grad) || !std::isfinite(objective.loss)) {
        fail(ErrorCode::kGuidanceDiverged, "visual guidance gradient is not finite at step " + std::to_string(step));
    }
    return eps_textual + w * apply_mask(objective.grad, latent_mask, latent);
}

nlohmann::json trace_record_to_json(const TraceRecord& r) {
    return {{"step", r.step},
            {"t", r.t},
            {"active", r.active},
            {"mask_area", r.mask_area},
            {"latent_mask_area", r.latent_mask_area},
            {"grad_norm", r.grad_norm},
            {"textual_norm", r.textual_norm},
            {"outside_mask_max_abs", r.outside_mask_max_abs},
            {"detector_failed", r.detector_failed}};
}

GuidedSample sample_guided(const GuidanceModels& m, int prompt, const GuidanceConfig& cfg, const SamplerConfig& sampler) {
    check_models(m);
    const Denoiser& model = *m.model;
    const Backbone& bb = *m.backbone;
    const NoiseSchedule& sched = model.schedule();
    if (auto errors = validate_guidance(cfg, sched.T); !errors.empty()) fail(ErrorCode::kConfig, errors.front());
    if (cfg.w != 0.0) require(m.discriminator != nullptr, "visual guidance weight w > 0 needs a discriminator");

    std::unique_ptr<RegionDetector> owned;
    const RegionDetector* detector = m.detector;
    if (detector == nullptr) {
        owned = bb.make_detector();
        detector = owned.get();
    }

    const Shape latent = model.latent_shape();
    const Shape pixel = bb.pixel_shape();
    const auto ts = ddim_timesteps(sched.T, sampler.num_steps);
    Rng rng(sampler.seed);
    const int dim = latent.size();
    Vec z = standard_normal(rng, dim);

    GuidedSample out;
    out.mask = init_mask(pixel.height, pixel.width);
    const bool guiding = cfg.w != 0.0 || (m.adapter != nullptr && cfg.v != 0.0);

    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const int step = static_cast<int>(i);
        TraceRecord rec;
        rec.step = step;
        rec.t = t;

        const Vec eps_cfg = cfg_eps(model, z, prompt, t, sampler.cfg_scale);
        if (in_window(t, cfg)) {
            try {
                const Image x0 = bb.decode(predict_x0(z, eps_cfg, t, sched));
                if (!all_finite(x0.data)) fail(ErrorCode::kNumericalDegeneracy, "decoded estimate is not finite");
                const auto dets = detector->detect_all(x0);
                out.mask = update_mask(out.mask, dets, cfg.tau);
            } catch (const std::exception&) {
                rec.detector_failed = true;
            }
        }
        rec.mask_area = out.mask.area();
        rec.active = guidance_active(step, t, sampler.num_steps, cfg);

        Vec eps = eps_cfg;
        if (rec.active && guiding) {
            BinaryGrid gate(latent.height, latent.width, 1);
            if (bb.spatial()) {
                gate = downsample_mask(dilate(out.mask.grid, cfg.mask_dilation), latent.height, latent.width);
            }
            rec.latent_mask_area = gate.area();
            if (gate.area() > 0) {
                const Vec term = textual_term(m, z, prompt, t, cfg, gate, nullptr);
                if (term.size() != 0) {
                    eps = eps_cfg + term;
                    rec.textual_norm = term.norm();
                }
                if (cfg.w != 0.0) {
                    const GuidanceObjective obj = guidance_objective(m, z, prompt, t, sampler.cfg_scale, cfg, gate);
                    eps = visual_guidance_eps(eps, obj, gate, latent, cfg.w, step);
                    rec.grad_norm = apply_mask(obj.grad, gate, latent).norm();
                }
                const Vec added = eps - eps_cfg;
                const int plane = latent.height * latent.width;
                for (int c = 0; c < latent.channels; ++c) {
                    for (int k = 0; k < plane; ++k) {
                        if (gate.cells[static_cast<std::size_t>(k)] == 0) {
                            rec.outside_mask_max_abs = std::max(rec.outside_mask_max_abs, std::abs(added(c * plane + k)));
                        }
                    }
                }
            }
        }

        if (sampler.eta > 0.0) {
            Vec noise = standard_normal(rng, dim);
            z = ddim_step(z, eps, t, t_prev, sched, sampler.eta, &noise);
        } else {
            z = ddim_step(z, eps, t, t_prev, sched, sampler.eta);
        }
        out.trace.push_back(rec);
    }
    out.latent = z;
    out.image = bb.decode(z);
    return out;
}

}  // namespace mghand
