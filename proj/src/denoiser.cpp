#include "mghand/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mghand/error.hpp"
#include "mghand/io.hpp"
#include "mghand/lora.hpp"
#include "mghand/vocabulary.hpp"

namespace mghand {

Mat time_features(std::span<const int> timesteps, int T) {
    Mat f(static_cast<Eigen::Index>(timesteps.size()), kTimeFeatures);
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        const double s = static_cast<double>(timesteps[i]) / static_cast<double>(T);
        for (int k = 0; k < kTimeFeatures / 2; ++k) {
            const double w = std::ldexp(std::numbers::pi / 2.0, k);
            f(static_cast<Eigen::Index>(i), 2 * k) = std::sin(w * s);
            f(static_cast<Eigen::Index>(i), 2 * k + 1) = std::cos(w * s);
        }
    }
    return f;
}

Mat Denoiser::predict(const Mat& z, std::span<const int> tokens, std::span<const int> timesteps,
                      const LoraAdapter* adapter) const {
    ad::Tape tape(false);
    ParamBinder binder(tape, params_, ParamBinder::Mode::kFrozen, adapter);
    ad::Var out = forward(binder, tape.constant(z), tokens, timesteps);
    return out.value();
}

Vec Denoiser::predict(const Vec& z, int token, int t, const LoraAdapter* adapter) const {
    const int tok[1] = {token};
    const int ts[1] = {t};
    Mat out = predict(Mat(z.transpose()), tok, ts, adapter);
    return out.row(0).transpose();
}

namespace {

void check_inputs(const ad::Var& z, std::span<const int> tokens, std::span<const int> timesteps, int dim,
                  const NoiseSchedule& sched) {
    require(z.cols() == dim, "denoiser: latent width " + std::to_string(z.cols()) + " != " + std::to_string(dim));
    require(static_cast<std::size_t>(z.rows()) == tokens.size() && tokens.size() == timesteps.size(),
            "denoiser: batch sizes of z, tokens and timesteps differ");
    for (int t : timesteps) {
        require(t >= 0 && t <= sched.T, "denoiser: timestep outside schedule");
    }
}

}  // namespace

PointDenoiser::PointDenoiser(NoiseSchedule schedule, int hidden, std::uint64_t init_seed)
    : Denoiser(std::move(schedule)), hidden_(hidden) {
    require(hidden >= 1, "hidden width must be positive");
    Rng rng(init_seed);
    const int in = 2 + kTimeFeatures + kConditionDim;
    params_.add("embed.table", init_weight(rng, 1, vocab_size() * kConditionDim).reshaped(vocab_size(), kConditionDim));
    params_.add("fc1.weight", init_weight(rng, in, hidden));
    params_.add("fc1.bias", Mat::Zero(1, hidden));
    params_.add("fc2.weight", init_weight(rng, hidden, hidden));
    params_.add("fc2.bias", Mat::Zero(1, hidden));
    params_.add("fc3.weight", init_weight(rng, hidden, hidden));
    params_.add("fc3.bias", Mat::Zero(1, hidden));
    params_.add("out.weight", init_weight(rng, hidden, 2, 0.1));
    params_.add("out.bias", Mat::Zero(1, 2));
}

ad::Var PointDenoiser::forward(ParamBinder& p, const ad::Var& z, std::span<const int> tokens,
                               std::span<const int> timesteps) const {
    check_inputs(z, tokens, timesteps, 2, schedule_);
    ad::Tape& tape = p.tape();
    const ad::Var parts[3] = {z, tape.constant(time_features(timesteps, schedule_.T)),
                              ad::gather_rows(p.get("embed.table"), tokens)};
    ad::Var h = ad::concat_cols(parts);
    for (const char* layer : {"fc1", "fc2", "fc3"}) {
        h = ad::silu(ad::linear(h, p.weight(layer), p.bias(layer)));
    }
    return ad::linear(h, p.weight("out"), p.bias("out"));
}

nlohmann::json PointDenoiser::architecture() const { return {{"hidden", hidden_}}; }

ConvDenoiser::ConvDenoiser(NoiseSchedule schedule, Shape latent, int channels, int hidden, std::uint64_t init_seed)
    : Denoiser(std::move(schedule)), latent_(latent), channels_(channels), hidden_(hidden) {
    require(latent.channels == 1 && latent.height >= 2 && latent.width >= 2, "conv denoiser expects 1 x H x W latents");
    require(channels >= 1 && hidden >= 1, "conv denoiser widths must be positive");
    Rng rng(init_seed);
    const int c = channels;
    params_.add("embed.table", init_weight(rng, 1, vocab_size() * kConditionDim).reshaped(vocab_size(), kConditionDim));
    params_.add("temb.weight", init_weight(rng, kTimeFeatures + kConditionDim, hidden));
    params_.add("temb.bias", Mat::Zero(1, hidden));
    params_.add("mod1.weight", init_weight(rng, hidden, c));
    params_.add("mod1.bias", Mat::Zero(1, c));
    params_.add("mod2.weight", init_weight(rng, hidden, c));
    params_.add("mod2.bias", Mat::Zero(1, c));
    params_.add("conv1.weight", init_weight(rng, 9, c));
    params_.add("conv1.bias", Mat::Zero(1, c));
    params_.add("conv2.weight", init_weight(rng, 9 * c, c));
    params_.add("conv2.bias", Mat::Zero(1, c));
    params_.add("conv3.weight", init_weight(rng, 9 * c, c));
    params_.add("conv3.bias", Mat::Zero(1, c));
    params_.add("out.weight", init_weight(rng, 9 * c, 1, 0.1));
    params_.add("out.bias", Mat::Zero(1, 1));
}

ad::Var ConvDenoiser::forward(ParamBinder& p, const ad::Var& z, std::span<const int> tokens,
                              std::span<const int> timesteps) const {
    check_inputs(z, tokens, timesteps, latent_.size(), schedule_);
    ad::Tape& tape = p.tape();
    const ad::Var cond[2] = {tape.constant(time_features(timesteps, schedule_.T)),
                             ad::gather_rows(p.get("embed.table"), tokens)};
    ad::Var h = ad::silu(ad::linear(ad::concat_cols(cond), p.weight("temb"), p.bias("temb")));

    const ad::Geometry in{1, latent_.height, latent_.width};
    const ad::Geometry feat{channels_, latent_.height, latent_.width};
    ad::Var a = ad::conv3x3(z, in, p.weight("conv1"), p.bias("conv1"));
    a = ad::silu(ad::add_channel_bias(a, feat, ad::linear(h, p.weight("mod1"), p.bias("mod1"))));
    a = ad::conv3x3(a, feat, p.weight("conv2"), p.bias("conv2"));
    a = ad::silu(ad::add_channel_bias(a, feat, ad::linear(h, p.weight("mod2"), p.bias("mod2"))));
    a = ad::silu(ad::conv3x3(a, feat, p.weight("conv3"), p.bias("conv3")));
    return ad::conv3x3(a, feat, p.weight("out"), p.bias("out"));
}

nlohmann::json ConvDenoiser::architecture() const {
    return {{"channels", channels_},
            {"hidden", hidden_},
            {"latent", {latent_.channels, latent_.height, latent_.width}}};
}

DenoiserTrainResult train_toy_denoiser(std::unique_ptr<Denoiser> model, const LatentDataset& data,
                                       const DenoiserTrainConfig& config) {
    require(model != nullptr, "train_toy_denoiser: no model");
    require(data.samples.rows() > 0, "train_toy_denoiser: empty dataset");
    require(data.samples.cols() == model->latent_shape().size(), "train_toy_denoiser: dataset shape mismatch");
    require(static_cast<Eigen::Index>(data.tokens.size()) == data.samples.rows(), "train_toy_denoiser: token count mismatch");
    require(config.epochs >= 1 && config.batch_size >= 1, "train_toy_denoiser: epochs and batch size must be positive");

    const NoiseSchedule& sched = model->schedule();
    Rng rng(config.seed);
    std::uniform_int_distribution<int> t_dist(1, sched.T);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    AdamW opt(AdamConfig{config.lr});

    const auto n = static_cast<std::size_t>(data.samples.rows());
    const Eigen::Index dim = data.samples.cols();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    DenoiserTrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
            const auto b = static_cast<Eigen::Index>(end - start);
            Mat zt(b, dim);
            Mat eps(b, dim);
            std::vector<int> tokens(static_cast<std::size_t>(b));
            std::vector<int> ts(static_cast<std::size_t>(b));
            for (Eigen::Index r = 0; r < b; ++r) {
                const std::size_t idx = order[start + static_cast<std::size_t>(r)];
                const int t = t_dist(rng);
                const double ab = sched.at(t);
                Vec e = standard_normal(rng, dim);
                eps.row(r) = e.transpose();
                zt.row(r) = std::sqrt(ab) * data.samples.row(static_cast<Eigen::Index>(idx)) + std::sqrt(1.0 - ab) * e.transpose();
                ts[static_cast<std::size_t>(r)] = t;
                tokens[static_cast<std::size_t>(r)] = u01(rng) < config.cond_dropout ? kNullToken : data.tokens[idx];
            }
            ad::Tape tape;
            ParamBinder binder(tape, model->params(), ParamBinder::Mode::kTrainBase);
            ad::Var loss = ad::mse(model->forward(binder, tape.constant(zt), tokens, ts), eps);
            const double lv = loss.value()(0, 0);
            if (!std::isfinite(lv)) {
                fail(ErrorCode::kTrainingDiverged, "denoiser training diverged in epoch " + std::to_string(epoch + 1));
            }
            tape.backward(loss);
            std::map<std::string, Mat*> ptrs;
            for (auto& [name, m] : model->params().all()) ptrs.emplace(name, &m);
            opt.step(ptrs, binder.gradients());
            total += lv * static_cast<double>(b);
        }
        result.epoch_losses.push_back(total / static_cast<double>(n));
    }
    model->seed = config.seed;
    nlohmann::json cfg = {{"epochs", config.epochs},
                          {"batch_size", config.batch_size},
                          {"lr", config.lr},
                          {"cond_dropout", config.cond_dropout},
                          {"seed", config.seed},
                          {"samples", data.samples.rows()},
                          {"architecture", model->architecture()},
                          {"schedule", schedule_to_json(sched)}};
    model->config_hash = hash_hex(cfg.dump());
    result.model = std::move(model);
    return result;
}

nlohmann::json schedule_to_json(const NoiseSchedule& s) {
    return {{"T", s.T}, {"kind", to_string(s.kind)}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
    return make_schedule(j.at("T").get<int>(), parse_schedule_kind(j.at("kind").get<std::string>()),
                         j.value("beta_start", kDefaultBetaStart), j.value("beta_end", kDefaultBetaEnd));
}

nlohmann::json denoiser_to_json(const Denoiser& model) {
    return {{"format", "mghand.denoiser"},
            {"version", 1},
            {"kind", model.kind()},
            {"architecture", model.architecture()},
            {"schedule", schedule_to_json(model.schedule())},
            {"seed", model.seed},
            {"config_hash", model.config_hash},
            {"checksum", model.checksum()},
            {"params", params_to_json(model.params())}};
}

std::unique_ptr<Denoiser> denoiser_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mghand.denoiser") {
        fail(ErrorCode::kIo, "not a denoiser checkpoint");
    }
    const std::string kind = j.at("kind").get<std::string>();
    const auto& arch = j.at("architecture");
    NoiseSchedule sched = schedule_from_json(j.at("schedule"));
    std::unique_ptr<Denoiser> model;
    if (kind == "point-mlp") {
        model = std::make_unique<PointDenoiser>(sched, arch.at("hidden").get<int>(), 0);
    } else if (kind == "conv") {
        const auto l = arch.at("latent").get<std::vector<int>>();
        model = std::make_unique<ConvDenoiser>(sched, Shape{l.at(0), l.at(1), l.at(2)}, arch.at("channels").get<int>(),
                                               arch.at("hidden").get<int>(), 0);
    } else {
        fail(ErrorCode::kIo, "unknown denoiser kind '" + kind + "'");
    }
    ParamStore loaded = params_from_json(j.at("params"));
    for (const auto& [name, m] : model->params().all()) {
        const Mat& src = loaded.at(name);
        if (src.rows() != m.rows() || src.cols() != m.cols()) {
            fail(ErrorCode::kIo, "checkpoint parameter '" + name + "' has the wrong shape");
        }
    }
    model->params() = std::move(loaded);
    model->seed = j.at("seed").get<std::uint64_t>();
    model->config_hash = j.at("config_hash").get<std::string>();
    if (j.contains("checksum") && j.at("checksum").get<std::string>() != model->checksum()) {
        fail(ErrorCode::kIo, "denoiser checkpoint checksum mismatch");
    }
    return model;
}

void save_denoiser(const Denoiser& model, const std::string& path) {
    io::write_text_atomic(path, denoiser_to_json(model).dump() + "\n");
}

std::unique_ptr<Denoiser> load_denoiser(const std::string& path) { return denoiser_from_json(io::read_json(path)); }

Vec cfg_eps(const Denoiser& model, const Vec& z, int prompt, int t, double cfg_scale) {
    Mat zz(2, z.size());
    zz.row(0) = z.transpose();
    zz.row(1) = z.transpose();
    const int tokens[2] = {kNullToken, prompt};
    const int ts[2] = {t, t};
    Mat e = model.predict(zz, tokens, ts);
    return cfg_combine(e.row(0).transpose(), e.row(1).transpose(), cfg_scale);
}

Vec sample_base(const Denoiser& model, int prompt, const SamplerConfig& config) {
    const NoiseSchedule& sched = model.schedule();
    const auto ts = ddim_timesteps(sched.T, config.num_steps);
    Rng rng(config.seed);
    const int dim = model.latent_shape().size();
    Vec z = standard_normal(rng, dim);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        Vec eps = cfg_eps(model, z, prompt, t, config.cfg_scale);
        if (config.eta > 0.0) {
            Vec noise = standard_normal(rng, dim);
            z = ddim_step(z, eps, t, t_prev, sched, config.eta, &noise);
        } else {
            z = ddim_step(z, eps, t, t_prev, sched, config.eta);
        }
    }
    return z;
}

}  // namespace mghand
