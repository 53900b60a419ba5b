#include "mghand/config.hpp"

#include <cmath>
#include <set>

#include "mghand/error.hpp"
#include "mghand/io.hpp"
#include "mghand/vocabulary.hpp"

namespace mghand {

nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["backbone"] = to_string(c.backbone);
    j["schedule"] = {{"T", c.T}, {"kind", to_string(c.schedule)}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
    j["sampler"] = {{"num_steps", c.sampler.num_steps}, {"eta", c.sampler.eta}, {"cfg_scale", c.sampler.cfg_scale}};
    j["guidance"] = guidance_to_json(c.guidance);
    j["prompt"] = c.prompt;
    j["num_samples"] = c.num_samples;
    j["checkpoints"] = {{"denoiser", c.checkpoints.denoiser},
                        {"discriminator", c.checkpoints.discriminator},
                        {"adapter", c.checkpoints.adapter}};
    j["detector"] = c.detector;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
    const auto& d = c.train_denoiser;
    j["train_denoiser"] = {{"dataset_size", d.dataset_size}, {"epochs", d.epochs}, {"batch_size", d.batch_size},
                           {"lr", d.lr}, {"cond_dropout", d.cond_dropout}};
    const auto& s = c.train_discriminator;
    j["train_discriminator"] = {{"manifest", s.manifest}, {"epochs", s.epochs}, {"batch_size", s.batch_size},
                                {"lr", s.lr}, {"augment", s.augment}, {"loss", s.loss}};
    const auto& l = c.train_lora;
    j["train_lora"] = {{"rank", l.rank},
                       {"lr", l.lr},
                       {"steps", l.steps},
                       {"v_train", l.v_train},
                       {"batch_size", l.batch_size},
                       {"weight_decay", l.weight_decay},
                       {"triples", l.triples},
                       {"targets", l.targets},
                       {"anchor_count", l.anchor_count},
                       {"anchor_steps", l.anchor_steps}};
    const auto& b = c.dataset;
    j["dataset"] = {{"input", b.input},
                    {"threshold", b.threshold},
                    {"captioner", b.captioner},
                    {"max_source_share", b.max_source_share},
                    {"fake_ratio", b.fake_ratio},
                    {"max_caption_failure_rate", b.max_caption_failure_rate},
                    {"fixture_per_source", b.fixture_per_source}};
    const auto& e = c.evaluation;
    j["evaluation"] = {{"reference_samples", e.reference_samples},
                       {"kid_subset_size", e.kid_subset_size},
                       {"kid_subsets", e.kid_subsets},
                       {"tau_detect", e.tau_detect},
                       {"embedder_samples", e.embedder_samples},
                       {"include_undetected", e.include_undetected},
                       {"compare_base", e.compare_base}};
    return j;
}

namespace {

void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(ErrorCode::kConfig, where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items()) {
        if (ok.count(key) == 0) fail(ErrorCode::kConfig, (where.empty() ? "" : where + ".") + key + ": unknown field");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(ErrorCode::kConfig, where + "." + key + ": wrong type");
    }
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
    check_keys(j, "", {"backbone", "schedule", "sampler", "guidance", "prompt", "num_samples", "checkpoints", "detector",
                       "output_dir", "seed", "train_denoiser", "train_discriminator", "train_lora", "dataset",
                       "evaluation"});
    RunConfig c;
    try {
        if (j.contains("backbone")) c.backbone = parse_backbone(j.at("backbone").get<std::string>());
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            check_keys(s, "schedule", {"T", "kind", "beta_start", "beta_end"});
            read(s, "T", c.T, "schedule");
            if (s.contains("kind")) c.schedule = parse_schedule_kind(s.at("kind").get<std::string>());
            read(s, "beta_start", c.beta_start, "schedule");
            read(s, "beta_end", c.beta_end, "schedule");
        }
        if (j.contains("sampler")) {
            const auto& s = j.at("sampler");
            check_keys(s, "sampler", {"num_steps", "eta", "cfg_scale"});
            read(s, "num_steps", c.sampler.num_steps, "sampler");
            read(s, "eta", c.sampler.eta, "sampler");
            read(s, "cfg_scale", c.sampler.cfg_scale, "sampler");
        }
        if (j.contains("guidance")) {
            check_keys(j.at("guidance"), "guidance",
                       {"w", "v", "tau", "window_t_high", "window_t_low", "guidance_start_step", "start_mode",
                        "textual_merge", "mask_dilation"});
            c.guidance = guidance_from_json(j.at("guidance"));
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::kConfig) throw;
        fail(ErrorCode::kConfig, e.what());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kConfig, std::string("config: ") + e.what());
    }
    read(j, "prompt", c.prompt, "");
    read(j, "num_samples", c.num_samples, "");
    if (j.contains("checkpoints")) {
        const auto& s = j.at("checkpoints");
        check_keys(s, "checkpoints", {"denoiser", "discriminator", "adapter"});
        read(s, "denoiser", c.checkpoints.denoiser, "checkpoints");
        read(s, "discriminator", c.checkpoints.discriminator, "checkpoints");
        read(s, "adapter", c.checkpoints.adapter, "checkpoints");
    }
    read(j, "detector", c.detector, "");
    read(j, "output_dir", c.output_dir, "");
    if (j.contains("seed") && !j.at("seed").is_null()) {
        std::uint64_t seed = 0;
        read(j, "seed", seed, "");
        c.seed = seed;
    }
    if (j.contains("train_denoiser")) {
        const auto& s = j.at("train_denoiser");
        check_keys(s, "train_denoiser", {"dataset_size", "epochs", "batch_size", "lr", "cond_dropout"});
        auto& d = c.train_denoiser;
        read(s, "dataset_size", d.dataset_size, "train_denoiser");
        read(s, "epochs", d.epochs, "train_denoiser");
        read(s, "batch_size", d.batch_size, "train_denoiser");
        read(s, "lr", d.lr, "train_denoiser");
        read(s, "cond_dropout", d.cond_dropout, "train_denoiser");
    }
    if (j.contains("train_discriminator")) {
        const auto& s = j.at("train_discriminator");
        check_keys(s, "train_discriminator", {"manifest", "epochs", "batch_size", "lr", "augment", "loss"});
        auto& d = c.train_discriminator;
        read(s, "manifest", d.manifest, "train_discriminator");
        read(s, "epochs", d.epochs, "train_discriminator");
        read(s, "batch_size", d.batch_size, "train_discriminator");
        read(s, "lr", d.lr, "train_discriminator");
        read(s, "augment", d.augment, "train_discriminator");
        read(s, "loss", d.loss, "train_discriminator");
    }
    if (j.contains("train_lora")) {
        const auto& s = j.at("train_lora");
        check_keys(s, "train_lora", {"rank", "lr", "steps", "v_train", "batch_size", "weight_decay", "triples", "targets",
                                     "anchor_count", "anchor_steps"});
        auto& d = c.train_lora;
        read(s, "rank", d.rank, "train_lora");
        read(s, "lr", d.lr, "train_lora");
        read(s, "steps", d.steps, "train_lora");
        read(s, "v_train", d.v_train, "train_lora");
        read(s, "batch_size", d.batch_size, "train_lora");
        read(s, "weight_decay", d.weight_decay, "train_lora");
        read(s, "triples", d.triples, "train_lora");
        read(s, "targets", d.targets, "train_lora");
        read(s, "anchor_count", d.anchor_count, "train_lora");
        read(s, "anchor_steps", d.anchor_steps, "train_lora");
    }
    if (j.contains("dataset")) {
        const auto& s = j.at("dataset");
        check_keys(s, "dataset", {"input", "threshold", "captioner", "max_source_share", "fake_ratio",
                                  "max_caption_failure_rate", "fixture_per_source"});
        auto& d = c.dataset;
        read(s, "input", d.input, "dataset");
        read(s, "threshold", d.threshold, "dataset");
        read(s, "captioner", d.captioner, "dataset");
        read(s, "max_source_share", d.max_source_share, "dataset");
        read(s, "fake_ratio", d.fake_ratio, "dataset");
        read(s, "max_caption_failure_rate", d.max_caption_failure_rate, "dataset");
        read(s, "fixture_per_source", d.fixture_per_source, "dataset");
    }
    if (j.contains("evaluation")) {
        const auto& s = j.at("evaluation");
        check_keys(s, "evaluation", {"reference_samples", "kid_subset_size", "kid_subsets", "tau_detect",
                                     "embedder_samples", "include_undetected", "compare_base"});
        auto& d = c.evaluation;
        read(s, "reference_samples", d.reference_samples, "evaluation");
        read(s, "kid_subset_size", d.kid_subset_size, "evaluation");
        read(s, "kid_subsets", d.kid_subsets, "evaluation");
        read(s, "tau_detect", d.tau_detect, "evaluation");
        read(s, "embedder_samples", d.embedder_samples, "evaluation");
        read(s, "include_undetected", d.include_undetected, "evaluation");
        read(s, "compare_base", d.compare_base, "evaluation");
    }
    return c;
}

RunConfig load_config(const std::string& path) { return config_from_json(io::read_json(path)); }

nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& patch) {
    if (!patch.is_object() || !base.is_object()) return patch;
    for (const auto& [key, value] : patch.items()) {
        base[key] = base.contains(key) ? merge_json(base[key], value) : value;
    }
    return base;
}

std::vector<std::string> validate_config(const RunConfig& c) {
    std::vector<std::string> e;
    auto positive = [&](long v, const std::string& field) {
        if (v < 1) e.push_back(field + ": must be >= 1");
    };
    auto unit = [&](double v, const std::string& field) {
        if (!(v >= 0.0 && v <= 1.0)) e.push_back(field + ": must lie in [0, 1]");
    };
    if (c.T < 1) e.push_back("schedule.T: must be >= 1");
    if (!(c.beta_start > 0.0 && c.beta_start < c.beta_end && c.beta_end < 1.0)) {
        e.push_back("schedule.beta_start/beta_end: need 0 < beta_start < beta_end < 1");
    }
    positive(c.sampler.num_steps, "sampler.num_steps");
    if (c.T >= 1 && c.sampler.num_steps > c.T) e.push_back("sampler.num_steps: must be <= T");
    if (!(c.sampler.eta >= 0.0)) e.push_back("sampler.eta: must be >= 0");
    if (!std::isfinite(c.sampler.cfg_scale)) e.push_back("sampler.cfg_scale: must be finite");
    for (const auto& g : validate_guidance(c.guidance, c.T)) e.push_back(g);
    if (!match_token(c.prompt)) e.push_back("prompt: '" + c.prompt + "' contains no vocabulary phrase");
    positive(c.num_samples, "num_samples");
    if (c.detector != "default" && c.detector != "synthetic-blob" && c.detector != "point-mode") {
        e.push_back("detector: must be default, synthetic-blob or point-mode");
    }
    if (c.output_dir.empty()) e.push_back("output_dir: must not be empty");
    if (!c.seed) e.push_back("seed: required");

    const auto& d = c.train_denoiser;
    positive(d.dataset_size, "train_denoiser.dataset_size");
    positive(d.epochs, "train_denoiser.epochs");
    positive(d.batch_size, "train_denoiser.batch_size");
    if (!(d.lr > 0.0)) e.push_back("train_denoiser.lr: must be > 0");
    unit(d.cond_dropout, "train_denoiser.cond_dropout");

    const auto& s = c.train_discriminator;
    positive(s.epochs, "train_discriminator.epochs");
    positive(s.batch_size, "train_discriminator.batch_size");
    if (!(s.lr > 0.0)) e.push_back("train_discriminator.lr: must be > 0");
    if (s.loss != "least-squares" && s.loss != "sigmoid-mse") {
        e.push_back("train_discriminator.loss: must be least-squares or sigmoid-mse");
    }

    const auto& l = c.train_lora;
    positive(l.rank, "train_lora.rank");
    positive(l.steps, "train_lora.steps");
    positive(l.batch_size, "train_lora.batch_size");
    positive(l.anchor_count, "train_lora.anchor_count");
    positive(l.anchor_steps, "train_lora.anchor_steps");
    if (!(l.lr > 0.0)) e.push_back("train_lora.lr: must be > 0");
    if (!std::isfinite(l.v_train)) e.push_back("train_lora.v_train: must be finite");
    if (!(l.weight_decay >= 0.0)) e.push_back("train_lora.weight_decay: must be >= 0");

    const auto& b = c.dataset;
    unit(b.threshold, "dataset.threshold");
    unit(b.max_source_share, "dataset.max_source_share");
    unit(b.max_caption_failure_rate, "dataset.max_caption_failure_rate");
    if (!(b.fake_ratio >= 0.0)) e.push_back("dataset.fake_ratio: must be >= 0");
    if (b.fixture_per_source < 0) e.push_back("dataset.fixture_per_source: must be >= 0");
    if (b.captioner != "stub" && b.captioner.rfind("http:", 0) != 0) {
        e.push_back("dataset.captioner: must be stub or http:<url>");
    }

    const auto& v = c.evaluation;
    if (v.reference_samples < 2) e.push_back("evaluation.reference_samples: must be >= 2");
    if (v.kid_subset_size < 2) e.push_back("evaluation.kid_subset_size: must be >= 2");
    positive(v.kid_subsets, "evaluation.kid_subsets");
    if (v.kid_subset_size > v.reference_samples) {
        e.push_back("evaluation.kid_subset_size: must be <= reference_samples");
    }
    if (v.kid_subset_size > c.num_samples) e.push_back("evaluation.kid_subset_size: must be <= num_samples");
    unit(v.tau_detect, "evaluation.tau_detect");
    if (v.embedder_samples < 2) e.push_back("evaluation.embedder_samples: must be >= 2");
    return e;
}

void require_valid(const RunConfig& cfg) {
    const auto errors = validate_config(cfg);
    if (errors.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& err : errors) msg += "\n  " + err;
    fail(ErrorCode::kConfig, msg);
}

NoiseSchedule schedule_of(const RunConfig& cfg) { return make_schedule(cfg.T, cfg.schedule, cfg.beta_start, cfg.beta_end); }

int prompt_token(const RunConfig& cfg) {
    const auto tok = match_token(cfg.prompt);
    if (!tok) fail(ErrorCode::kConfig, "prompt: '" + cfg.prompt + "' contains no vocabulary phrase");
    return *tok;
}

std::unique_ptr<RegionDetector> make_detector(const RunConfig& cfg) {
    if (cfg.detector == "synthetic-blob") return std::make_unique<SyntheticBlobDetector>();
    if (cfg.detector == "point-mode") return std::make_unique<PointModeDetector>(point_mode_a(), 1.0, 1.5);
    return backbone(cfg.backbone).make_detector();
}

}  // namespace mghand
