#include "mghand/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mghand/dataset.hpp"
#include "mghand/discriminator.hpp"
#include "mghand/error.hpp"
#include "mghand/guidance.hpp"
#include "mghand/io.hpp"
#include "mghand/lora.hpp"
#include "mghand/vocabulary.hpp"

namespace fs = std::filesystem;

namespace mghand {

namespace {

// Stage salts for derive_seed so every stochastic stage draws independently.
enum Stage : std::uint64_t {
    kStageDenoiserData = 1,
    kStageDenoiserInit,
    kStageDenoiserTrain,
    kStageAdapterInit,
    kStageSlider,
    kStageFixture,
    kStageFakes,
    kStageDiscriminator,
    kStageSamples,
    kStageReference,
    kStageEmbedder,
    kStageKid,
};

std::uint64_t stage_seed(const RunConfig& cfg, Stage stage) { return derive_seed(*cfg.seed, stage); }

std::string numbered(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04zu%s", stem, i, ext);
    return buf;
}

void require_file(const std::string& path, const std::string& field) {
    if (path.empty()) fail(ErrorCode::kConfig, field + ": checkpoint path is required");
    if (!fs::exists(path)) fail(ErrorCode::kConfig, field + ": '" + path + "' does not exist");
}

double tail_mean(const std::vector<double>& v, std::size_t n, bool from_end) {
    n = std::min(n, v.size());
    if (n == 0) return 0.0;
    const auto begin = from_end ? v.end() - static_cast<std::ptrdiff_t>(n) : v.begin();
    return std::accumulate(begin, begin + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n);
}

void write_sample(const fs::path& path_without_ext, const Backbone& bb, const Image& image) {
    if (bb.spatial()) {
        io::write_png(path_without_ext.string() + ".png", image);
    } else {
        io::write_tensor(path_without_ext.string() + ".tensor.json", image);
    }
}

struct Models {
    std::unique_ptr<Denoiser> denoiser;
    std::optional<Discriminator> discriminator;
    std::optional<LoraAdapter> adapter;
};

/// Loads what the guidance settings need; fails before any compute if missing.
Models load_models(const RunConfig& cfg) {
    require_file(cfg.checkpoints.denoiser, "checkpoints.denoiser");
    const bool need_disc = cfg.guidance.w != 0.0;
    const bool need_adapter = cfg.guidance.v != 0.0;
    if (need_disc) require_file(cfg.checkpoints.discriminator, "checkpoints.discriminator");
    if (need_adapter) require_file(cfg.checkpoints.adapter, "checkpoints.adapter");

    Models m;
    m.denoiser = load_denoiser(cfg.checkpoints.denoiser);
    const Backbone& bb = backbone(cfg.backbone);
    if (m.denoiser->latent_shape() != bb.latent_shape()) {
        fail(ErrorCode::kConfig, "checkpoints.denoiser: latent shape " + m.denoiser->latent_shape().str() +
                                     " does not match backbone " + to_string(cfg.backbone));
    }
    if (need_disc) {
        m.discriminator = load_discriminator(cfg.checkpoints.discriminator);
        if (m.discriminator->backbone_kind() != cfg.backbone) {
            fail(ErrorCode::kConfig, "checkpoints.discriminator: trained for a different backbone");
        }
    }
    if (need_adapter) {
        m.adapter = load_adapter(cfg.checkpoints.adapter);
        if (m.adapter->base_checksum != m.denoiser->checksum()) {
            fail(ErrorCode::kConfig, "checkpoints.adapter: trained against a different denoiser");
        }
    }
    return m;
}

SamplerConfig sampler_for(const RunConfig& cfg, std::size_t i) {
    SamplerConfig sc = cfg.sampler;
    sc.seed = derive_seed(stage_seed(cfg, kStageSamples), i);
    return sc;
}

nlohmann::json checkpoint_entry(const std::string& path, const std::string& checksum) {
    return {{"path", path}, {"checksum", checksum}};
}

struct SampleRun {
    std::vector<Image> images;
    std::vector<Vec> latents;
    std::vector<int> prompts;
    nlohmann::json summary;
};

SampleRun run_sampling(const RunConfig& cfg, const Models& models, const std::string& out_dir) {
    const Backbone& bb = backbone(cfg.backbone);
    const int prompt = prompt_token(cfg);
    const auto detector = make_detector(cfg);
    GuidanceModels gm{models.denoiser.get(), &bb, models.discriminator ? &*models.discriminator : nullptr,
                      models.adapter ? &*models.adapter : nullptr, detector.get()};

    const fs::path root(out_dir);
    for (const char* sub : {"samples", "masks", "traces"}) io::ensure_directory((root / sub).string());

    SampleRun run;
    std::string prompts_txt;
    std::size_t in_mode = 0;
    std::size_t detector_failures = 0;
    double mask_area_total = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.num_samples); ++i) {
        const GuidedSample s = sample_guided(gm, prompt, cfg.guidance, sampler_for(cfg, i));
        write_sample(root / "samples" / numbered("sample", i, ""), bb, s.image);
        io::write_mask_png((root / "masks" / numbered("mask", i, ".png")).string(), s.mask.grid);
        std::string areas;
        std::string trace;
        for (const auto& r : s.trace) {
            areas += nlohmann::json{{"step", r.step}, {"t", r.t}, {"area", r.mask_area}}.dump() + "\n";
            trace += trace_record_to_json(r).dump() + "\n";
            if (r.detector_failed) ++detector_failures;
        }
        io::write_text_atomic((root / "masks" / numbered("mask", i, ".areas.jsonl")).string(), areas);
        io::write_text_atomic((root / "traces" / numbered("trace", i, ".jsonl")).string(), trace);
        prompts_txt += cfg.prompt + "\n";
        if (bb.in_target_mode(s.latent)) ++in_mode;
        mask_area_total += static_cast<double>(s.mask.area());
        run.images.push_back(s.image);
        run.latents.push_back(s.latent);
        run.prompts.push_back(prompt);
    }
    io::write_text_atomic((root / "prompts.txt").string(), prompts_txt);
    const double n = static_cast<double>(cfg.num_samples);
    run.summary = {{"samples", cfg.num_samples},
                   {"target_mode_fraction", static_cast<double>(in_mode) / n},
                   {"mean_final_mask_area", mask_area_total / n},
                   {"detector_failures", detector_failures},
                   {"output_dir", out_dir}};
    return run;
}

std::vector<int> read_prompts(const std::string& path, std::size_t n, int fallback) {
    if (path.empty()) return std::vector<int>(n, fallback);
    std::istringstream in(io::read_text(path));
    std::vector<int> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tok = match_token(line);
        if (!tok) fail(ErrorCode::kInvalidArgument, "prompt '" + line + "' contains no vocabulary phrase");
        out.push_back(*tok);
    }
    if (out.size() != n) {
        fail(ErrorCode::kInvalidArgument, "prompts file has " + std::to_string(out.size()) + " entries for " +
                                              std::to_string(n) + " samples");
    }
    return out;
}

}  // namespace

std::vector<std::string> list_samples(const std::string& dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "'" + dir + "' is not a directory");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const bool png = name.size() > 4 && name.ends_with(".png");
        const bool tensor = name.ends_with(".tensor.json");
        if (e.is_regular_file() && (png || tensor)) out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Image> reference_images(const Backbone& bb, int n, std::uint64_t seed) {
    const auto positives = tokens_with_role(TokenRole::kPositive);
    Rng rng(seed);
    std::vector<Image> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(bb.decode(bb.sample_data(positives[static_cast<std::size_t>(i) % positives.size()], rng)));
    return out;
}

MetricsReport evaluate_images(const Backbone& bb, std::span<const Image> generated, std::span<const Image> reference,
                              std::span<const int> prompts, const RegionDetector& detector,
                              const EvaluationConfig& eval, std::uint64_t seed) {
    require(!generated.empty(), "evaluation needs generated samples");
    MetricsReport r;
    const FeatureSet gen = extract_features(bb, generated, "generated");
    const FeatureSet ref = extract_features(bb, reference, "reference");
    if (generated.size() >= 2 && reference.size() >= 2) r.fid = compute_fid(gen, ref);
    const int subset = std::min({eval.kid_subset_size, static_cast<int>(generated.size()), static_cast<int>(reference.size())});
    const std::uint64_t kid_seed = derive_seed(seed, kStageKid);
    if (subset >= 2) {
        const KidResult kid = compute_kid(gen, ref, subset, eval.kid_subsets, kid_seed);
        r.kid = kid.mean;
        r.kid_std_error = kid.std_error;
    }
    r.hand_confidence = hand_confidence(generated, detector, eval.include_undetected);
    r.hand_probability = hand_probability(generated, detector, eval.tau_detect);
    const ToyJointEmbedder embedder = ToyJointEmbedder::fit(bb, eval.embedder_samples, derive_seed(seed, kStageEmbedder));
    r.text_image_similarity = text_image_similarity(generated, prompts, embedder);
    r.metadata = {{"backbone", to_string(bb.kind())},
                  {"detector", detector.name()},
                  {"generated_count", generated.size()},
                  {"reference_count", reference.size()},
                  {"tau_detect", eval.tau_detect},
                  {"kid_subset_size", subset},
                  {"kid_subsets", eval.kid_subsets},
                  {"kid_seed", kid_seed},
                  {"hand_confidence_includes_undetected", eval.include_undetected}};
    return r;
}

nlohmann::json train_denoiser_command(const RunConfig& cfg, const std::string& out_path) {
    require_valid(cfg);
    const Backbone& bb = backbone(cfg.backbone);
    const auto& t = cfg.train_denoiser;
    const LatentDataset data = make_synthetic_dataset(bb, t.dataset_size, stage_seed(cfg, kStageDenoiserData));
    DenoiserTrainConfig tc{t.epochs, t.batch_size, t.lr, t.cond_dropout, stage_seed(cfg, kStageDenoiserTrain)};
    auto result = train_toy_denoiser(bb.make_denoiser(schedule_of(cfg), stage_seed(cfg, kStageDenoiserInit)), data, tc);
    save_denoiser(*result.model, out_path);
    return {{"checkpoint", out_path},
            {"checksum", result.model->checksum()},
            {"config_hash", result.model->config_hash},
            {"initial_loss", result.epoch_losses.front()},
            {"final_loss", result.epoch_losses.back()}};
}

nlohmann::json train_discriminator_command(const RunConfig& cfg, const std::string& out_path) {
    require_valid(cfg);
    const auto& t = cfg.train_discriminator;
    if (t.manifest.empty()) fail(ErrorCode::kConfig, "train_discriminator.manifest: required");
    if (!fs::exists(t.manifest)) fail(ErrorCode::kConfig, "train_discriminator.manifest: '" + t.manifest + "' does not exist");
    const DatasetManifest manifest = load_manifest(t.manifest);
    const DiscriminatorDataset data = discriminator_dataset(manifest, t.manifest);
    DiscriminatorTrainConfig tc;
    tc.epochs = t.epochs;
    tc.batch_size = t.batch_size;
    tc.lr = t.lr;
    tc.augment = t.augment;
    tc.loss = parse_discriminator_loss(t.loss);
    tc.seed = stage_seed(cfg, kStageDiscriminator);
    const auto result = train_discriminator(cfg.backbone, data, tc);
    save_discriminator(result.model, out_path);
    return {{"checkpoint", out_path},
            {"checksum", result.model.checksum()},
            {"config_hash", result.model.config_hash},
            {"records", data.size()},
            {"initial_loss", result.epoch_losses.front()},
            {"final_loss", result.epoch_losses.back()},
            {"training_accuracy", discriminator_accuracy(result.model, data)}};
}

nlohmann::json train_lora_command(const RunConfig& cfg, const std::string& out_path) {
    require_valid(cfg);
    require_file(cfg.checkpoints.denoiser, "checkpoints.denoiser");
    const auto model = load_denoiser(cfg.checkpoints.denoiser);
    const auto& t = cfg.train_lora;
    const auto triples = t.triples.empty() ? default_prompt_triples() : triples_from_json(io::read_json(t.triples));
    const std::string before = model->checksum();
    const LoraAdapter init = init_adapter(*model, t.rank, t.targets, stage_seed(cfg, kStageAdapterInit));
    SliderConfig sc;
    sc.v_train = t.v_train;
    sc.steps = t.steps;
    sc.lr = t.lr;
    sc.batch_size = t.batch_size;
    sc.weight_decay = t.weight_decay;
    sc.seed = stage_seed(cfg, kStageSlider);
    sc.anchor_count = t.anchor_count;
    sc.anchor_steps = t.anchor_steps;
    const SliderResult result = train_slider(*model, init, triples, sc);
    if (model->checksum() != before) fail(ErrorCode::kInternal, "slider training modified the base model");
    save_adapter(result.adapter, out_path);
    const std::size_t window = std::max<std::size_t>(1, result.losses.size() / 10);
    return {{"checkpoint", out_path},
            {"base_checksum", before},
            {"parameters", result.adapter.parameter_count()},
            {"initial_loss", tail_mean(result.losses, window, false)},
            {"final_loss", tail_mean(result.losses, window, true)}};
}

nlohmann::json build_dataset_command(const RunConfig& cfg, const std::string& out_manifest) {
    require_valid(cfg);
    const auto& d = cfg.dataset;
    if (d.input.empty()) fail(ErrorCode::kConfig, "dataset.input: required");
    require_file(cfg.checkpoints.denoiser, "checkpoints.denoiser");
    const Backbone& bb = backbone(cfg.backbone);
    if (!fs::exists(d.input)) {
        if (d.fixture_per_source == 0) fail(ErrorCode::kConfig, "dataset.input: '" + d.input + "' does not exist");
        write_fixture_corpus(d.input, bb, d.fixture_per_source, stage_seed(cfg, kStageFixture));
    }
    const auto generator = load_denoiser(cfg.checkpoints.denoiser);
    const auto detector = make_detector(cfg);
    const auto captioner = make_captioner(d.captioner);
    BuildDatasetOptions opt;
    opt.manifest.threshold = d.threshold;
    opt.manifest.max_source_share = d.max_source_share;
    opt.max_caption_failure_rate = d.max_caption_failure_rate;
    opt.fake_ratio = d.fake_ratio;
    opt.sampler = cfg.sampler;
    opt.seed = stage_seed(cfg, kStageFakes);
    const DatasetManifest m = build_dataset(d.input, out_manifest, bb, *detector, *captioner, *generator, opt);
    return {{"manifest", out_manifest}, {"counts", m.counts()}, {"caption_failures", m.caption_failures}};
}

nlohmann::json sample_command(const RunConfig& cfg, const std::string& out_dir) {
    require_valid(cfg);
    const Models models = load_models(cfg);
    return run_sampling(cfg, models, out_dir).summary;
}

nlohmann::json evaluate_command(const RunConfig& cfg, const std::string& generated_dir,
                                const std::string& reference_dir, const std::string& prompts_file,
                                const std::string& out_path) {
    require_valid(cfg);
    const Backbone& bb = backbone(cfg.backbone);
    std::vector<Image> generated;
    for (const auto& p : list_samples(generated_dir)) generated.push_back(io::read_sample(p));
    if (generated.empty()) fail(ErrorCode::kInvalidArgument, "no samples in '" + generated_dir + "'");
    std::vector<Image> reference;
    if (reference_dir.empty()) {
        reference = reference_images(bb, cfg.evaluation.reference_samples, stage_seed(cfg, kStageReference));
    } else {
        for (const auto& p : list_samples(reference_dir)) reference.push_back(io::read_sample(p));
    }
    const auto prompts = read_prompts(prompts_file, generated.size(), prompt_token(cfg));
    const auto detector = make_detector(cfg);
    const MetricsReport report =
        evaluate_images(bb, generated, reference, prompts, *detector, cfg.evaluation, *cfg.seed);
    write_report(report, out_path);
    return report_to_json(report);
}

nlohmann::json run_pipeline(const RunConfig& cfg) {
    require_valid(cfg);
    const Models models = load_models(cfg);
    const Backbone& bb = backbone(cfg.backbone);
    const fs::path root(cfg.output_dir);
    io::ensure_directory(root.string());
    const nlohmann::json resolved = config_to_json(cfg);
    io::write_json((root / "config.resolved.json").string(), resolved);

    nlohmann::json run = {{"config_hash", hash_hex(resolved.dump())},
                          {"seed", *cfg.seed},
                          {"sample_seed_base", stage_seed(cfg, kStageSamples)},
                          {"checkpoints", nlohmann::json::object()},
                          {"stages", nlohmann::json::object()}};
    run["checkpoints"]["denoiser"] = checkpoint_entry(cfg.checkpoints.denoiser, models.denoiser->checksum());
    if (models.discriminator) {
        run["checkpoints"]["discriminator"] =
            checkpoint_entry(cfg.checkpoints.discriminator, models.discriminator->checksum());
    }
    if (models.adapter) {
        run["checkpoints"]["adapter"] = checkpoint_entry(cfg.checkpoints.adapter, hash_hex(adapter_to_json(*models.adapter).dump()));
    }
    const std::string run_path = (root / "run.json").string();
    auto stage = [&](const char* name, auto&& body) {
        try {
            body();
            run["stages"][name] = "ok";
        } catch (...) {
            run["stages"][name] = "failed";
            io::write_json(run_path, run);
            throw;
        }
    };

    SampleRun guided;
    stage("sample", [&] { guided = run_sampling(cfg, models, root.string()); });
    run["sampling"] = guided.summary;

    std::vector<std::pair<std::string, MetricsReport>> rows;
    stage("evaluate", [&] {
        const auto detector = make_detector(cfg);
        const auto reference = reference_images(bb, cfg.evaluation.reference_samples, stage_seed(cfg, kStageReference));
        io::ensure_directory((root / "reports").string());
        MetricsReport g = evaluate_images(bb, guided.images, reference, guided.prompts, *detector, cfg.evaluation, *cfg.seed);
        g.metadata["model"] = "guided";
        g.metadata["config_hash"] = run["config_hash"];
        write_report(g, (root / "reports" / "guided.json").string());
        rows.emplace_back("guided", g);
        if (cfg.evaluation.compare_base) {
            std::vector<Image> base;
            std::size_t in_mode = 0;
            for (std::size_t i = 0; i < guided.images.size(); ++i) {
                const Vec z = sample_base(*models.denoiser, prompt_token(cfg), sampler_for(cfg, i));
                if (bb.in_target_mode(z)) ++in_mode;
                base.push_back(bb.decode(z));
            }
            MetricsReport b = evaluate_images(bb, base, reference, guided.prompts, *detector, cfg.evaluation, *cfg.seed);
            b.metadata["model"] = "base";
            b.metadata["config_hash"] = run["config_hash"];
            write_report(b, (root / "reports" / "base.json").string());
            rows.emplace_back("base", b);
            run["base_target_mode_fraction"] = static_cast<double>(in_mode) / static_cast<double>(base.size());
        }
        io::write_text_atomic((root / "report.md").string(), render_table(rows));
    });
    io::write_json(run_path, run);
    run["output_dir"] = cfg.output_dir;
    run["report"] = report_to_json(rows.front().second);
    return run;
}

}  // namespace mghand
