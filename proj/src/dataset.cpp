#include "mghand/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "mghand/error.hpp"
#include "mghand/io.hpp"
#include "mghand/vocabulary.hpp"

namespace fs = std::filesystem;

namespace mghand {

std::string to_string(SampleSource s) {
    switch (s) {
        case SampleSource::kCorpusA: return "corpusA";
        case SampleSource::kCorpusB: return "corpusB";
        case SampleSource::kGenerated: return "generated";
    }
    return "unknown";
}

SampleSource parse_source(const std::string& name) {
    if (name == "corpusA") return SampleSource::kCorpusA;
    if (name == "corpusB") return SampleSource::kCorpusB;
    if (name == "generated") return SampleSource::kGenerated;
    fail(ErrorCode::kInvalidArgument, "unknown sample source '" + name + "'");
}

std::string to_string(SampleLabel l) { return l == SampleLabel::kReal ? "real" : "fake"; }

SampleLabel parse_label(const std::string& name) {
    if (name == "real") return SampleLabel::kReal;
    if (name == "fake") return SampleLabel::kFake;
    fail(ErrorCode::kInvalidArgument, "unknown sample label '" + name + "'");
}

std::map<std::string, std::size_t> DatasetManifest::counts() const {
    std::map<std::string, std::size_t> c{{"real", 0}, {"fake", 0}, {"corpusA", 0}, {"corpusB", 0}, {"generated", 0}};
    for (const auto& r : records) {
        ++c[to_string(r.label)];
        ++c[to_string(r.source)];
    }
    return c;
}

namespace {

bool is_sample_file(const fs::path& p) {
    const std::string name = p.filename().string();
    auto ends_with = [&](const std::string& suffix) {
        return name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return ends_with(".png") || (ends_with(".tensor.json"));
}

}  // namespace

std::vector<InputImage> ingest_directory(const std::string& dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "input directory '" + dir + "' does not exist");
    std::vector<InputImage> out;
    for (SampleSource src : {SampleSource::kCorpusA, SampleSource::kCorpusB}) {
        const fs::path sub = fs::path(dir) / to_string(src);
        if (!fs::is_directory(sub)) continue;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(sub)) {
            if (entry.is_regular_file() && is_sample_file(entry.path())) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            InputImage im;
            im.path = f.string();
            im.source = src;
            im.image = io::read_sample(im.path);
            const std::string meta = im.path + ".meta.json";
            if (fs::exists(meta)) im.prompt = io::read_json(meta).value("prompt", "");
            out.push_back(std::move(im));
        }
    }
    return out;
}

std::vector<ScoredImage> filter_by_detector(std::span<const InputImage> images, const RegionDetector& detector,
                                            double threshold) {
    std::vector<ScoredImage> out;
    for (const auto& im : images) {
        const double s = detector.detect(im.image).score;
        if (s >= threshold) out.push_back({im, s});
    }
    return out;
}

std::string StubCaptioner::caption(const InputImage& image) const {
    static const char* const templates[] = {
        "a close-up photo of %s",
        "%s holding a small object",
        "%s waving in front of the camera",
        "%s resting on a wooden table",
    };
    const std::string subject = image.prompt.empty() ? "hands" : image.prompt;
    const std::string name = fs::path(image.path).filename().string();
    Fnv1a h;
    h.update(name);
    std::string t = templates[h.digest() % std::size(templates)];
    t.replace(t.find("%s"), 2, subject);
    return t;
}

HttpCaptioner::HttpCaptioner(HttpCaptionerOptions options) : options_(std::move(options)) {
    const std::string prefix = "http://";
    if (options_.url.rfind(prefix, 0) != 0) {
        fail(ErrorCode::kInvalidArgument, "captioner url must start with http:// (got '" + options_.url + "')");
    }
    require(options_.max_attempts >= 1 && options_.timeout_seconds >= 1, "captioner retries and timeout must be positive");
    std::string rest = options_.url.substr(prefix.size());
    const auto slash = rest.find('/');
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    std::string hostport = rest.substr(0, slash);
    const auto colon = hostport.find(':');
    host_ = hostport.substr(0, colon);
    if (colon != std::string::npos) port_ = std::stoi(hostport.substr(colon + 1));
    if (host_.empty()) fail(ErrorCode::kInvalidArgument, "captioner url has no host");
}

std::string HttpCaptioner::caption(const InputImage& image) const {
    const fs::path tmp = fs::temp_directory_path() / ("mghand_caption_" + hash_hex(image.path) + ".png");
    Image pixels = image.image;
    if (pixels.shape.channels != 1) pixels = Image(Shape{1, 1, pixels.shape.size()}, pixels.data);
    io::write_png(tmp.string(), pixels);
    const std::string body = io::read_text(tmp.string());
    fs::remove(tmp);

    httplib::Client client(host_, port_);
    client.set_connection_timeout(options_.timeout_seconds, 0);
    client.set_read_timeout(options_.timeout_seconds, 0);
    client.set_write_timeout(options_.timeout_seconds, 0);
    httplib::Headers headers;
    if (const char* token = std::getenv(options_.token_env.c_str()); token != nullptr && *token != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    std::string last_error = "no attempt made";
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
        auto res = client.Post(path_, headers, body, "image/png");
        if (!res) {
            last_error = "request failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            if (res->status >= 400 && res->status < 500) break;
            continue;
        }
        const auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("caption") || !j.at("caption").is_string()) {
            last_error = "response has no caption field";
            continue;
        }
        return j.at("caption").get<std::string>();
    }
    fail(ErrorCode::kCaptionFailed, "captioning " + image.path + ": " + last_error);
}

std::unique_ptr<CaptionerClient> make_captioner(const std::string& spec) {
    if (spec == "stub") return std::make_unique<StubCaptioner>();
    if (spec.rfind("http:", 0) == 0 && spec.rfind("http://", 0) != 0) {
        return std::make_unique<HttpCaptioner>(HttpCaptionerOptions{spec.substr(5)});
    }
    if (spec.rfind("http://", 0) == 0) return std::make_unique<HttpCaptioner>(HttpCaptionerOptions{spec});
    fail(ErrorCode::kInvalidArgument, "captioner must be 'stub' or 'http:<url>', got '" + spec + "'");
}

std::vector<CaptionResult> caption_images(std::span<const InputImage> images, const CaptionerClient& client) {
    std::vector<CaptionResult> out;
    out.reserve(images.size());
    for (const auto& im : images) {
        CaptionResult r;
        try {
            r.caption = client.caption(im);
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

int caption_token(const std::string& caption) { return match_token(caption).value_or(kNeutralToken); }

std::vector<GeneratedImage> generate_fakes(std::span<const std::string> captions, const Denoiser& model,
                                           const Backbone& bb, const SamplerConfig& sampler, std::uint64_t seed) {
    std::vector<GeneratedImage> out;
    out.reserve(captions.size());
    for (std::size_t i = 0; i < captions.size(); ++i) {
        GeneratedImage g;
        g.seed = derive_seed(seed, i);
        g.token = caption_token(captions[i]);
        try {
            SamplerConfig sc = sampler;
            sc.seed = g.seed;
            Vec z = sample_base(model, g.token, sc);
            if (!all_finite(z)) fail(ErrorCode::kNumericalDegeneracy, "generated sample is not finite");
            g.image = bb.decode(z);
        } catch (const std::exception& e) {
            g.error = e.what();
        }
        out.push_back(std::move(g));
    }
    return out;
}

double max_real_source_share(const DatasetManifest& manifest) {
    std::map<SampleSource, std::size_t> per;
    std::size_t total = 0;
    for (const auto& r : manifest.records) {
        if (r.label != SampleLabel::kReal) continue;
        ++per[r.source];
        ++total;
    }
    if (total == 0) return 0.0;
    std::size_t top = 0;
    for (const auto& [_, n] : per) top = std::max(top, n);
    return static_cast<double>(top) / static_cast<double>(total);
}

void check_source_balance(const DatasetManifest& manifest, double max_share) {
    const double share = max_real_source_share(manifest);
    if (share > max_share) {
        std::ostringstream msg;
        msg << "one real source holds " << share << " of real records, above the bound " << max_share;
        fail(ErrorCode::kInvalidArgument, msg.str());
    }
}

namespace {

nlohmann::json record_to_json(const ManifestRecord& r) {
    nlohmann::json j = {{"image_path", r.image_path},
                        {"caption", r.caption},
                        {"source", to_string(r.source)},
                        {"detector_score", r.detector_score},
                        {"label", to_string(r.label)}};
    if (r.seed) j["seed"] = *r.seed;
    if (!r.generator_config_hash.empty()) j["generator_config_hash"] = r.generator_config_hash;
    return j;
}

ManifestRecord record_from_json(const nlohmann::json& j) {
    ManifestRecord r;
    r.image_path = j.at("image_path").get<std::string>();
    r.caption = j.at("caption").get<std::string>();
    r.source = parse_source(j.at("source").get<std::string>());
    r.detector_score = j.at("detector_score").get<double>();
    r.label = parse_label(j.at("label").get<std::string>());
    if (j.contains("seed")) r.seed = j.at("seed").get<std::uint64_t>();
    r.generator_config_hash = j.value("generator_config_hash", "");
    return r;
}

fs::path manifest_dir(const std::string& manifest_path) {
    fs::path dir = fs::path(manifest_path).parent_path();
    return dir.empty() ? fs::path(".") : dir;
}

}  // namespace

std::string manifest_to_jsonl(const DatasetManifest& m) {
    nlohmann::json header = {{"format", "mghand.manifest"},
                             {"version", m.version},
                             {"threshold", m.threshold},
                             {"caption_failures", m.caption_failures},
                             {"counts", m.counts()}};
    std::string out = header.dump() + "\n";
    for (const auto& r : m.records) out += record_to_json(r).dump() + "\n";
    return out;
}

DatasetManifest build_manifest(std::vector<ManifestRecord> real, std::vector<ManifestRecord> fake,
                               const std::string& out_path, const ManifestOptions& options,
                               std::size_t caption_failures) {
    const fs::path base = manifest_dir(out_path);
    std::vector<std::string> missing;
    for (auto* group : {&real, &fake}) {
        for (const auto& r : *group) {
            if (!fs::exists(base / r.image_path)) missing.push_back(r.image_path);
        }
    }
    if (!missing.empty()) {
        std::string msg = "manifest references missing files:";
        for (const auto& p : missing) msg += " " + p;
        fail(ErrorCode::kIo, msg);
    }
    for (const auto& r : real) {
        require(r.label == SampleLabel::kReal, "real record '" + r.image_path + "' is not labelled real");
        if (r.detector_score < options.threshold) {
            fail(ErrorCode::kInvalidArgument, "real record '" + r.image_path + "' scores below the threshold");
        }
    }
    for (const auto& r : fake) {
        require(r.label == SampleLabel::kFake, "fake record '" + r.image_path + "' is not labelled fake");
        require(r.seed.has_value() && !r.generator_config_hash.empty(),
                "fake record '" + r.image_path + "' lacks its generation seed or generator hash");
    }

    DatasetManifest m;
    m.threshold = options.threshold;
    m.caption_failures = caption_failures;
    m.records = std::move(real);
    m.records.insert(m.records.end(), fake.begin(), fake.end());
    std::sort(m.records.begin(), m.records.end(), [](const ManifestRecord& a, const ManifestRecord& b) {
        if (a.source != b.source) return a.source < b.source;
        return a.image_path < b.image_path;
    });
    check_source_balance(m, options.max_source_share);
    io::write_text_atomic(out_path, manifest_to_jsonl(m));
    return m;
}

DatasetManifest load_manifest(const std::string& path) {
    std::istringstream in(io::read_text(path));
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::kIo, "manifest '" + path + "' is empty");
    const auto header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "mghand.manifest") {
        fail(ErrorCode::kIo, "'" + path + "' is not a dataset manifest");
    }
    DatasetManifest m;
    m.version = header.at("version").get<std::string>();
    m.threshold = header.at("threshold").get<double>();
    m.caption_failures = header.value("caption_failures", std::size_t{0});
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) fail(ErrorCode::kIo, "manifest '" + path + "' has a malformed record");
        m.records.push_back(record_from_json(j));
    }
    const auto stored = header.at("counts").get<std::map<std::string, std::size_t>>();
    if (stored != m.counts()) fail(ErrorCode::kIo, "manifest '" + path + "' counts do not match its records");
    return m;
}

DatasetManifest build_dataset(const std::string& input_dir, const std::string& out_path, const Backbone& bb,
                              const RegionDetector& detector, const CaptionerClient& captioner, const Denoiser& generator,
                              const BuildDatasetOptions& options) {
    require(options.fake_ratio >= 0.0, "fake_ratio must be >= 0");
    const fs::path base = fs::absolute(manifest_dir(out_path));
    io::ensure_directory(base.string());
    const auto inputs = ingest_directory(input_dir);
    const auto kept = filter_by_detector(inputs, detector, options.manifest.threshold);

    std::vector<InputImage> kept_images;
    for (const auto& k : kept) kept_images.push_back(k.input);
    const auto captions = caption_images(kept_images, captioner);
    std::size_t failures = 0;
    std::vector<ManifestRecord> real;
    std::vector<std::string> real_captions;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (!captions[i].caption) {
            ++failures;
            continue;
        }
        ManifestRecord r;
        r.image_path = fs::absolute(kept[i].input.path).lexically_relative(base).generic_string();
        r.caption = *captions[i].caption;
        r.source = kept[i].input.source;
        r.detector_score = kept[i].score;
        r.label = SampleLabel::kReal;
        real.push_back(std::move(r));
        real_captions.push_back(*captions[i].caption);
    }
    if (!kept.empty()) {
        const double rate = static_cast<double>(failures) / static_cast<double>(kept.size());
        if (rate > options.max_caption_failure_rate) {
            fail(ErrorCode::kCaptionFailed, std::to_string(failures) + " of " + std::to_string(kept.size()) +
                                                " captions failed, above the allowed rate");
        }
    }

    std::vector<std::string> fake_captions;
    const auto n_fake = static_cast<std::size_t>(std::llround(options.fake_ratio * static_cast<double>(real.size())));
    for (std::size_t i = 0; i < n_fake && !real_captions.empty(); ++i) {
        fake_captions.push_back(real_captions[i % real_captions.size()]);
    }
    const auto fakes = generate_fakes(fake_captions, generator, bb, options.sampler, options.seed);
    const std::string gen_hash = generator.config_hash.empty() ? generator.checksum() : generator.config_hash;
    const fs::path gen_dir = base / "generated";
    io::ensure_directory(gen_dir.string());
    const bool png = bb.spatial();
    std::vector<ManifestRecord> fake;
    for (std::size_t i = 0; i < fakes.size(); ++i) {
        if (!fakes[i].image) continue;
        char name[32];
        std::snprintf(name, sizeof(name), "fake_%05zu", i);
        const std::string file = std::string(name) + (png ? ".png" : ".tensor.json");
        const fs::path full = gen_dir / file;
        if (png) {
            io::write_png(full.string(), *fakes[i].image);
        } else {
            io::write_tensor(full.string(), *fakes[i].image);
        }
        ManifestRecord r;
        r.image_path = ("generated/" + file);
        r.caption = fake_captions[i];
        r.source = SampleSource::kGenerated;
        r.detector_score = detector.detect(io::read_sample(full.string())).score;
        r.label = SampleLabel::kFake;
        r.seed = fakes[i].seed;
        r.generator_config_hash = gen_hash;
        fake.push_back(std::move(r));
    }
    return build_manifest(std::move(real), std::move(fake), out_path, options.manifest, failures);
}

DiscriminatorDataset discriminator_dataset(const DatasetManifest& manifest, const std::string& manifest_path) {
    const fs::path base = manifest_dir(manifest_path);
    DiscriminatorDataset d;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        const Image im = io::read_sample((base / r.image_path).string());
        if (i == 0) d.pixels.resize(static_cast<Eigen::Index>(manifest.records.size()), im.data.size());
        require(im.data.size() == d.pixels.cols(), "manifest images have inconsistent sizes");
        d.pixels.row(static_cast<Eigen::Index>(i)) = im.data.transpose();
        d.tokens.push_back(caption_token(r.caption));
        d.labels.push_back(r.label == SampleLabel::kReal ? 1 : 0);
    }
    return d;
}

void write_fixture_corpus(const std::string& dir, const Backbone& bb, int per_source, std::uint64_t seed) {
    require(per_source >= 1, "fixture corpus needs at least one image per source");
    const auto positives = tokens_with_role(TokenRole::kPositive);
    const auto negatives = tokens_with_role(TokenRole::kNegative);
    const bool png = bb.spatial();
    for (SampleSource src : {SampleSource::kCorpusA, SampleSource::kCorpusB}) {
        const fs::path sub = fs::path(dir) / to_string(src);
        io::ensure_directory(sub.string());
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(src)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < per_source; ++i) {
            const double r = u(rng);
            int tok = kNeutralToken;
            if (r >= 0.4 && r < 0.7) {
                tok = positives[std::uniform_int_distribution<std::size_t>(0, positives.size() - 1)(rng)];
            } else if (r >= 0.7) {
                tok = negatives[std::uniform_int_distribution<std::size_t>(0, negatives.size() - 1)(rng)];
            }
            const Image im = bb.decode(bb.sample_data(tok, rng));
            char name[32];
            std::snprintf(name, sizeof(name), "img_%04d", i);
            const fs::path file = sub / (std::string(name) + (png ? ".png" : ".tensor.json"));
            if (png) {
                io::write_png(file.string(), im);
            } else {
                io::write_tensor(file.string(), im);
            }
            io::write_json(file.string() + ".meta.json", {{"prompt", token(tok).phrase}});
        }
    }
}

}  // namespace mghand
