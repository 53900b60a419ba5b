#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mghand/backbone.hpp"
#include "mghand/denoiser.hpp"
#include "mghand/discriminator.hpp"
#include "mghand/mask.hpp"
#include "mghand/vocabulary.hpp"

namespace mghand {

enum class SampleSource { kCorpusA, kCorpusB, kGenerated };
enum class SampleLabel { kReal, kFake };

std::string to_string(SampleSource s);
SampleSource parse_source(const std::string& name);
std::string to_string(SampleLabel l);
SampleLabel parse_label(const std::string& name);

inline constexpr double kDefaultDetectorThreshold = 0.8;
inline constexpr const char* kManifestVersion = "1";

struct ManifestRecord {
    std::string image_path;  // relative to the manifest's directory
    std::string caption;
    SampleSource source = SampleSource::kCorpusA;
    double detector_score = 0.0;
    SampleLabel label = SampleLabel::kReal;
    std::optional<std::uint64_t> seed;  // fakes only
    std::string generator_config_hash;  // fakes only
};

struct DatasetManifest {
    std::string version = kManifestVersion;
    double threshold = kDefaultDetectorThreshold;
    std::size_t caption_failures = 0;
    std::vector<ManifestRecord> records;

    /// Tallies keyed by label and by source.
    std::map<std::string, std::size_t> counts() const;
};

/// An ingested image before filtering.
struct InputImage {
    std::string path;
    SampleSource source = SampleSource::kCorpusA;
    Image image;
    std::string prompt;  // fixture metadata, may be empty
};

struct ScoredImage {
    InputImage input;
    double score = 0.0;
};

/// Reads <dir>/corpusA and <dir>/corpusB (.png or .tensor.json, optional
/// "<file>.meta.json" with {"prompt": ...}), sorted by source then path.
std::vector<InputImage> ingest_directory(const std::string& dir);

/// Keeps exactly the images whose top detection score is >= threshold.
std::vector<ScoredImage> filter_by_detector(std::span<const InputImage> images, const RegionDetector& detector,
                                            double threshold = kDefaultDetectorThreshold);

/// Caption source. Implementations throw Error(kCaptionFailed) on failure.
class CaptionerClient {
public:
    virtual ~CaptionerClient() = default;
    virtual std::string name() const = 0;
    virtual std::string caption(const InputImage& image) const = 0;
};

/// Deterministic template captions built from fixture metadata and the file name.
class StubCaptioner : public CaptionerClient {
public:
    std::string name() const override { return "stub"; }
    std::string caption(const InputImage& image) const override;
};

struct HttpCaptionerOptions {
    std::string url;  // http://host[:port]/path
    int timeout_seconds = 10;
    int max_attempts = 3;
    /// Bearer token source; read at call time.
    std::string token_env = "MGHAND_CAPTIONER_TOKEN";
};

/// POSTs the image as PNG and expects {"caption": "..."}.
class HttpCaptioner : public CaptionerClient {
public:
    explicit HttpCaptioner(HttpCaptionerOptions options);
    std::string name() const override { return "http"; }
    std::string caption(const InputImage& image) const override;

private:
    HttpCaptionerOptions options_;
    std::string host_;
    int port_ = 80;
    std::string path_;
};

/// "stub" or "http:<url>".
std::unique_ptr<CaptionerClient> make_captioner(const std::string& spec);

struct CaptionResult {
    std::optional<std::string> caption;
    std::string error;  // set when caption is empty
};

/// One result per image, in order; failures are recorded, not thrown.
std::vector<CaptionResult> caption_images(std::span<const InputImage> images, const CaptionerClient& client);

/// Conditioning token for a caption (the neutral token when nothing matches).
int caption_token(const std::string& caption);

struct GeneratedImage {
    std::optional<Image> image;  // empty when generation failed
    std::uint64_t seed = 0;
    int token = kNeutralToken;
    std::string error;
};

/// One sample per caption with per-item seeds derived from seed.
std::vector<GeneratedImage> generate_fakes(std::span<const std::string> captions, const Denoiser& model,
                                           const Backbone& bb, const SamplerConfig& sampler, std::uint64_t seed);

struct ManifestOptions {
    double threshold = kDefaultDetectorThreshold;
    /// Largest share of real records one corpus may hold.
    double max_source_share = 0.75;
};

/// Largest per-source share among real records.
double max_real_source_share(const DatasetManifest& manifest);
/// Throws invalid-argument when one real source exceeds max_share.
void check_source_balance(const DatasetManifest& manifest, double max_share);

/// Validates, sorts by source then path and writes the manifest atomically.
DatasetManifest build_manifest(std::vector<ManifestRecord> real, std::vector<ManifestRecord> fake,
                               const std::string& out_path, const ManifestOptions& options,
                               std::size_t caption_failures = 0);

std::string manifest_to_jsonl(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

struct BuildDatasetOptions {
    ManifestOptions manifest;
    double max_caption_failure_rate = 0.1;
    /// Fakes per kept real image.
    double fake_ratio = 1.0;
    SamplerConfig sampler;
    std::uint64_t seed = 0;
};

/// Ingest, filter, caption, generate fakes next to the manifest and write it.
DatasetManifest build_dataset(const std::string& input_dir, const std::string& out_path, const Backbone& bb,
                              const RegionDetector& detector, const CaptionerClient& captioner, const Denoiser& generator,
                              const BuildDatasetOptions& options);

/// Loads every record's image; tokens come from captions, labels 1 = real.
DiscriminatorDataset discriminator_dataset(const DatasetManifest& manifest, const std::string& manifest_path);

/// Writes a synthetic two-corpus fixture tree (per_source images per corpus).
void write_fixture_corpus(const std::string& dir, const Backbone& bb, int per_source, std::uint64_t seed);

}  // namespace mghand
