#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "doctest.h"
#include "mghand/backbone.hpp"
#include "mghand/dataset.hpp"
#include "mghand/error.hpp"
#include "mghand/io.hpp"

// After Eigen: resolv.h defines _res.
#include "httplib.h"

using namespace mghand;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "mghand_unit" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Reports the first pixel as its confidence.
class ValueDetector : public RegionDetector {
public:
    std::string name() const override { return "value"; }
    Detection detect(const Image& image) const override {
        Detection d;
        d.region = BinaryGrid(image.shape.height, image.shape.width, 1);
        d.score = image.data[0];
        return d;
    }
};

InputImage input(const std::string& path, double value, SampleSource src = SampleSource::kCorpusA) {
    InputImage in;
    in.path = path;
    in.source = src;
    in.image = Image({1, 2, 2}, Vec::Constant(4, value));
    return in;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_text(e.path().string());
    }
    return out;
}

ManifestRecord record(const std::string& path, SampleSource src, double score) {
    ManifestRecord r;
    r.image_path = path;
    r.caption = "hands";
    r.source = src;
    r.detector_score = score;
    return r;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("detector filter keeps exactly the scores at or above threshold") {
    const std::vector<double> scores = {0.5, 0.79, std::nextafter(0.8, 0.0), 0.8, 0.81, 1.0, 0.0};
    std::vector<InputImage> ins;
    for (std::size_t i = 0; i < scores.size(); ++i) ins.push_back(input("img" + std::to_string(i), scores[i]));
    const auto kept = filter_by_detector(ins, ValueDetector(), 0.8);
    REQUIRE(kept.size() == 3);
    CHECK(kept[0].input.path == "img3");
    CHECK(kept[1].input.path == "img4");
    CHECK(kept[2].input.path == "img5");
    for (const auto& k : kept) CHECK(k.score >= 0.8);
}

TEST_CASE("stub captions are deterministic and mention the subject") {
    const StubCaptioner stub;
    auto in = input("corpusA/x_001.png", 0.9);
    in.prompt = "five fingers";
    const auto c = stub.caption(in);
    CHECK(c == stub.caption(in));
    CHECK(c.find("five fingers") != std::string::npos);
    CHECK(caption_token(c) == 3);
    CHECK(caption_token("a bowl of fruit") == kNeutralToken);
    CHECK_THROWS_AS(make_captioner("ftp://x"), Error);
    CHECK(make_captioner("stub")->name() == "stub");
    CHECK(make_captioner("http:http://127.0.0.1:9/c")->name() == "http");
}

TEST_CASE("http captioner: timeouts fail only the affected item") {
    httplib::Server server;
    std::atomic<int> with_auth{0};
    server.Post("/caption", [&](const httplib::Request& req, httplib::Response& res) {
        if (req.get_header_value("Authorization") == "Bearer secret") ++with_auth;
        const auto tmp = fs::temp_directory_path() / "mghand_unit" / ("srv_" + std::to_string(std::hash<std::string>{}(req.body)) + ".png");
        {
            std::ofstream(tmp, std::ios::binary) << req.body;
        }
        const Image img = io::read_png(tmp.string());
        if (img.data[0] > 0.9) std::this_thread::sleep_for(std::chrono::milliseconds(2500));
        if (img.data[0] < -0.9) {
            res.status = 403;
            return;
        }
        res.set_content(R"({"caption": "a photo of realistic hands"})", "application/json");
    });
    fresh_dir("srv");
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ::setenv("MGHAND_TEST_CAPTION_TOKEN", "secret", 1);
    HttpCaptionerOptions opts;
    opts.url = "http://127.0.0.1:" + std::to_string(port) + "/caption";
    opts.timeout_seconds = 1;
    opts.max_attempts = 2;
    opts.token_env = "MGHAND_TEST_CAPTION_TOKEN";
    const HttpCaptioner client(opts);

    const std::vector<InputImage> items = {input("a", 0.0), input("b", 1.0), input("c", 0.5), input("d", -1.0)};
    const auto results = caption_images(items, client);
    server.stop();
    worker.join();

    REQUIRE(results.size() == 4);
    CHECK(results[0].caption == "a photo of realistic hands");
    CHECK_FALSE(results[1].caption.has_value());
    CHECK_FALSE(results[1].error.empty());
    CHECK(results[2].caption == "a photo of realistic hands");
    CHECK_FALSE(results[3].caption.has_value());
    CHECK(results[3].error.find("403") != std::string::npos);
    CHECK(with_auth.load() >= 3);
}

TEST_CASE("unreachable captioner fails every item without throwing") {
    HttpCaptionerOptions opts;
    opts.url = "http://127.0.0.1:9/caption";
    opts.timeout_seconds = 1;
    opts.max_attempts = 1;
    const std::vector<InputImage> items = {input("a", 0.0)};
    const auto results = caption_images(items, HttpCaptioner(opts));
    CHECK_FALSE(results[0].caption.has_value());
}

TEST_CASE("manifest counts match records and survive a reload") {
    const auto dir = fresh_dir("manifest");
    std::vector<ManifestRecord> real, fake;
    for (int i = 0; i < 4; ++i) {
        const auto src = i % 2 ? SampleSource::kCorpusB : SampleSource::kCorpusA;
        const std::string p = "r" + std::to_string(i) + ".tensor.json";
        io::write_tensor((dir / p).string(), Image({2, 1, 1}, Vec::Zero(2)));
        real.push_back(record(p, src, 0.9));
        const std::string f = "f" + std::to_string(i) + ".tensor.json";
        io::write_tensor((dir / f).string(), Image({2, 1, 1}, Vec::Zero(2)));
        auto r = record(f, SampleSource::kGenerated, 0.0);
        r.label = SampleLabel::kFake;
        r.seed = 100 + i;
        r.generator_config_hash = "abc";
        fake.push_back(r);
    }
    const auto path = (dir / "manifest.jsonl").string();
    const auto m = build_manifest(real, fake, path, {});
    const auto counts = m.counts();
    CHECK(counts.at("real") == 4);
    CHECK(counts.at("fake") == 4);
    CHECK(counts.at("corpusA") == 2);
    CHECK(counts.at("corpusB") == 2);
    CHECK(counts.at("generated") == 4);
    const auto back = load_manifest(path);
    CHECK(back.counts() == counts);
    CHECK(manifest_to_jsonl(back) == io::read_text(path));

    std::string text = io::read_text(path);
    text.erase(text.rfind('{'));
    io::write_text_atomic(path, text);
    CHECK_THROWS_AS(load_manifest(path), Error);
}

TEST_CASE("manifest rejects bad records") {
    const auto dir = fresh_dir("manifest_bad");
    io::write_tensor((dir / "a.tensor.json").string(), Image({2, 1, 1}, Vec::Zero(2)));
    io::write_tensor((dir / "b.tensor.json").string(), Image({2, 1, 1}, Vec::Zero(2)));
    const auto path = (dir / "m.jsonl").string();
    CHECK_THROWS_AS(build_manifest({record("missing.png", SampleSource::kCorpusA, 0.9)}, {}, path, {}), Error);
    CHECK_THROWS_AS(build_manifest({record("a.tensor.json", SampleSource::kCorpusA, 0.5)}, {}, path, {}), Error);
    auto fake = record("b.tensor.json", SampleSource::kGenerated, 0.0);
    fake.label = SampleLabel::kFake;
    CHECK_THROWS_AS(build_manifest({}, {fake}, path, {}), Error);
    ManifestOptions strict;
    strict.max_source_share = 0.6;
    CHECK_THROWS_AS(build_manifest({record("a.tensor.json", SampleSource::kCorpusA, 0.9),
                                    record("b.tensor.json", SampleSource::kCorpusA, 0.9)},
                                   {}, path, strict),
                    Error);
}

TEST_CASE("stub builds are byte-identical across reruns") {
    const auto& bb = backbone(BackboneKind::kPoints);
    const auto model = bb.make_denoiser(make_schedule(1000), 1);
    const auto detector = bb.make_detector();
    BuildDatasetOptions opts;
    opts.sampler.num_steps = 10;
    opts.seed = 5;
    std::vector<std::map<std::string, std::string>> trees;
    for (const char* name : {"build1", "build2"}) {
        const auto root = fresh_dir(name);
        write_fixture_corpus((root / "corpus").string(), bb, 30, 3);
        const auto m = build_dataset((root / "corpus").string(), (root / "out" / "manifest.jsonl").string(), bb,
                                     *detector, StubCaptioner(), *model, opts);
        CHECK(m.counts().at("real") == m.counts().at("fake"));
        CHECK(m.counts().at("real") == m.counts().at("corpusA") + m.counts().at("corpusB"));
        for (const auto& r : m.records) {
            if (r.label == SampleLabel::kReal) CHECK(r.detector_score >= kDefaultDetectorThreshold);
        }
        trees.push_back(tree_bytes(root));
    }
    CHECK(trees[0].size() > 10);
    CHECK(trees[0] == trees[1]);
}

TEST_CASE("discriminator data follows the manifest") {
    const auto& bb = backbone(BackboneKind::kPoints);
    const auto model = bb.make_denoiser(make_schedule(1000), 1);
    const auto detector = bb.make_detector();
    const auto root = fresh_dir("disc_data");
    write_fixture_corpus((root / "corpus").string(), bb, 20, 4);
    BuildDatasetOptions opts;
    opts.sampler.num_steps = 10;
    const auto path = (root / "manifest.jsonl").string();
    const auto m = build_dataset((root / "corpus").string(), path, bb, *detector, StubCaptioner(), *model, opts);
    const auto d = discriminator_dataset(load_manifest(path), path);
    CHECK(d.size() == m.records.size());
    CHECK(d.pixels.cols() == 2);
    std::size_t reals = 0;
    for (int l : d.labels) reals += l;
    CHECK(reals == m.counts().at("real"));
}

}  // TEST_SUITE
