// mghand command-line front end. Every subcommand reads an optional JSON
// config, applies flag overrides on top and calls into the C interface.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mghand/mghand.h"

namespace {

using nlohmann::json;

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    json patch = json::object();
};

template <typename T>
void flag(CLI::App* app, const std::string& flag, std::optional<T>& slot, const std::string& help) {
    app->add_option(flag, slot, help);
}

template <typename T>
void put(json& patch, const std::optional<T>& value, std::initializer_list<const char*> path) {
    if (!value) return;
    json* node = &patch;
    auto it = path.begin();
    for (; std::next(it) != path.end(); ++it) node = &(*node)[*it];
    (*node)[*it] = *value;
}

json base_config(const std::string& path) {
    char* text = nullptr;
    if (path.empty()) {
        if (mgh_default_config(&text) != MGH_OK) throw std::runtime_error(mgh_last_error());
        json j = json::parse(text);
        mgh_free_string(text);
        return j;
    }
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return json::parse(ss.str());
}

json merged(const json& base, const json& patch) {
    json out = base;
    out.merge_patch(patch);
    return out;
}

int report(mgh_status st, char* summary) {
    if (st == MGH_OK) {
        if (summary != nullptr) std::cout << summary << "\n";
        mgh_free_string(summary);
        return 0;
    }
    mgh_free_string(summary);
    std::cerr << "error [" << mgh_status_name(st) << "]: " << mgh_last_error() << "\n";
    return static_cast<int>(st);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Guided diffusion toolkit with visual and textual guidance"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(mgh_version()));

    Common common;
    std::function<int(const std::string&)> action;

    auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "Master seed")->required();
        return sub;
    };

    // train-denoiser
    std::string out_path;
    std::optional<int> epochs, batch, dataset_size, steps, rank, num_samples;
    std::optional<double> lr, w, v, tau, cfg_scale, threshold;
    std::optional<std::string> backbone, prompt, data, triples, input, captioner, detector;
    std::string generated, reference, prompts;

    auto* td = add("train-denoiser", "Train the base conditional denoiser");
    flag(td, "--backbone", backbone, "points | images");
    flag(td, "--epochs", epochs, "Training epochs");
    flag(td, "--batch", batch, "Batch size");
    flag(td, "--lr", lr, "Learning rate");
    flag(td, "--dataset-size", dataset_size, "Training samples drawn from the backbone");
    td->add_option("--out", out_path, "Checkpoint path")->required();
    td->callback([&] {
        put(common.patch, backbone, {"backbone"});
        put(common.patch, epochs, {"train_denoiser", "epochs"});
        put(common.patch, batch, {"train_denoiser", "batch_size"});
        put(common.patch, lr, {"train_denoiser", "lr"});
        put(common.patch, dataset_size, {"train_denoiser", "dataset_size"});
        action = [&](const std::string& cfg) {
            char* s = nullptr;
            const mgh_status st = mgh_train_denoiser(cfg.c_str(), out_path.c_str(), &s);
            return report(st, s);
        };
    });

    auto* tdis = add("train-discriminator", "Train the real/fake discriminator on a manifest");
    flag(tdis, "--epochs", epochs, "Training epochs");
    flag(tdis, "--batch", batch, "Batch size");
    flag(tdis, "--lr", lr, "Learning rate");
    flag(tdis, "--data", data, "Dataset manifest (.jsonl)");
    tdis->add_option("--out", out_path, "Checkpoint path")->required();
    tdis->callback([&] {
        put(common.patch, epochs, {"train_discriminator", "epochs"});
        put(common.patch, batch, {"train_discriminator", "batch_size"});
        put(common.patch, lr, {"train_discriminator", "lr"});
        put(common.patch, data, {"train_discriminator", "manifest"});
        action = [&](const std::string& cfg) {
            char* s = nullptr;
            const mgh_status st = mgh_train_discriminator(cfg.c_str(), out_path.c_str(), &s);
            return report(st, s);
        };
    });

    auto* tl = add("train-lora", "Train a low-rank slider adapter");
    flag(tl, "--rank", rank, "Adapter rank");
    flag(tl, "--lr", lr, "Learning rate");
    flag(tl, "--steps", steps, "Optimisation steps");
    flag(tl, "--triples", triples, "Prompt-triple file (JSON)");
    tl->add_option("--out", out_path, "Adapter checkpoint path")->required();
    tl->callback([&] {
        put(common.patch, rank, {"train_lora", "rank"});
        put(common.patch, lr, {"train_lora", "lr"});
        put(common.patch, steps, {"train_lora", "steps"});
        put(common.patch, triples, {"train_lora", "triples"});
        action = [&](const std::string& cfg) {
            char* s = nullptr;
            const mgh_status st = mgh_train_lora(cfg.c_str(), out_path.c_str(), &s);
            return report(st, s);
        };
    });

    auto* bd = add("build-dataset", "Filter, caption and pair real/fake images into a manifest");
    flag(bd, "--input", input, "Directory with corpusA/ and corpusB/");
    flag(bd, "--threshold", threshold, "Detector score threshold");
    flag(bd, "--captioner", captioner, "stub | http:<url>");
    bd->add_option("--out", out_path, "Manifest path")->required();
    bd->callback([&] {
        put(common.patch, input, {"dataset", "input"});
        put(common.patch, threshold, {"dataset", "threshold"});
        put(common.patch, captioner, {"dataset", "captioner"});
        action = [&](const std::string& cfg) {
            char* s = nullptr;
            const mgh_status st = mgh_build_dataset(cfg.c_str(), out_path.c_str(), &s);
            return report(st, s);
        };
    });

    auto* sm = add("sample", "Guided sampling");
    flag(sm, "--prompt", prompt, "Prompt text");
    flag(sm, "--w", w, "Visual guidance weight");
    flag(sm, "--v", v, "Adapter scale");
    flag(sm, "--tau", tau, "Mask threshold");
    flag(sm, "--steps", steps, "DDIM steps");
    flag(sm, "--cfg", cfg_scale, "Classifier-free guidance scale");
    flag(sm, "--num-samples", num_samples, "Number of samples");
    flag(sm, "--detector", detector, "Region detector");
    sm->add_option("--out", out_path, "Output directory")->required();
    sm->callback([&] {
        put(common.patch, prompt, {"prompt"});
        put(common.patch, w, {"guidance", "w"});
        put(common.patch, v, {"guidance", "v"});
        put(common.patch, tau, {"guidance", "tau"});
        put(common.patch, steps, {"sampler", "num_steps"});
        put(common.patch, cfg_scale, {"sampler", "cfg_scale"});
        put(common.patch, num_samples, {"num_samples"});
        put(common.patch, detector, {"detector"});
        action = [&](const std::string& cfg) {
            char* s = nullptr;
            const mgh_status st = mgh_sample(cfg.c_str(), out_path.c_str(), &s);
            return report(st, s);
        };
    });

    auto* ev = add("evaluate", "Compute the metric report for a sample directory");
    ev->add_option("--generated", generated, "Generated sample directory")->required();
    ev->add_option("--reference", reference, "Reference sample directory (default: drawn from the backbone)");
    ev->add_option("--prompts", prompts, "One prompt per line, matching the sample order");
    ev->add_option("--out", out_path, "Report path")->required();
    ev->callback([&] {
        action = [&](const std::string& cfg) {
            char* s = nullptr;
            const mgh_status st = mgh_evaluate(cfg.c_str(), generated.c_str(), reference.c_str(), prompts.c_str(),
                                       out_path.c_str(), &s);
            return report(st, s);
        };
    });

    auto* rp = add("run-pipeline", "Sample, mask and evaluate into a run directory");
    flag(rp, "--w", w, "Visual guidance weight");
    flag(rp, "--v", v, "Adapter scale");
    flag(rp, "--num-samples", num_samples, "Number of samples");
    std::optional<std::string> run_out;
    flag(rp, "--out", run_out, "Run directory");
    rp->callback([&] {
        put(common.patch, w, {"guidance", "w"});
        put(common.patch, v, {"guidance", "v"});
        put(common.patch, num_samples, {"num_samples"});
        put(common.patch, run_out, {"output_dir"});
        action = [&](const std::string& cfg) {
            char* s = nullptr;
            const mgh_status st = mgh_run_pipeline(cfg.c_str(), &s);
            return report(st, s);
        };
    });

    CLI11_PARSE(app, argc, argv);

    try {
        common.patch["seed"] = common.seed;
        const std::string cfg = merged(base_config(common.config_path), common.patch).dump();
        char* errors = nullptr;
        const mgh_status st = mgh_validate_config(cfg.c_str(), &errors);
        if (st != MGH_OK) {
            std::cerr << "invalid configuration:\n";
            for (const auto& e : json::parse(errors != nullptr ? errors : "[]")) std::cerr << "  " << e.get<std::string>() << "\n";
            mgh_free_string(errors);
            return static_cast<int>(st);
        }
        mgh_free_string(errors);
        return action(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
