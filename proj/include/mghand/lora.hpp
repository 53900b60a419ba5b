#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mghand/schedule.hpp"
#include "mghand/tensor.hpp"

namespace mghand {

class Denoiser;

inline constexpr int kDefaultLoraRank = 4;

/// Low-rank factors for one linear layer: update = down (d x r) * up (r x k).
struct LoraFactors {
    Mat down;
    Mat up;
};

struct LoraAdapter {
    int rank = kDefaultLoraRank;
    double scale = 1.0;
    std::map<std::string, LoraFactors> factors;
    std::string base_checksum;

    std::size_t parameter_count() const;
    /// True when the merged update is identically zero (scale 0 or all up factors zero).
    bool is_noop() const;
    bool operator==(const LoraAdapter&) const;
};

/// Factors for the named layers (all linear layers when targets is empty).
/// down ~ N(0, 1/rank^2), up = 0, so a fresh adapter leaves the model unchanged.
LoraAdapter init_adapter(const Denoiser& model, int rank, const std::vector<std::string>& targets, std::uint64_t seed);

/// Copy of the adapter with a new merge scale.
LoraAdapter set_scale(const LoraAdapter& adapter, double v);

/// eps_base + v * direction; v = 0 returns eps_base unchanged.
Vec merge_textual_eps(const Vec& eps_base, const Vec& direction, double v);

struct PromptTriple {
    int neutral;
    std::vector<int> positives;
    std::vector<int> negatives;
};

/// Five prompt sets around the neutral "hands" token.
std::vector<PromptTriple> default_prompt_triples();
void validate_triples(const std::vector<PromptTriple>& triples);

struct SliderConfig {
    double v_train = 1.0;
    int steps = 3000;
    double lr = 1e-4;
    int batch_size = 1;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    /// Clean anchors drawn from the frozen model (neutral prompt) that get re-noised each step.
    int anchor_count = 64;
    int anchor_steps = 20;
};

struct SliderBatch {
    Mat z_t;                  // batch x latent
    std::vector<int> t;       // per row
    std::vector<int> neutral;
    std::vector<int> positive;
    std::vector<int> negative;
};

/// Mean over rows of || eps_adapted(z, p) - [eps(z, p) + v (eps(z, p+) - eps(z, p-))] ||^2,
/// with eps the frozen base model.
double slider_loss(const Denoiser& model, const LoraAdapter& adapter, const SliderBatch& batch, double v_train);

struct SliderResult {
    LoraAdapter adapter;
    std::vector<double> losses;  // one per optimisation step
};

SliderResult train_slider(const Denoiser& model, const LoraAdapter& initial, const std::vector<PromptTriple>& triples,
                          const SliderConfig& config);


nlohmann::json adapter_to_json(const LoraAdapter& adapter);
LoraAdapter adapter_from_json(const nlohmann::json& j);
void save_adapter(const LoraAdapter& adapter, const std::string& path);
LoraAdapter load_adapter(const std::string& path);

/// [{"neutral": "hands", "positives": [...], "negatives": [...]}, ...]
nlohmann::json triples_to_json(const std::vector<PromptTriple>& triples);
std::vector<PromptTriple> triples_from_json(const nlohmann::json& j);

}  // namespace mghand
