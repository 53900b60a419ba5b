#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "mghand/autodiff.hpp"
#include "mghand/tensor.hpp"

namespace mghand {

struct LoraAdapter;

/// Named parameter matrices, ordered by name so serialization is stable.
class ParamStore {
public:
    void add(const std::string& name, Mat value);
    const Mat& at(const std::string& name) const;
    Mat& at(const std::string& name);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const std::map<std::string, Mat>& all() const { return tensors_; }
    std::map<std::string, Mat>& all() { return tensors_; }
    std::size_t scalar_count() const;
    /// FNV-1a over names, shapes and raw bytes.
    std::string checksum() const;

    bool operator==(const ParamStore& other) const;

private:
    std::map<std::string, Mat> tensors_;
};

nlohmann::json mat_to_json(const Mat& m);
Mat mat_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const ParamStore& p);
ParamStore params_from_json(const nlohmann::json& j);

/// Gaussian init with std = gain / sqrt(fan_in).
Mat init_weight(Rng& rng, int fan_in, int fan_out, double gain = 1.0);

/// Binds stored parameters onto a tape for one forward/backward pass.
class ParamBinder {
public:
    enum class Mode {
        kFrozen,        // everything is a constant
        kTrainBase,     // base parameters receive gradients
        kTrainAdapter,  // only adapter factors receive gradients
    };

    ParamBinder(ad::Tape& tape, const ParamStore& base, Mode mode = Mode::kFrozen,
                const LoraAdapter* adapter = nullptr);

    ad::Tape& tape() { return tape_; }
    ad::Var get(const std::string& name);
    /// "<layer>.weight" with the adapter's low-rank update merged in when active.
    ad::Var weight(const std::string& layer);
    ad::Var bias(const std::string& layer) { return get(layer + ".bias"); }

    /// Gradients of every trainable leaf bound so far. Adapter leaves are keyed
    /// "<layer>.lora_down" / "<layer>.lora_up".
    std::map<std::string, Mat> gradients() const;

private:
    ad::Tape& tape_;
    const ParamStore& base_;
    Mode mode_;
    const LoraAdapter* adapter_;
    std::map<std::string, ad::Var> bound_;
    std::map<std::string, ad::Var> weights_;
    std::map<std::string, ad::Var> trainable_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Adam with decoupled weight decay.
class AdamW {
public:
    explicit AdamW(AdamConfig config) : config_(config) {}

    void step(std::map<std::string, Mat*> params, const std::map<std::string, Mat>& grads);

private:
    struct Moments {
        Mat m;
        Mat v;
    };
    AdamConfig config_;
    std::map<std::string, Moments> state_;
    long step_count_ = 0;
};

}  // namespace mghand
