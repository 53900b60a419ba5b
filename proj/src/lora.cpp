#include "mghand/lora.hpp"

#include <cmath>
#include <cstring>

#include "mghand/denoiser.hpp"
#include "mghand/error.hpp"
#include "mghand/io.hpp"
#include "mghand/nn.hpp"
#include "mghand/vocabulary.hpp"

namespace mghand {

std::size_t LoraAdapter::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, f] : factors) n += static_cast<std::size_t>(f.down.size() + f.up.size());
    return n;
}

bool LoraAdapter::is_noop() const {
    if (scale == 0.0) return true;
    for (const auto& [_, f] : factors) {
        if (!f.up.isZero(0.0)) return false;
    }
    return true;
}

namespace {

bool bit_equal(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

bool LoraAdapter::operator==(const LoraAdapter& o) const {
    if (rank != o.rank || scale != o.scale || base_checksum != o.base_checksum || factors.size() != o.factors.size()) {
        return false;
    }
    for (const auto& [name, f] : factors) {
        auto it = o.factors.find(name);
        if (it == o.factors.end() || !bit_equal(f.down, it->second.down) || !bit_equal(f.up, it->second.up)) return false;
    }
    return true;
}

LoraAdapter init_adapter(const Denoiser& model, int rank, const std::vector<std::string>& targets, std::uint64_t seed) {
    if (rank < 1) fail(ErrorCode::kInvalidArgument, "LoRA rank must be >= 1, got " + std::to_string(rank));
    const auto layers = model.linear_layers();
    std::vector<std::string> chosen = targets.empty() ? layers : targets;
    for (const auto& name : chosen) {
        if (std::find(layers.begin(), layers.end(), name) == layers.end()) {
            fail(ErrorCode::kInvalidArgument, "unknown adapter target '" + name + "'");
        }
    }
    LoraAdapter a;
    a.rank = rank;
    a.base_checksum = model.checksum();
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0 / rank);
    for (const auto& name : chosen) {
        const Mat& w = model.params().at(name + ".weight");
        LoraFactors f;
        f.down.resize(w.rows(), rank);
        for (Eigen::Index i = 0; i < f.down.size(); ++i) f.down.data()[i] = dist(rng);
        f.up = Mat::Zero(rank, w.cols());
        a.factors.emplace(name, std::move(f));
    }
    return a;
}

LoraAdapter set_scale(const LoraAdapter& adapter, double v) {
    LoraAdapter out = adapter;
    out.scale = v;
    return out;
}

Vec merge_textual_eps(const Vec& eps_base, const Vec& direction, double v) {
    require(eps_base.size() == direction.size(), "merge_textual_eps: shapes differ");
    if (v == 0.0) return eps_base;
    return eps_base + v * direction;
}

std::vector<PromptTriple> default_prompt_triples() {
    const int n = kNeutralToken;
    auto id = [](const char* p) { return token_id(p); };
    return {
        {n, {id("realistic hands"), id("five fingers")}, {id("distorted hands"), id("clumsy hands")}},
        {n, {id("realistic hands"), id("correct anatomy")}, {id("poorly drawn hands"), id("blurry hands")}},
        {n, {id("five fingers"), id("8K")}, {id("distorted hands"), id("poorly drawn hands")}},
        {n, {id("correct anatomy"), id("8K")}, {id("clumsy hands"), id("blurry hands")}},
        {n,
         {id("realistic hands"), id("five fingers"), id("8K"), id("correct anatomy")},
         {id("distorted hands"), id("clumsy hands"), id("poorly drawn hands"), id("blurry hands")}},
    };
}

void validate_triples(const std::vector<PromptTriple>& triples) {
    require(!triples.empty(), "slider training needs at least one prompt triple");
    for (const auto& t : triples) {
        token(t.neutral);
        require(!t.positives.empty() && !t.negatives.empty(), "prompt triples need positives and negatives");
        for (int p : t.positives) token(p);
        for (int p : t.negatives) token(p);
    }
}

double slider_loss(const Denoiser& model, const LoraAdapter& adapter, const SliderBatch& batch, double v_train) {
    const auto b = static_cast<std::size_t>(batch.z_t.rows());
    require(batch.t.size() == b && batch.neutral.size() == b && batch.positive.size() == b && batch.negative.size() == b,
            "slider batch fields disagree on size");
    const Mat ep = model.predict(batch.z_t, batch.neutral, batch.t);
    const Mat epos = model.predict(batch.z_t, batch.positive, batch.t);
    const Mat eneg = model.predict(batch.z_t, batch.negative, batch.t);
    const Mat target = ep + v_train * (epos - eneg);
    const Mat pred = model.predict(batch.z_t, batch.neutral, batch.t, &adapter);
    return (pred - target).squaredNorm() / static_cast<double>(b);
}

SliderResult train_slider(const Denoiser& model, const LoraAdapter& initial, const std::vector<PromptTriple>& triples,
                          const SliderConfig& config) {
    validate_triples(triples);
    require(config.steps >= 1 && config.batch_size >= 1, "slider steps and batch size must be positive");
    require(config.anchor_count >= 1 && config.anchor_steps >= 1, "slider anchors need positive count and steps");
    if (initial.base_checksum != model.checksum()) {
        fail(ErrorCode::kInvalidArgument, "adapter was initialised for a different base model");
    }
    const NoiseSchedule& sched = model.schedule();
    const int dim = model.latent_shape().size();

    std::vector<Vec> anchors;
    anchors.reserve(static_cast<std::size_t>(config.anchor_count));
    for (int k = 0; k < config.anchor_count; ++k) {
        SamplerConfig sc;
        sc.num_steps = std::min(config.anchor_steps, sched.T);
        sc.cfg_scale = 1.0;
        sc.seed = derive_seed(config.seed, static_cast<std::uint64_t>(k));
        anchors.push_back(sample_base(model, triples[static_cast<std::size_t>(k) % triples.size()].neutral, sc));
    }

    LoraAdapter working = set_scale(initial, 1.0);
    AdamW opt(AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng rng(derive_seed(config.seed, 0xa11ce));
    std::uniform_int_distribution<int> t_dist(1, sched.T);
    std::uniform_int_distribution<std::size_t> triple_dist(0, triples.size() - 1);
    std::uniform_int_distribution<std::size_t> anchor_dist(0, anchors.size() - 1);

    SliderResult result;
    result.losses.reserve(static_cast<std::size_t>(config.steps));
    for (int step = 0; step < config.steps; ++step) {
        SliderBatch batch;
        batch.z_t.resize(config.batch_size, dim);
        for (int r = 0; r < config.batch_size; ++r) {
            const auto& tr = triples[triple_dist(rng)];
            batch.neutral.push_back(tr.neutral);
            batch.positive.push_back(tr.positives[std::uniform_int_distribution<std::size_t>(0, tr.positives.size() - 1)(rng)]);
            batch.negative.push_back(tr.negatives[std::uniform_int_distribution<std::size_t>(0, tr.negatives.size() - 1)(rng)]);
            const int t = t_dist(rng);
            batch.t.push_back(t);
            const Vec& x0 = anchors[anchor_dist(rng)];
            batch.z_t.row(r) = add_noise(x0, t, standard_normal(rng, dim), sched).transpose();
        }
        const Mat ep = model.predict(batch.z_t, batch.neutral, batch.t);
        const Mat epos = model.predict(batch.z_t, batch.positive, batch.t);
        const Mat eneg = model.predict(batch.z_t, batch.negative, batch.t);
        const Mat target = ep + config.v_train * (epos - eneg);

        ad::Tape tape;
        ParamBinder binder(tape, model.params(), ParamBinder::Mode::kTrainAdapter, &working);
        ad::Var pred = model.forward(binder, tape.constant(batch.z_t), batch.neutral, batch.t);
        // Per-row squared norm averaged over rows.
        ad::Var loss = ad::scale(ad::mse(pred, target), static_cast<double>(dim));
        const double lv = loss.value()(0, 0);
        if (!std::isfinite(lv)) {
            fail(ErrorCode::kTrainingDiverged, "slider training diverged at step " + std::to_string(step + 1));
        }
        result.losses.push_back(lv);
        tape.backward(loss);
        const auto grads = binder.gradients();
        std::map<std::string, Mat*> ptrs;
        for (auto& [name, f] : working.factors) {
            ptrs.emplace(name + ".lora_down", &f.down);
            ptrs.emplace(name + ".lora_up", &f.up);
        }
        opt.step(ptrs, grads);
    }
    result.adapter = set_scale(working, initial.scale);
    return result;
}

nlohmann::json adapter_to_json(const LoraAdapter& a) {
    nlohmann::json factors = nlohmann::json::object();
    for (const auto& [name, f] : a.factors) {
        factors[name] = {{"down", mat_to_json(f.down)}, {"up", mat_to_json(f.up)}};
    }
    return {{"format", "mghand.adapter"},
            {"version", 1},
            {"rank", a.rank},
            {"scale", a.scale},
            {"base_checksum", a.base_checksum},
            {"factors", factors}};
}

LoraAdapter adapter_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mghand.adapter") fail(ErrorCode::kIo, "not an adapter checkpoint");
    LoraAdapter a;
    a.rank = j.at("rank").get<int>();
    a.scale = j.at("scale").get<double>();
    a.base_checksum = j.at("base_checksum").get<std::string>();
    for (const auto& [name, f] : j.at("factors").items()) {
        LoraFactors lf{mat_from_json(f.at("down")), mat_from_json(f.at("up"))};
        if (lf.down.cols() != a.rank || lf.up.rows() != a.rank) {
            fail(ErrorCode::kIo, "adapter factors for '" + name + "' do not match rank");
        }
        a.factors.emplace(name, std::move(lf));
    }
    return a;
}

void save_adapter(const LoraAdapter& adapter, const std::string& path) {
    io::write_text_atomic(path, adapter_to_json(adapter).dump() + "\n");
}

LoraAdapter load_adapter(const std::string& path) { return adapter_from_json(io::read_json(path)); }

nlohmann::json triples_to_json(const std::vector<PromptTriple>& triples) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : triples) {
        std::vector<std::string> pos, neg;
        for (int p : t.positives) pos.push_back(token(p).phrase);
        for (int p : t.negatives) neg.push_back(token(p).phrase);
        arr.push_back({{"neutral", token(t.neutral).phrase}, {"positives", pos}, {"negatives", neg}});
    }
    return arr;
}

std::vector<PromptTriple> triples_from_json(const nlohmann::json& j) {
    require(j.is_array(), "prompt triples must be a JSON array");
    std::vector<PromptTriple> out;
    for (const auto& item : j) {
        PromptTriple t;
        t.neutral = token_id(item.at("neutral").get<std::string>());
        for (const auto& p : item.at("positives")) t.positives.push_back(token_id(p.get<std::string>()));
        for (const auto& p : item.at("negatives")) t.negatives.push_back(token_id(p.get<std::string>()));
        out.push_back(std::move(t));
    }
    validate_triples(out);
    return out;
}

}  // namespace mghand
