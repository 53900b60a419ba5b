#include "mghand/nn.hpp"

#include <cmath>
#include <cstring>

#include "mghand/error.hpp"
#include "mghand/lora.hpp"

namespace mghand {

void ParamStore::add(const std::string& name, Mat value) {
    require(!contains(name), "duplicate parameter '" + name + "'");
    tensors_.emplace(name, std::move(value));
}

const Mat& ParamStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) fail(ErrorCode::kInvalidArgument, "unknown parameter '" + name + "'");
    return it->second;
}

Mat& ParamStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) fail(ErrorCode::kInvalidArgument, "unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors_) n += static_cast<std::size_t>(m.size());
    return n;
}

std::string ParamStore::checksum() const {
    Fnv1a h;
    for (const auto& [name, m] : tensors_) {
        h.update(name);
        h.update(m);
    }
    return h.hex();
}

bool ParamStore::operator==(const ParamStore& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (const auto& [name, m] : tensors_) {
        auto it = other.tensors_.find(name);
        if (it == other.tensors_.end()) return false;
        const Mat& o = it->second;
        if (o.rows() != m.rows() || o.cols() != m.cols()) return false;
        if (std::memcmp(o.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size())) != 0) return false;
    }
    return true;
}

nlohmann::json mat_to_json(const Mat& m) {
    std::vector<double> data(m.data(), m.data() + m.size());
    return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat mat_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    require(static_cast<Eigen::Index>(data.size()) == rows * cols, "matrix payload size mismatch");
    Mat m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

nlohmann::json params_to_json(const ParamStore& p) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, m] : p.all()) j[name] = mat_to_json(m);
    return j;
}

ParamStore params_from_json(const nlohmann::json& j) {
    ParamStore p;
    for (const auto& [name, value] : j.items()) p.add(name, mat_from_json(value));
    return p;
}

Mat init_weight(Rng& rng, int fan_in, int fan_out, double gain) {
    Mat w(fan_in, fan_out);
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    return w;
}

ParamBinder::ParamBinder(ad::Tape& tape, const ParamStore& base, Mode mode, const LoraAdapter* adapter)
    : tape_(tape), base_(base), mode_(mode), adapter_(adapter) {}

ad::Var ParamBinder::get(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Mat& value = base_.at(name);
    ad::Var v = mode_ == Mode::kTrainBase ? tape_.parameter(value) : tape_.constant(value);
    if (mode_ == Mode::kTrainBase) trainable_.emplace(name, v);
    bound_.emplace(name, v);
    return v;
}

ad::Var ParamBinder::weight(const std::string& layer) {
    auto it = weights_.find(layer);
    if (it != weights_.end()) return it->second;
    ad::Var w = get(layer + ".weight");
    if (adapter_ != nullptr) {
        auto f = adapter_->factors.find(layer);
        const bool training = mode_ == Mode::kTrainAdapter;
        if (f != adapter_->factors.end() && adapter_->scale != 0.0 && (training || !f->second.up.isZero(0.0))) {
            ad::Var down = training ? tape_.parameter(f->second.down) : tape_.constant(f->second.down);
            ad::Var up = training ? tape_.parameter(f->second.up) : tape_.constant(f->second.up);
            if (training) {
                trainable_.emplace(layer + ".lora_down", down);
                trainable_.emplace(layer + ".lora_up", up);
            }
            w = ad::add(w, ad::scale(ad::matmul(down, up), adapter_->scale));
        }
    }
    weights_.emplace(layer, w);
    return w;
}

std::map<std::string, Mat> ParamBinder::gradients() const {
    std::map<std::string, Mat> g;
    for (const auto& [name, v] : trainable_) g.emplace(name, tape_.grad(v));
    return g;
}

void AdamW::step(std::map<std::string, Mat*> params, const std::map<std::string, Mat>& grads) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (auto& [name, p] : params) {
        auto g = grads.find(name);
        if (g == grads.end()) continue;
        auto& st = state_[name];
        if (st.m.size() == 0) {
            st.m = Mat::Zero(p->rows(), p->cols());
            st.v = Mat::Zero(p->rows(), p->cols());
        }
        st.m = config_.beta1 * st.m + (1.0 - config_.beta1) * g->second;
        st.v = config_.beta2 * st.v + (1.0 - config_.beta2) * g->second.cwiseAbs2();
        if (config_.weight_decay != 0.0) *p *= (1.0 - config_.lr * config_.weight_decay);
        const Mat mhat = st.m / bc1;
        const Mat vhat = st.v / bc2;
        *p -= (config_.lr * mhat.array() / (vhat.array().sqrt() + config_.eps)).matrix();
    }
}

}  // namespace mghand
