#include "mghand/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mghand/error.hpp"
#include "mghand/io.hpp"
#include "mghand/vocabulary.hpp"

namespace mghand {

namespace {

constexpr int kPointHidden = 32;
constexpr int kConvChannels = 8;
constexpr int kHeadHidden = 32;
constexpr double kPointJitter = 1.0;
constexpr double kPixelNoise = 0.02;

int feature_dim(BackboneKind kind, const Shape& input) {
    if (kind == BackboneKind::kPoints) return kPointHidden;
    return kConvChannels * (input.height / 8) * (input.width / 8);
}

}  // namespace

std::string to_string(DiscriminatorLoss loss) {
    return loss == DiscriminatorLoss::kLeastSquares ? "least-squares" : "sigmoid-mse";
}

DiscriminatorLoss parse_discriminator_loss(const std::string& name) {
    if (name == "least-squares") return DiscriminatorLoss::kLeastSquares;
    if (name == "sigmoid-mse") return DiscriminatorLoss::kSigmoidMse;
    fail(ErrorCode::kInvalidArgument, "unknown discriminator loss '" + name + "'");
}

Discriminator::Discriminator(BackboneKind backbone, DiscriminatorLoss loss, std::uint64_t init_seed)
    : backbone_(backbone), input_(mghand::backbone(backbone).pixel_shape()), loss_(loss) {
    Rng rng(init_seed);
    params_.add("embed.table", init_weight(rng, 1, vocab_size() * kConditionDim).reshaped(vocab_size(), kConditionDim));
    if (backbone_ == BackboneKind::kPoints) {
        params_.add("fx1.weight", init_weight(rng, input_.size(), kPointHidden));
        params_.add("fx1.bias", Mat::Zero(1, kPointHidden));
        params_.add("fx2.weight", init_weight(rng, kPointHidden, kPointHidden));
        params_.add("fx2.bias", Mat::Zero(1, kPointHidden));
    } else {
        require(input_.height % 8 == 0 && input_.width % 8 == 0, "discriminator input must be divisible by 8");
        params_.add("conv1.weight", init_weight(rng, input_.channels * 9, kConvChannels));
        params_.add("conv1.bias", Mat::Zero(1, kConvChannels));
        params_.add("conv2.weight", init_weight(rng, kConvChannels * 9, kConvChannels));
        params_.add("conv2.bias", Mat::Zero(1, kConvChannels));
    }
    const int fd = feature_dim(backbone_, input_);
    params_.add("head1.weight", init_weight(rng, fd + kConditionDim, kHeadHidden));
    params_.add("head1.bias", Mat::Zero(1, kHeadHidden));
    params_.add("head2.weight", init_weight(rng, kHeadHidden, kScoreDim, 0.5));
    params_.add("head2.bias", Mat::Zero(1, kScoreDim));
}

ad::Var Discriminator::features(ParamBinder& p, const ad::Var& x) const {
    if (backbone_ == BackboneKind::kPoints) {
        ad::Var h = ad::silu(ad::linear(x, p.weight("fx1"), p.bias("fx1")));
        return ad::silu(ad::linear(h, p.weight("fx2"), p.bias("fx2")));
    }
    ad::Geometry g{input_.channels, input_.height, input_.width};
    ad::Var h = ad::avgpool2x(x, g);
    g = {g.channels, g.height / 2, g.width / 2};
    h = ad::silu(ad::conv3x3(h, g, p.weight("conv1"), p.bias("conv1")));
    g.channels = kConvChannels;
    h = ad::avgpool2x(h, g);
    g = {g.channels, g.height / 2, g.width / 2};
    h = ad::silu(ad::conv3x3(h, g, p.weight("conv2"), p.bias("conv2")));
    return ad::avgpool2x(h, g);
}

ad::Var Discriminator::forward(ParamBinder& p, const ad::Var& pixels, std::span<const int> tokens) const {
    require(pixels.cols() == input_.size(),
            "discriminator expects " + input_.str() + " inputs, got width " + std::to_string(pixels.cols()));
    require(static_cast<std::size_t>(pixels.rows()) == tokens.size(), "discriminator: one token per row required");
    const ad::Var parts[2] = {features(p, pixels), ad::gather_rows(p.get("embed.table"), tokens)};
    ad::Var h = ad::silu(ad::linear(ad::concat_cols(parts), p.weight("head1"), p.bias("head1")));
    ad::Var out = ad::linear(h, p.weight("head2"), p.bias("head2"));
    return loss_ == DiscriminatorLoss::kSigmoidMse ? ad::sigmoid(out) : out;
}

Mat Discriminator::score(const Mat& pixels, std::span<const int> tokens) const {
    ad::Tape tape(false);
    ParamBinder binder(tape, params_);
    return forward(binder, tape.constant(pixels), tokens).value();
}

Vec Discriminator::score(const Image& image, int token) const {
    require(image.shape == input_, "discriminator expects " + input_.str() + " images, got " + image.shape.str());
    const int tok[1] = {token};
    return score(Mat(image.data.transpose()), tok).row(0).transpose();
}

nlohmann::json Discriminator::architecture() const {
    return {{"backbone", to_string(backbone_)},
            {"input", {input_.channels, input_.height, input_.width}},
            {"score_dim", kScoreDim},
            {"loss", to_string(loss_)}};
}

Vec augment_sample(BackboneKind backbone, const Vec& pixels, Rng& rng) {
    if (backbone == BackboneKind::kPoints) {
        std::normal_distribution<double> jitter(0.0, kPointJitter);
        Vec out = pixels;
        for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += jitter(rng);
        return out;
    }
    std::normal_distribution<double> noise(0.0, kPixelNoise);
    const Shape s = mghand::backbone(backbone).pixel_shape();
    std::uniform_int_distribution<int> shift(-1, 1);
    std::bernoulli_distribution flip(0.5);
    const int dy = shift(rng), dx = shift(rng);
    const bool mirror = flip(rng);
    Vec out(pixels.size());
    for (int c = 0; c < s.channels; ++c) {
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                const int sy = y - dy;
                int sx = x - dx;
                if (mirror) sx = s.width - 1 - sx;
                const bool inside = sy >= 0 && sy < s.height && sx >= 0 && sx < s.width;
                const double v = inside ? pixels((c * s.height + sy) * s.width + sx) : -1.0;
                out((c * s.height + y) * s.width + x) = v + noise(rng);
            }
        }
    }
    return out;
}

DiscriminatorTrainResult train_discriminator(BackboneKind backbone, const DiscriminatorDataset& data,
                                             const DiscriminatorTrainConfig& config) {
    const std::size_t n = data.size();
    require(n > 0 && data.tokens.size() == n && static_cast<std::size_t>(data.pixels.rows()) == n,
            "discriminator dataset fields disagree on size");
    require(config.epochs >= 1 && config.batch_size >= 1, "discriminator epochs and batch size must be positive");
    const auto reals = static_cast<std::size_t>(std::count(data.labels.begin(), data.labels.end(), 1));
    const auto fakes = static_cast<std::size_t>(std::count(data.labels.begin(), data.labels.end(), 0));
    if (reals + fakes != n) fail(ErrorCode::kInvalidArgument, "discriminator labels must be 0 (fake) or 1 (real)");
    if (reals == 0 || fakes == 0) {
        fail(ErrorCode::kInvalidArgument, "discriminator training needs both real and fake examples");
    }

    DiscriminatorTrainResult result{Discriminator(backbone, config.loss, config.seed), {}};
    Discriminator& model = result.model;
    require(data.pixels.cols() == model.input_shape().size(), "discriminator dataset has the wrong pixel width");

    Rng rng(derive_seed(config.seed, 1));
    AdamW opt(AdamConfig{config.lr});
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
            const auto b = static_cast<Eigen::Index>(end - start);
            Mat x(b, data.pixels.cols());
            Mat target(b, kScoreDim);
            std::vector<int> tokens(static_cast<std::size_t>(b));
            for (Eigen::Index r = 0; r < b; ++r) {
                const std::size_t idx = order[start + static_cast<std::size_t>(r)];
                Vec row = data.pixels.row(static_cast<Eigen::Index>(idx)).transpose();
                if (config.augment) row = augment_sample(backbone, row, rng);
                x.row(r) = row.transpose();
                target.row(r).setConstant(static_cast<double>(data.labels[idx]));
                tokens[static_cast<std::size_t>(r)] = data.tokens[idx];
            }
            ad::Tape tape;
            ParamBinder binder(tape, model.params(), ParamBinder::Mode::kTrainBase);
            ad::Var loss = ad::mse(model.forward(binder, tape.constant(x), tokens), target);
            const double lv = loss.value()(0, 0);
            if (!std::isfinite(lv)) {
                fail(ErrorCode::kTrainingDiverged, "discriminator training diverged in epoch " + std::to_string(epoch + 1));
            }
            tape.backward(loss);
            std::map<std::string, Mat*> ptrs;
            for (auto& [name, m] : model.params().all()) ptrs.emplace(name, &m);
            opt.step(ptrs, binder.gradients());
            total += lv * static_cast<double>(b);
        }
        result.epoch_losses.push_back(total / static_cast<double>(n));
    }
    model.seed = config.seed;
    nlohmann::json cfg = {{"epochs", config.epochs},     {"batch_size", config.batch_size},
                          {"lr", config.lr},             {"augment", config.augment},
                          {"seed", config.seed},         {"samples", n},
                          {"architecture", model.architecture()}};
    model.config_hash = hash_hex(cfg.dump());
    return result;
}

double discriminator_accuracy(const Discriminator& model, const DiscriminatorDataset& data) {
    require(data.size() > 0, "accuracy of an empty dataset is undefined");
    const Mat s = model.score(data.pixels, data.tokens);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int predicted = s.row(static_cast<Eigen::Index>(i)).mean() > 0.5 ? 1 : 0;
        if (predicted == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

nlohmann::json discriminator_to_json(const Discriminator& model) {
    return {{"format", "mghand.discriminator"},
            {"version", 1},
            {"architecture", model.architecture()},
            {"seed", model.seed},
            {"config_hash", model.config_hash},
            {"checksum", model.checksum()},
            {"params", params_to_json(model.params())}};
}

Discriminator discriminator_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mghand.discriminator") fail(ErrorCode::kIo, "not a discriminator checkpoint");
    const auto& arch = j.at("architecture");
    if (arch.at("score_dim").get<int>() != kScoreDim) fail(ErrorCode::kIo, "discriminator score dimension mismatch");
    Discriminator model(parse_backbone(arch.at("backbone").get<std::string>()),
                        parse_discriminator_loss(arch.at("loss").get<std::string>()), 0);
    ParamStore loaded = params_from_json(j.at("params"));
    for (const auto& [name, m] : model.params().all()) {
        if (!loaded.contains(name) || loaded.at(name).rows() != m.rows() || loaded.at(name).cols() != m.cols()) {
            fail(ErrorCode::kIo, "discriminator checkpoint is missing or misshapes '" + name + "'");
        }
    }
    model.params() = std::move(loaded);
    if (model.checksum() != j.at("checksum").get<std::string>()) fail(ErrorCode::kIo, "discriminator checksum mismatch");
    model.seed = j.at("seed").get<std::uint64_t>();
    model.config_hash = j.at("config_hash").get<std::string>();
    return model;
}

void save_discriminator(const Discriminator& model, const std::string& path) {
    io::write_text_atomic(path, discriminator_to_json(model).dump() + "\n");
}

Discriminator load_discriminator(const std::string& path) { return discriminator_from_json(io::read_json(path)); }

}  // namespace mghand
