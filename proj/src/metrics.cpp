#include "mghand/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "mghand/error.hpp"
#include "mghand/io.hpp"
#include "mghand/vocabulary.hpp"

namespace mghand {

namespace {

void check_features(const FeatureSet& f, const char* what) {
    if (f.features.rows() == 0) fail(ErrorCode::kInvalidArgument, std::string(what) + ": empty feature set");
    if (!f.features.allFinite()) fail(ErrorCode::kInvalidArgument, std::string(what) + ": non-finite features");
}

Mat covariance(const Mat& x, const Vec& mu) {
    const Mat centered = x.rowwise() - mu.transpose();
    return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

constexpr double kEigenClip = -1e-8;

/// Eigenvalues of a symmetric PSD matrix, small negatives clipped to 0.
Vec psd_eigenvalues(const Mat& m, Mat* vectors, const char* what) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
    if (es.info() != Eigen::Success) fail(ErrorCode::kNumericalDegeneracy, std::string(what) + ": eigensolver failed");
    Vec ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < kEigenClip * scale) {
            std::ostringstream msg;
            msg << what << ": matrix is not positive semi-definite (eigenvalue " << ev(i) << ", largest "
                << ev.maxCoeff() << ", size " << m.rows() << ")";
            fail(ErrorCode::kNumericalDegeneracy, msg.str());
        }
        ev(i) = std::max(0.0, ev(i));
    }
    if (vectors != nullptr) *vectors = es.eigenvectors();
    return ev;
}

}  // namespace

FeatureSet extract_features(const Backbone& bb, std::span<const Image> images, const std::string& source) {
    FeatureSet out;
    out.source = source;
    for (std::size_t i = 0; i < images.size(); ++i) {
        Vec f = bb.features(images[i]);
        if (i == 0) out.features.resize(static_cast<Eigen::Index>(images.size()), f.size());
        out.features.row(static_cast<Eigen::Index>(i)) = f.transpose();
    }
    return out;
}

double compute_fid(const FeatureSet& a, const FeatureSet& b) {
    check_features(a, "fid");
    check_features(b, "fid");
    if (a.features.cols() != b.features.cols()) {
        fail(ErrorCode::kInvalidArgument, "fid: feature dimensions differ (" + std::to_string(a.features.cols()) +
                                              " vs " + std::to_string(b.features.cols()) + ")");
    }
    if (a.features.rows() < 2 || b.features.rows() < 2) fail(ErrorCode::kInvalidArgument, "fid: needs at least 2 samples per set");
    const Vec mu_a = a.features.colwise().mean().transpose();
    const Vec mu_b = b.features.colwise().mean().transpose();
    const Mat sa = covariance(a.features, mu_a);
    const Mat sb = covariance(b.features, mu_b);

    // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2)
    Mat vecs;
    const Vec ev = psd_eigenvalues(sa, &vecs, "fid covariance");
    const Mat root_a = vecs * ev.cwiseSqrt().asDiagonal() * vecs.transpose();
    const Vec prod_ev = psd_eigenvalues(root_a * sb * root_a, nullptr, "fid covariance product");
    const double tr_cross = prod_ev.cwiseSqrt().sum();
    const double fid = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_cross;
    return std::max(0.0, fid);
}

KidResult compute_kid(const FeatureSet& a, const FeatureSet& b, int subset_size, int subsets, std::uint64_t seed) {
    check_features(a, "kid");
    check_features(b, "kid");
    if (a.features.cols() != b.features.cols()) fail(ErrorCode::kInvalidArgument, "kid: feature dimensions differ");
    if (subset_size < 2) fail(ErrorCode::kInvalidArgument, "kid: subset_size must be >= 2");
    if (subsets < 1) fail(ErrorCode::kInvalidArgument, "kid: subsets must be >= 1");
    if (subset_size > a.features.rows() || subset_size > b.features.rows()) {
        fail(ErrorCode::kInvalidArgument, "kid: subset_size " + std::to_string(subset_size) + " exceeds set size");
    }
    const double d = static_cast<double>(a.features.cols());
    const auto m = static_cast<Eigen::Index>(subset_size);
    auto kernel = [d](const Mat& x, const Mat& y) {
        return Mat(((x * y.transpose()).array() / d + 1.0).cube());
    };
    auto pick = [m](const Mat& x, Rng& rng) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        Mat out(m, x.cols());
        for (Eigen::Index i = 0; i < m; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
        return out;
    };

    Rng rng(seed);
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(subsets));
    const double md = static_cast<double>(m);
    for (int s = 0; s < subsets; ++s) {
        const Mat x = pick(a.features, rng);
        const Mat y = pick(b.features, rng);
        const Mat kxx = kernel(x, x);
        const Mat kyy = kernel(y, y);
        const Mat kxy = kernel(x, y);
        const double sxx = (kxx.sum() - kxx.trace()) / (md * (md - 1.0));
        const double syy = (kyy.sum() - kyy.trace()) / (md * (md - 1.0));
        values.push_back(sxx + syy - 2.0 * kxy.sum() / (md * md));
    }
    KidResult r;
    r.subset_size = subset_size;
    r.subsets = subsets;
    r.seed = seed;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(subsets);
    if (subsets > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        r.std_error = std::sqrt(ss / static_cast<double>(subsets - 1)) / std::sqrt(static_cast<double>(subsets));
    }
    return r;
}

std::optional<double> hand_confidence(std::span<const Image> images, const RegionDetector& detector,
                                      bool include_undetected) {
    double total = 0.0;
    std::size_t counted = 0;
    for (const Image& im : images) {
        const Detection det = detector.detect(im);
        if (det.region.area() > 0) {
            total += det.score;
            ++counted;
        } else if (include_undetected) {
            ++counted;
        }
    }
    if (counted == 0) return std::nullopt;
    return total / static_cast<double>(counted);
}

double hand_probability(std::span<const Image> images, const RegionDetector& detector, double tau_detect) {
    if (images.empty()) fail(ErrorCode::kInvalidArgument, "hand_probability: no images");
    std::size_t hits = 0;
    for (const Image& im : images) {
        const auto dets = detector.detect_all(im);
        if (std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
                return d.region.area() > 0 && d.score >= tau_detect;
            })) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(images.size());
}

ToyJointEmbedder ToyJointEmbedder::fit(const Backbone& bb, int samples_per_token, std::uint64_t seed) {
    require(samples_per_token >= 2, "embedder needs at least 2 samples per token");
    const int v = vocab_size();
    std::vector<Vec> feats;
    Rng rng(seed);
    for (int tok = 0; tok < v; ++tok) {
        for (int i = 0; i < samples_per_token; ++i) feats.push_back(bb.features(bb.decode(bb.sample_data(tok, rng))));
    }
    const auto d = feats.front().size();
    Mat all(static_cast<Eigen::Index>(feats.size()), d);
    for (std::size_t i = 0; i < feats.size(); ++i) all.row(static_cast<Eigen::Index>(i)) = feats[i].transpose();

    ToyJointEmbedder e;
    e.backbone_ = &bb;
    e.mean_ = all.colwise().mean().transpose();
    e.scale_ = ((all.rowwise() - e.mean_.transpose()).colwise().squaredNorm() / static_cast<double>(all.rows()))
                   .transpose()
                   .cwiseSqrt();
    for (Eigen::Index i = 0; i < e.scale_.size(); ++i) {
        if (e.scale_(i) < 1e-12) e.scale_(i) = 1.0;
    }
    e.prototypes_ = Mat::Zero(v, d + 1);
    for (int tok = 0; tok < v; ++tok) {
        for (int i = 0; i < samples_per_token; ++i) {
            const Vec f = all.row(tok * samples_per_token + i).transpose();
            Vec emb(d + 1);
            emb(0) = 1.0;
            emb.tail(d) = (f - e.mean_).cwiseQuotient(e.scale_);
            e.prototypes_.row(tok) += emb.transpose();
        }
        e.prototypes_.row(tok) /= static_cast<double>(samples_per_token);
    }
    return e;
}

Vec ToyJointEmbedder::embed_image(const Image& image) const {
    require(backbone_ != nullptr, "embedder is not fitted");
    const Vec f = backbone_->features(image);
    Vec emb(f.size() + 1);
    emb(0) = 1.0;
    emb.tail(f.size()) = (f - mean_).cwiseQuotient(scale_);
    return emb;
}

Vec ToyJointEmbedder::embed_token(int tok) const {
    token(tok);
    return prototypes_.row(tok).transpose();
}

double text_image_similarity(std::span<const Image> images, std::span<const int> prompts,
                             const ToyJointEmbedder& embedder) {
    if (images.size() != prompts.size()) {
        fail(ErrorCode::kInvalidArgument, "similarity: " + std::to_string(images.size()) + " images but " +
                                              std::to_string(prompts.size()) + " prompts");
    }
    require(!images.empty(), "similarity: no pairs");
    double total = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Vec a = embedder.embed_image(images[i]);
        const Vec b = embedder.embed_token(prompts[i]);
        total += a.dot(b) / (a.norm() * b.norm());
    }
    return 100.0 * total / static_cast<double>(images.size());
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

std::string cell(const std::optional<double>& v) {
    if (!v) return "n/a";
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
}

}  // namespace

nlohmann::json report_to_json(const MetricsReport& r) {
    return {{"fid", opt_json(r.fid)},
            {"kid", opt_json(r.kid)},
            {"kid_std_error", opt_json(r.kid_std_error)},
            {"hand_confidence", opt_json(r.hand_confidence)},
            {"hand_probability", opt_json(r.hand_probability)},
            {"text_image_similarity", opt_json(r.text_image_similarity)},
            {"metadata", r.metadata}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.fid = opt_from(j, "fid");
    r.kid = opt_from(j, "kid");
    r.kid_std_error = opt_from(j, "kid_std_error");
    r.hand_confidence = opt_from(j, "hand_confidence");
    r.hand_probability = opt_from(j, "hand_probability");
    r.text_image_similarity = opt_from(j, "text_image_similarity");
    r.metadata = j.value("metadata", nlohmann::json::object());
    return r;
}

void write_report(const MetricsReport& report, const std::string& path) { io::write_json(path, report_to_json(report)); }

MetricsReport read_report(const std::string& path) { return report_from_json(io::read_json(path)); }

std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& fa = rows[a].second.fid;
        const auto& fb = rows[b].second.fid;
        if (fa && fb) return *fa < *fb;
        return fa.has_value() && !fb.has_value();
    });
    std::ostringstream out;
    out << "| Model | FID | KID | Hand Conf. | Hand Prob. | Similarity |\n";
    out << "|---|---|---|---|---|---|\n";
    for (std::size_t i : order) {
        const auto& [name, r] = rows[i];
        out << "| " << name << " | " << cell(r.fid) << " | " << cell(r.kid) << " | " << cell(r.hand_confidence) << " | "
            << cell(r.hand_probability) << " | " << cell(r.text_image_similarity) << " |\n";
    }
    return out.str();
}

}  // namespace mghand
