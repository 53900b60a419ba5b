#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace mghand {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Channel-major tensor geometry (C x H x W). Point samples use (2, 1, 1).
struct Shape {
    int channels = 1;
    int height = 1;
    int width = 1;

    int size() const { return channels * height * width; }
    int spatial() const { return height * width; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// A pixel-space or latent-space tensor for a single sample.
struct Image {
    Shape shape;
    Vec data;

    Image() = default;
    Image(Shape s, Vec d);
    static Image zeros(Shape s);

    double at(int c, int y, int x) const { return data[(c * shape.height + y) * shape.width + x]; }
    double& at(int c, int y, int x) { return data[(c * shape.height + y) * shape.width + x]; }
};

Vec standard_normal(Rng& rng, Eigen::Index n);
double standard_normal(Rng& rng);

/// Derives an independent stream seed from a base seed and an index (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// FNV-1a 64-bit; used for config hashes and parameter checksums.
class Fnv1a {
public:
    void update(const void* data, std::size_t n);
    void update(std::string_view s) { update(s.data(), s.size()); }
    void update(const Mat& m);
    std::uint64_t digest() const { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_hex(std::string_view text);

bool all_finite(const Mat& m);

}  // namespace mghand
