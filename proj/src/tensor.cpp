#include "mghand/tensor.hpp"

#include <cstdio>

#include "mghand/error.hpp"

namespace mghand {

std::string Shape::str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

Image::Image(Shape s, Vec d) : shape(s), data(std::move(d)) {
    require(data.size() == shape.size(), "image data size " + std::to_string(data.size()) +
                                             " does not match shape " + shape.str());
}

Image Image::zeros(Shape s) { return Image(s, Vec::Zero(s.size())); }

Vec standard_normal(Rng& rng, Eigen::Index n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v[i] = dist(rng);
    }
    return v;
}

double standard_normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void Fnv1a::update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        state_ ^= p[i];
        state_ *= 0x100000001b3ULL;
    }
}

void Fnv1a::update(const Mat& m) {
    const std::int64_t dims[2] = {m.rows(), m.cols()};
    update(dims, sizeof(dims));
    update(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

std::string Fnv1a::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

std::string hash_hex(std::string_view text) {
    Fnv1a h;
    h.update(text);
    return h.hex();
}

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace mghand
