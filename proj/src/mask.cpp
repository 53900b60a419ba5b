#include "mghand/mask.hpp"

#include <algorithm>
#include <cmath>

#include "mghand/error.hpp"

namespace mghand {

BinaryGrid::BinaryGrid(int h, int w, std::uint8_t fill) : height(h), width(w) {
    require(h >= 1 && w >= 1, "mask dimensions must be positive, got " + std::to_string(h) + "x" + std::to_string(w));
    cells.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill ? 1 : 0);
}

std::size_t BinaryGrid::area() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1)); }

bool BinaryGrid::covers(const BinaryGrid& other) const {
    if (height != other.height || width != other.width) return false;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] < other.cells[i]) return false;
    }
    return true;
}

std::vector<Detection> RegionDetector::detect_all(const Image& image) const { return {detect(image)}; }

CumulativeMask init_mask(int height, int width) {
    if (height < 1 || width < 1) {
        fail(ErrorCode::kInvalidArgument, "init_mask: dimensions must be positive");
    }
    CumulativeMask m;
    m.grid = BinaryGrid(height, width);
    return m;
}

namespace {

void accumulate(BinaryGrid& grid, const Detection& det, double tau) {
    if (det.region.height != grid.height || det.region.width != grid.width) {
        fail(ErrorCode::kInvalidArgument, "update_mask: detection is " + std::to_string(det.region.height) + "x" +
                                              std::to_string(det.region.width) + ", mask is " +
                                              std::to_string(grid.height) + "x" + std::to_string(grid.width));
    }
    if (!(det.score >= 0.0 && det.score <= 1.0)) {
        fail(ErrorCode::kInvalidArgument, "update_mask: score " + std::to_string(det.score) + " outside [0, 1]");
    }
    require(tau >= 0.0 && tau <= 1.0, "update_mask: tau must lie in [0, 1]");
    for (const auto c : det.region.cells) require(c <= 1, "update_mask: region values must be 0 or 1");
    if (det.score < tau) return;
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        grid.cells[i] = std::max(grid.cells[i], det.region.cells[i]);
    }
}

}  // namespace

CumulativeMask update_mask(const CumulativeMask& mask, const Detection& det, double tau) {
    CumulativeMask out = mask;
    accumulate(out.grid, det, tau);
    out.history.push_back(out.grid.area());
    return out;
}

CumulativeMask update_mask(const CumulativeMask& mask, std::span<const Detection> dets, double tau) {
    CumulativeMask out = mask;
    for (const auto& d : dets) accumulate(out.grid, d, tau);
    out.history.push_back(out.grid.area());
    return out;
}

BinaryGrid downsample_mask(const BinaryGrid& mask, int latent_height, int latent_width) {
    if (latent_height < 1 || latent_width < 1 || latent_height > mask.height || latent_width > mask.width) {
        fail(ErrorCode::kInvalidArgument, "downsample_mask: latent " + std::to_string(latent_height) + "x" +
                                              std::to_string(latent_width) + " incompatible with mask " +
                                              std::to_string(mask.height) + "x" + std::to_string(mask.width));
    }
    BinaryGrid out(latent_height, latent_width);
    for (int ly = 0; ly < latent_height; ++ly) {
        const int y0 = ly * mask.height / latent_height;
        const int y1 = (ly + 1) * mask.height / latent_height;
        for (int lx = 0; lx < latent_width; ++lx) {
            const int x0 = lx * mask.width / latent_width;
            const int x1 = (lx + 1) * mask.width / latent_width;
            std::uint8_t v = 0;
            for (int y = y0; y < y1 && !v; ++y) {
                for (int x = x0; x < x1 && !v; ++x) v = mask.at(y, x);
            }
            out.at(ly, lx) = v;
        }
    }
    return out;
}

BinaryGrid dilate(const BinaryGrid& mask, int radius) {
    BinaryGrid cur = mask;
    for (int r = 0; r < radius; ++r) {
        BinaryGrid next = cur;
        for (int y = 0; y < cur.height; ++y) {
            for (int x = 0; x < cur.width; ++x) {
                if (!cur.at(y, x)) continue;
                if (y > 0) next.at(y - 1, x) = 1;
                if (y + 1 < cur.height) next.at(y + 1, x) = 1;
                if (x > 0) next.at(y, x - 1) = 1;
                if (x + 1 < cur.width) next.at(y, x + 1) = 1;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

namespace {

// Channel-averaged intensity mapped from [-1, 1] to [0, 1].
std::vector<double> normalised_intensity(const Image& image) {
    const int h = image.shape.height, w = image.shape.width;
    std::vector<double> v(static_cast<std::size_t>(h * w), 0.0);
    for (int c = 0; c < image.shape.channels; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) v[static_cast<std::size_t>(y * w + x)] += image.at(c, y, x);
        }
    }
    for (auto& p : v) p = std::clamp((p / image.shape.channels + 1.0) / 2.0, 0.0, 1.0);
    return v;
}

}  // namespace

std::vector<Detection> synthetic_detect_all(const Image& image, double intensity_threshold, int min_pixels) {
    require(image.data.allFinite(), "synthetic_detect: image contains non-finite values");
    const int h = image.shape.height, w = image.shape.width;
    const auto inten = normalised_intensity(image);
    std::vector<int> label(inten.size(), -1);
    std::vector<std::vector<int>> regions;
    std::vector<int> stack;
    for (int start = 0; start < h * w; ++start) {
        if (label[start] != -1 || !(inten[start] > intensity_threshold)) continue;
        const int id = static_cast<int>(regions.size());
        regions.emplace_back();
        stack.push_back(start);
        label[start] = id;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            regions[id].push_back(p);
            const int y = p / w, x = p % w;
            const int nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& nb : nbrs) {
                if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
                const int q = nb[0] * w + nb[1];
                if (label[q] == -1 && inten[q] > intensity_threshold) {
                    label[q] = id;
                    stack.push_back(q);
                }
            }
        }
    }
    // Largest first; ties keep raster order of discovery.
    std::vector<int> order(regions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return regions[a].size() > regions[b].size(); });
    std::vector<Detection> out;
    for (int id : order) {
        if (static_cast<int>(regions[id].size()) < min_pixels) continue;
        Detection d;
        d.region = BinaryGrid(h, w);
        double sum = 0.0;
        for (int p : regions[id]) {
            d.region.cells[static_cast<std::size_t>(p)] = 1;
            sum += inten[p];
        }
        d.score = sum / static_cast<double>(regions[id].size());
        out.push_back(std::move(d));
    }
    return out;
}

Detection synthetic_detect(const Image& image, double intensity_threshold) {
    auto all = synthetic_detect_all(image, intensity_threshold, 1);
    if (all.empty()) {
        Detection none;
        none.region = BinaryGrid(image.shape.height, image.shape.width);
        return none;
    }
    return std::move(all.front());
}

Detection PointModeDetector::detect(const Image& image) const {
    require(image.data.size() == center_.size(), "point detector: sample dimension mismatch");
    Detection d;
    d.region = BinaryGrid(image.shape.height, image.shape.width);
    const double dist2 = (image.data - center_).squaredNorm();
    if (dist2 <= radius_ * radius_) {
        std::fill(d.region.cells.begin(), d.region.cells.end(), 1);
        d.score = std::exp(-dist2 / (2.0 * sigma_ * sigma_));
    }
    return d;
}

}  // namespace mghand
