#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mghand/tensor.hpp"

namespace mghand {

/// H x W grid of 0/1 cells, row-major.
struct BinaryGrid {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cells;

    BinaryGrid() = default;
    BinaryGrid(int h, int w, std::uint8_t fill = 0);

    std::uint8_t at(int y, int x) const { return cells[static_cast<std::size_t>(y * width + x)]; }
    std::uint8_t& at(int y, int x) { return cells[static_cast<std::size_t>(y * width + x)]; }
    std::size_t area() const;
    bool operator==(const BinaryGrid&) const = default;
    /// Every cell of this grid is >= the corresponding cell of other.
    bool covers(const BinaryGrid& other) const;
};

/// Monotone region mask accumulated over a sampling trajectory.
struct CumulativeMask {
    BinaryGrid grid;
    std::vector<std::size_t> history;  // area after each update

    std::size_t area() const { return grid.area(); }
};

/// Detector output: region D and scalar confidence S in [0, 1].
struct Detection {
    BinaryGrid region;
    double score = 0.0;
};

/// Adapter seam for region detectors operating on decoded pixel images.
class RegionDetector {
public:
    virtual ~RegionDetector() = default;
    virtual std::string name() const = 0;
    /// Highest-priority region (all-zero region and score 0 when nothing is found).
    virtual Detection detect(const Image& image) const = 0;
    /// One detection per region; defaults to the single top detection.
    virtual std::vector<Detection> detect_all(const Image& image) const;
};

CumulativeMask init_mask(int height, int width);

/// M' = max(M, 1[S >= tau] * D). Returns a new mask; the input is untouched.
CumulativeMask update_mask(const CumulativeMask& mask, const Detection& det, double tau);
/// Applies detections in order.
CumulativeMask update_mask(const CumulativeMask& mask, std::span<const Detection> dets, double tau);

/// Max-pool resampling: a latent cell is set iff any pixel in its block is set.
BinaryGrid downsample_mask(const BinaryGrid& mask, int latent_height, int latent_width);

/// 4-neighbourhood dilation by the given number of steps.
BinaryGrid dilate(const BinaryGrid& mask, int radius);

/// Pixel values in [-1, 1] are mapped to [0, 1] before thresholding.
inline constexpr double kDefaultIntensityThreshold = 0.5;

/// Largest 4-connected region whose normalised intensity exceeds the threshold.
/// S is the region's mean normalised intensity.
Detection synthetic_detect(const Image& image, double intensity_threshold = kDefaultIntensityThreshold);

/// All 4-connected bright regions of at least min_pixels, largest first.
std::vector<Detection> synthetic_detect_all(const Image& image, double intensity_threshold, int min_pixels);

class SyntheticBlobDetector : public RegionDetector {
public:
    explicit SyntheticBlobDetector(double intensity_threshold = kDefaultIntensityThreshold, int min_region_pixels = 4)
        : threshold_(intensity_threshold), min_pixels_(min_region_pixels) {}

    std::string name() const override { return "synthetic-blob"; }
    Detection detect(const Image& image) const override { return synthetic_detect(image, threshold_); }
    std::vector<Detection> detect_all(const Image& image) const override {
        return synthetic_detect_all(image, threshold_, min_pixels_);
    }

private:
    double threshold_;
    int min_pixels_;
};

/// Detector for 2-D point samples: fires inside a radius around the target mode
/// with score exp(-d^2 / (2 sigma^2)). The region is the 1x1 grid.
class PointModeDetector : public RegionDetector {
public:
    PointModeDetector(Vec center, double sigma, double radius) : center_(std::move(center)), sigma_(sigma), radius_(radius) {}

    std::string name() const override { return "point-mode"; }
    Detection detect(const Image& image) const override;

private:
    Vec center_;
    double sigma_;
    double radius_;
};

}  // namespace mghand
