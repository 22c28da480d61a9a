#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace eviseg {

struct BinaryMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> fg;  // row-major, nonzero = foreground

    std::size_t numel() const { return height * width; }
    bool at(std::size_t r, std::size_t c) const { return fg[r * width + c] != 0; }
};

// 2 |R n G| / (|R| + |G|); 1.0 when both masks are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

// Boundary pixels: foreground with at least one background 4-neighbour;
// the image border counts as background.
std::vector<std::pair<std::size_t, std::size_t>> boundary_points(const BinaryMask& mask);

// Average symmetric surface distance over boundary point sets, Euclidean
// pixel distances. Throws std::invalid_argument when either mask is empty.
double assd(const BinaryMask& pred, const BinaryMask& gt);

// Expected calibration error with M equal right-closed confidence bins.
// confidence[i] in [0,1], correct[i] in {0,1}; empty bins contribute 0.
double ece(const std::vector<double>& confidence, const std::vector<std::uint8_t>& correct,
           int num_bins);

// Uncertainty-error overlap: for each threshold, Dice between {u >= tau}
// and the error mask; returns the best overlap and its threshold.
std::pair<double, double> ueo(const BinaryMask& error_mask, const std::vector<double>& u,
                              const std::vector<double>& thresholds);

std::vector<double> default_ueo_thresholds();  // 0.05, 0.10, ..., 0.95

// Exact squared Euclidean distance transform to the nearest foreground
// pixel (integer arithmetic throughout). Background-only masks yield a
// large finite sentinel.
std::vector<std::int64_t> squared_distance_transform(const BinaryMask& mask);

// Per-image evaluation row; assd is absent when a mask was empty.
struct ImageEval {
    std::uint64_t id = 0;
    double dice = 0.0;
    std::optional<double> assd;
    double ece = 0.0;
    double ueo = 0.0;
    double ueo_tau = 0.0;
    double accuracy = 0.0;
    double mean_uncertainty = 0.0;
};

struct EvalReport {
    std::vector<ImageEval> images;
    double mean_dice = 0.0;
    std::optional<double> mean_assd;  // over images where assd exists
    double mean_ece = 0.0;
    double mean_ueo = 0.0;
    double mean_uncertainty = 0.0;

    void finalize();  // fills the aggregate fields from `images`
};

}  // namespace eviseg
