#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eviseg/metrics.hpp"

namespace eviseg {

enum class UncertaintySource { kGtRegion, kPredictedRegion, kWholeImage };

const char* to_string(UncertaintySource s);

struct FilterDecision {
    std::uint64_t image_id = 0;
    double mean_uncertainty = 0.0;
    double uce = -1.0;  // validation only; negative = not computed
    double threshold = 0.0;
    int verdict = 0;  // 1 reliable, 0 unreliable
    UncertaintySource uncertainty_source = UncertaintySource::kWholeImage;
};

struct MeanUncertainty {
    double value = 0.0;
    bool fell_back_to_whole_image = false;
};

// Mean of u over the region; an empty region falls back to the whole image.
MeanUncertainty mean_uncertainty(const std::vector<double>& u, const BinaryMask& region);

// Uncertainty-based calibration error: |acc - exp(-mean_u)|.
double uce(double accuracy, double mean_u);

struct ValidationPoint {
    double accuracy = 0.0;
    double mean_uncertainty = 0.0;
};

// Adaptive threshold u*: the mean uncertainty of the validation image with
// maximal UCE; ties resolve toward the larger mean uncertainty.
double fit_threshold(const std::vector<ValidationPoint>& validation);

// 1 (reliable) iff mean_u < u_star; the boundary itself is unreliable.
int filter_verdict(double test_mean_u, double u_star);

}  // namespace eviseg
