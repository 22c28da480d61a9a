#include "eviseg/uaf.hpp"

#include <cmath>
#include <stdexcept>

namespace eviseg {

const char* to_string(UncertaintySource s) {
    switch (s) {
        case UncertaintySource::kGtRegion: return "gt-region";
        case UncertaintySource::kPredictedRegion: return "predicted-region";
        case UncertaintySource::kWholeImage: return "whole-image";
    }
    return "unknown";
}

MeanUncertainty mean_uncertainty(const std::vector<double>& u, const BinaryMask& region) {
    if (u.size() != region.numel() || u.empty()) {
        throw std::invalid_argument("mean_uncertainty: size mismatch or empty input");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (region.fg[i]) {
            sum += u[i];
            ++count;
        }
    }
    if (count == 0) {
        double whole = 0.0;
        for (double x : u) whole += x;
        return {whole / static_cast<double>(u.size()), true};
    }
    return {sum / static_cast<double>(count), false};
}

double uce(double accuracy, double mean_u) {
    return std::abs(accuracy - std::exp(-mean_u));
}

double fit_threshold(const std::vector<ValidationPoint>& validation) {
    if (validation.empty()) {
        throw std::invalid_argument("fit_threshold: empty validation set");
    }
    double best_uce = -1.0, best_u = 0.0;
    for (const auto& point : validation) {
        const double e = uce(point.accuracy, point.mean_uncertainty);
        if (e > best_uce || (e == best_uce && point.mean_uncertainty > best_u)) {
            best_uce = e;
            best_u = point.mean_uncertainty;
        }
    }
    return best_u;
}

int filter_verdict(double test_mean_u, double u_star) {
    return test_mean_u < u_star ? 1 : 0;
}

}  // namespace eviseg
