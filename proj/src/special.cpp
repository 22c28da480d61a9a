#include "eviseg/special.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace eviseg {

namespace {
constexpr double kShift = 8.0;
constexpr double kHalfLogTwoPi = 0.91893853320467274178;  // ln(2*pi)/2

void check_positive(double x, const char* fn) {
    if (!(x > 0.0)) {
        throw std::domain_error(std::string(fn) + ": argument must be positive");
    }
}
}  // namespace

double digamma(double x) {
    check_positive(x, "digamma");
    double acc = 0.0;
    while (x < kShift) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    // psi(x) ~ ln x - 1/(2x) - sum B_{2n} / (2n x^{2n})
    const double w = 1.0 / (x * x);
    double series = w * (1.0 / 12.0
                  - w * (1.0 / 120.0
                  - w * (1.0 / 252.0
                  - w * (1.0 / 240.0
                  - w * (1.0 / 132.0
                  - w * (691.0 / 32760.0
                  - w * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 / x - series;
}

double trigamma(double x) {
    check_positive(x, "trigamma");
    double acc = 0.0;
    while (x < kShift) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    // psi'(x) ~ 1/x + 1/(2x^2) + sum B_{2n} / x^{2n+1}
    const double w = 1.0 / (x * x);
    double series = (1.0
                  + w * (1.0 / 6.0
                  - w * (1.0 / 30.0
                  - w * (1.0 / 42.0
                  - w * (1.0 / 30.0
                  - w * (5.0 / 66.0
                  - w * (691.0 / 2730.0
                  - w * (7.0 / 6.0)))))))) / x;
    return acc + 0.5 * w + series;
}

double lgamma(double x) {
    check_positive(x, "lgamma");
    double acc = 0.0;
    while (x < kShift) {
        acc -= std::log(x);
        x += 1.0;
    }
    // Stirling: (x-1/2) ln x - x + ln(2 pi)/2 + sum B_{2n}/(2n(2n-1) x^{2n-1})
    const double w = 1.0 / (x * x);
    double series = (1.0 / 12.0
                  - w * (1.0 / 360.0
                  - w * (1.0 / 1260.0
                  - w * (1.0 / 1680.0
                  - w * (1.0 / 1188.0
                  - w * (691.0 / 360360.0
                  - w * (1.0 / 156.0))))))) / x;
    return acc + (x - 0.5) * std::log(x) - x + kHalfLogTwoPi + series;
}

}  // namespace eviseg
