#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "eviseg/rng.hpp"
#include "eviseg/uaf.hpp"

using namespace eviseg;

namespace {
BinaryMask region_of(std::size_t h, std::size_t w, std::initializer_list<int> cells) {
    BinaryMask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
    std::size_t i = 0;
    for (int v : cells) m.fg[i++] = v ? 1 : 0;
    return m;
}
}  // namespace

TEST_CASE("mean uncertainty over regions") {
    std::vector<double> u(9, 0.3);
    BinaryMask some = region_of(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(mean_uncertainty(u, some).value == doctest::Approx(0.3));
    CHECK_FALSE(mean_uncertainty(u, some).fell_back_to_whole_image);

    std::vector<double> split = {0.1, 0.9, 0.9, 0.9, 0.1, 0.9, 0.9, 0.9, 0.1};
    CHECK(mean_uncertainty(split, some).value == doctest::Approx(0.1));

    BinaryMask empty = region_of(3, 3, {0, 0, 0, 0, 0, 0, 0, 0, 0});
    auto fallback = mean_uncertainty(split, empty);
    CHECK(fallback.fell_back_to_whole_image);
    CHECK(fallback.value == doctest::Approx((0.1 * 3 + 0.9 * 6) / 9.0));
}

TEST_CASE("mean uncertainty matches a brute-force oracle on random 8x8 data") {
    Rng rng(401);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> u(64);
        for (auto& x : u) x = rng.next_uniform();
        BinaryMask region{8, 8, std::vector<std::uint8_t>(64, 0)};
        for (auto& v : region.fg) v = rng.next_uniform() < 0.4 ? 1 : 0;
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < 64; ++i)
            if (region.fg[i]) {
                sum += u[i];
                ++count;
            }
        if (count == 0) continue;
        CHECK(mean_uncertainty(u, region).value == sum / double(count));
    }
}

TEST_CASE("uce worked values") {
    CHECK(uce(1.0, 0.0) == 0.0);
    CHECK(uce(0.8, 0.5) == doctest::Approx(0.19346934028736658).epsilon(1e-12));
    Rng rng(409);
    for (int i = 0; i < 50; ++i) {
        const double mu = rng.next_uniform(0.0, 3.0);
        CHECK(uce(std::exp(-mu), mu) == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("fit_threshold picks the maximal-UCE image") {
    SUBCASE("single image") {
        CHECK(fit_threshold({{0.9, 0.42}}) == 0.42);
    }
    SUBCASE("documented three-image case") {
        // UCE values (0.05, 0.30, 0.10) paired with mean-u (0.1, 0.4, 0.2):
        // craft accuracies giving exactly those UCEs
        std::vector<ValidationPoint> v = {
            {std::exp(-0.1) + 0.05, 0.1},
            {std::exp(-0.4) + 0.30, 0.4},
            {std::exp(-0.2) + 0.10, 0.2},
        };
        CHECK(fit_threshold(v) == 0.4);
    }
    SUBCASE("ties go to the larger mean uncertainty") {
        std::vector<ValidationPoint> v = {
            {std::exp(-0.2) + 0.1, 0.2},
            {std::exp(-0.5) + 0.1, 0.5},
            {std::exp(-0.3) + 0.1, 0.3},
        };
        CHECK(fit_threshold(v) == 0.5);
    }
    SUBCASE("output is an element of the validation multiset") {
        Rng rng(419);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<ValidationPoint> v;
            for (int i = 0; i < 10; ++i) {
                v.push_back({rng.next_uniform(), rng.next_uniform(0.0, 1.0)});
            }
            const double u_star = fit_threshold(v);
            CHECK(std::any_of(v.begin(), v.end(), [&](const ValidationPoint& p) {
                return p.mean_uncertainty == u_star;
            }));
        }
    }
    CHECK_THROWS_AS(fit_threshold({}), std::invalid_argument);
}

TEST_CASE("filter verdicts") {
    CHECK(filter_verdict(0.0, 0.3) == 1);
    CHECK(filter_verdict(0.3, 0.3) == 0);  // boundary is unreliable
    CHECK(filter_verdict(0.4, 0.3) == 0);

    // monotone: lowering mean-u never flips reliable -> unreliable
    Rng rng(421);
    for (int i = 0; i < 100; ++i) {
        const double u_star = rng.next_uniform(0.05, 0.95);
        const double hi = rng.next_uniform(0.0, 1.0);
        const double lo = hi * rng.next_uniform();
        if (filter_verdict(hi, u_star) == 1) CHECK(filter_verdict(lo, u_star) == 1);
    }
}

TEST_CASE("uncertainty source names") {
    CHECK(std::string(to_string(UncertaintySource::kGtRegion)) == "gt-region");
    CHECK(std::string(to_string(UncertaintySource::kPredictedRegion)) == "predicted-region");
    CHECK(std::string(to_string(UncertaintySource::kWholeImage)) == "whole-image");
}
