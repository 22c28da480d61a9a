#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "eviseg/metrics.hpp"
#include "eviseg/rng.hpp"

using namespace eviseg;

namespace {

BinaryMask make_mask(std::size_t h, std::size_t w, std::initializer_list<int> cells) {
    BinaryMask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
    std::size_t i = 0;
    for (int v : cells) m.fg[i++] = v ? 1 : 0;
    return m;
}

BinaryMask random_mask(std::size_t h, std::size_t w, Rng& rng, double p) {
    BinaryMask m{h, w, std::vector<std::uint8_t>(h * w, 0)};
    for (auto& v : m.fg) v = rng.next_uniform() < p ? 1 : 0;
    return m;
}

// all-pairs nearest-neighbour oracle over boundary point sets
double assd_oracle(const BinaryMask& a, const BinaryMask& b) {
    auto pa = boundary_points(a);
    auto pb = boundary_points(b);
    REQUIRE(!pa.empty());
    REQUIRE(!pb.empty());
    auto nearest_sq = [](std::pair<std::size_t, std::size_t> p,
                         const std::vector<std::pair<std::size_t, std::size_t>>& set) {
        std::int64_t best = -1;
        for (auto [r, c] : set) {
            const std::int64_t dr = std::int64_t(p.first) - std::int64_t(r);
            const std::int64_t dc = std::int64_t(p.second) - std::int64_t(c);
            const std::int64_t d = dr * dr + dc * dc;
            if (best < 0 || d < best) best = d;
        }
        return best;
    };
    double total = 0.0;
    for (auto p : pa) total += std::sqrt(double(nearest_sq(p, pb)));
    for (auto p : pb) total += std::sqrt(double(nearest_sq(p, pa)));
    return total / double(pa.size() + pb.size());
}

double ece_oracle(const std::vector<double>& conf, const std::vector<std::uint8_t>& ok,
                  int bins) {
    const double n = double(conf.size());
    double total = 0.0;
    for (int b = 0; b < bins; ++b) {
        const double lo = double(b) / bins, hi = double(b + 1) / bins;
        double conf_sum = 0.0, acc_sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < conf.size(); ++i) {
            const bool in_bin = b == 0 ? conf[i] <= hi : (conf[i] > lo && conf[i] <= hi);
            if (!in_bin) continue;
            conf_sum += conf[i];
            acc_sum += ok[i] ? 1.0 : 0.0;
            ++count;
        }
        if (count) {
            total += (double(count) / n) * std::abs(acc_sum / count - conf_sum / count);
        }
    }
    return total;
}

}  // namespace

TEST_CASE("dice basics") {
    BinaryMask a = make_mask(2, 2, {1, 1, 0, 0});
    CHECK(dice(a, a) == 1.0);
    BinaryMask b = make_mask(2, 2, {0, 0, 1, 1});
    CHECK(dice(a, b) == 0.0);
    BinaryMask empty = make_mask(2, 2, {0, 0, 0, 0});
    CHECK(dice(empty, empty) == 1.0);
    CHECK_THROWS_AS(dice(a, make_mask(2, 3, {0, 0, 0, 0, 0, 0})), std::invalid_argument);
}

TEST_CASE("dice on shifted 2x2 blocks") {
    // R = block at (1,1), G = same block shifted right by one, overlap 2 px
    BinaryMask r{4, 4, std::vector<std::uint8_t>(16, 0)};
    r.fg[1 * 4 + 1] = r.fg[1 * 4 + 2] = r.fg[2 * 4 + 1] = r.fg[2 * 4 + 2] = 1;
    BinaryMask g{4, 4, std::vector<std::uint8_t>(16, 0)};
    g.fg[1 * 4 + 2] = g.fg[1 * 4 + 3] = g.fg[2 * 4 + 2] = g.fg[2 * 4 + 3] = 1;
    CHECK(dice(r, g) == doctest::Approx(0.5));
}

TEST_CASE("dice symmetry and permutation invariance") {
    Rng rng(307);
    for (int trial = 0; trial < 50; ++trial) {
        BinaryMask a = random_mask(5, 7, rng, 0.4);
        BinaryMask b = random_mask(5, 7, rng, 0.4);
        CHECK(dice(a, b) == dice(b, a));
        // apply one fixed permutation (reverse) to both masks
        BinaryMask ar = a, br = b;
        std::reverse(ar.fg.begin(), ar.fg.end());
        std::reverse(br.fg.begin(), br.fg.end());
        CHECK(dice(ar, br) == dice(a, b));
    }
}

TEST_CASE("assd basics") {
    BinaryMask a = make_mask(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    CHECK(assd(a, a) == 0.0);

    // two single pixels three apart
    BinaryMask p1 = make_mask(1, 5, {1, 0, 0, 0, 0});
    BinaryMask p2 = make_mask(1, 5, {0, 0, 0, 1, 0});
    CHECK(assd(p1, p2) == doctest::Approx(3.0));

    BinaryMask empty = make_mask(3, 3, {0, 0, 0, 0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(assd(a, empty), std::invalid_argument);
    CHECK_THROWS_AS(assd(empty, a), std::invalid_argument);
}

TEST_CASE("assd 3x3 square vs shifted square matches the oracle") {
    BinaryMask a{5, 6, std::vector<std::uint8_t>(30, 0)};
    BinaryMask b{5, 6, std::vector<std::uint8_t>(30, 0)};
    for (std::size_t r = 1; r <= 3; ++r)
        for (std::size_t c = 1; c <= 3; ++c) {
            a.fg[r * 6 + c] = 1;
            b.fg[r * 6 + c + 1] = 1;
        }
    CHECK(assd(a, b) == assd_oracle(a, b));
}

TEST_CASE("assd matches brute force exactly on random masks up to 12x12") {
    Rng rng(311);
    int done = 0;
    while (done < 120) {
        const std::size_t h = 3 + rng.next_below(10), w = 3 + rng.next_below(10);
        BinaryMask a = random_mask(h, w, rng, 0.35);
        BinaryMask b = random_mask(h, w, rng, 0.35);
        if (boundary_points(a).empty() || boundary_points(b).empty()) continue;
        CHECK(assd(a, b) == assd_oracle(a, b));  // bitwise: both routes are exact
        // symmetric up to summation order
        CHECK(assd(a, b) == doctest::Approx(assd(b, a)).epsilon(1e-14));
        ++done;
    }
}

TEST_CASE("assd translation invariance") {
    Rng rng(313);
    for (int trial = 0; trial < 30; ++trial) {
        BinaryMask a{8, 8, std::vector<std::uint8_t>(64, 0)};
        BinaryMask b{8, 8, std::vector<std::uint8_t>(64, 0)};
        for (std::size_t r = 1; r < 4; ++r)
            for (std::size_t c = 1; c < 4; ++c) {
                a.fg[r * 8 + c] = rng.next_uniform() < 0.7 ? 1 : 0;
                b.fg[r * 8 + c] = rng.next_uniform() < 0.7 ? 1 : 0;
            }
        if (boundary_points(a).empty() || boundary_points(b).empty()) continue;
        BinaryMask a2{8, 8, std::vector<std::uint8_t>(64, 0)};
        BinaryMask b2{8, 8, std::vector<std::uint8_t>(64, 0)};
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c) {
                a2.fg[(r + 3) * 8 + c + 4] = a.fg[r * 8 + c];
                b2.fg[(r + 3) * 8 + c + 4] = b.fg[r * 8 + c];
            }
        CHECK(assd(a2, b2) == doctest::Approx(assd(a, b)).epsilon(1e-14));
    }
}

TEST_CASE("ece basics") {
    SUBCASE("perfectly calibrated bins") {
        // bin (0.6,0.7]: conf 0.65 with 65% accuracy over 20 samples
        std::vector<double> conf(20, 0.65);
        std::vector<std::uint8_t> ok(20, 0);
        for (int i = 0; i < 13; ++i) ok[i] = 1;
        CHECK(ece(conf, ok, 10) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("single-bin gap") {
        std::vector<double> conf(10, 1.0);
        std::vector<std::uint8_t> ok(10, 0);
        for (int i = 0; i < 5; ++i) ok[i] = 1;
        CHECK(ece(conf, ok, 10) == doctest::Approx(0.5));
    }
    SUBCASE("eight-pixel handcrafted case with four bins") {
        std::vector<double> conf = {0.1, 0.2, 0.4, 0.45, 0.6, 0.7, 0.9, 1.0};
        std::vector<std::uint8_t> ok = {0, 1, 0, 1, 1, 0, 1, 1};
        CHECK(ece(conf, ok, 4) == ece_oracle(conf, ok, 4));
    }
    CHECK_THROWS_AS(ece({0.5}, {1, 0}, 10), std::invalid_argument);
    CHECK_THROWS_AS(ece({1.5}, {1}, 10), std::invalid_argument);
}

TEST_CASE("ece matches the binning oracle exactly") {
    Rng rng(317);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 100 + rng.next_below(9900);
        const int bins = 1 + int(rng.next_below(20));
        std::vector<double> conf(n);
        std::vector<std::uint8_t> ok(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf[i] = rng.next_uniform();
            ok[i] = rng.next_uniform() < conf[i] ? 1 : 0;
        }
        // a few exact bin-edge values to exercise the right-closed rule
        conf[0] = 0.0;
        if (n > 1) conf[1] = 1.0;
        if (n > 2) conf[2] = 0.5;
        CHECK(ece(conf, ok, bins) == ece_oracle(conf, ok, bins));
    }
}

TEST_CASE("ueo basics") {
    SUBCASE("uncertainty exactly on errors") {
        BinaryMask err = make_mask(2, 2, {1, 0, 0, 1});
        std::vector<double> u = {1.0, 0.0, 0.0, 1.0};
        auto [best, tau] = ueo(err, u, default_ueo_thresholds());
        CHECK(best == 1.0);
        CHECK(tau > 0.0);
    }
    SUBCASE("constant uncertainty gives 2f/(1+f)") {
        BinaryMask err = make_mask(2, 2, {1, 0, 0, 0});  // f = 1/4
        std::vector<double> u(4, 0.5);
        auto [best, tau] = ueo(err, u, default_ueo_thresholds());
        CHECK(best == doctest::Approx(2.0 * 0.25 / 1.25));
        (void)tau;
    }
    SUBCASE("random 16-pixel case matches the exhaustive sweep") {
        Rng rng(331);
        for (int trial = 0; trial < 50; ++trial) {
            BinaryMask err = random_mask(4, 4, rng, 0.3);
            std::vector<double> u(16);
            for (auto& x : u) x = rng.next_uniform();
            const auto taus = default_ueo_thresholds();
            auto [best, best_tau] = ueo(err, u, taus);
            double oracle_best = -1.0, oracle_tau = 0.0;
            for (double tau : taus) {
                std::size_t inter = 0, nu = 0, ne = 0;
                for (std::size_t i = 0; i < 16; ++i) {
                    const bool t = u[i] >= tau, e = err.fg[i] != 0;
                    inter += t && e;
                    nu += t;
                    ne += e;
                }
                const double d =
                    (nu + ne) == 0 ? 1.0 : 2.0 * double(inter) / double(nu + ne);
                if (d > oracle_best) {
                    oracle_best = d;
                    oracle_tau = tau;
                }
            }
            CHECK(best == oracle_best);
            CHECK(best_tau == oracle_tau);
            // reported maximum dominates every swept threshold
            for (double tau : taus) {
                std::vector<std::uint8_t> th(16);
                for (std::size_t i = 0; i < 16; ++i) th[i] = u[i] >= tau ? 1 : 0;
                BinaryMask tm{4, 4, th};
                CHECK(best >= dice(tm, err));
            }
        }
    }
}

TEST_CASE("eval report aggregation") {
    EvalReport report;
    report.images.push_back({0, 0.8, 1.5, 0.1, 0.5, 0.2, 0.9, 0.3});
    report.images.push_back({1, 0.6, std::nullopt, 0.3, 0.7, 0.4, 0.8, 0.5});
    report.finalize();
    CHECK(report.mean_dice == doctest::Approx(0.7));
    CHECK(report.mean_ece == doctest::Approx(0.2));
    REQUIRE(report.mean_assd.has_value());
    CHECK(*report.mean_assd == doctest::Approx(1.5));  // missing assd excluded
}
