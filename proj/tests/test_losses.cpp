#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "eviseg/losses.hpp"
#include "eviseg/special.hpp"
#include "support/testutil.hpp"

using namespace eviseg;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

Tensor onehot_pixel(std::size_t cls, std::size_t num_classes) {
    std::vector<double> v(num_classes, 0.0);
    v[cls] = 1.0;
    return Tensor::from({1, num_classes, 1, 1}, std::move(v));
}

// Random [1,C,H,W] evidence whose per-pixel top-2 margin is wide enough
// that finite-difference wiggles cannot flip the argmax decision.
Tensor stable_evidence(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
    std::vector<double> v(c * h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        const std::size_t winner = rng.next_below(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            v[ch * h * w + i] =
                rng.next_uniform(0.2, 2.0) + (ch == winner ? rng.next_uniform(1.0, 4.0) : 0.0);
        }
    }
    return Tensor::from({1, c, h, w}, std::move(v));
}

Tensor labels_from_rng(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
    std::vector<double> v(h * w);
    for (auto& x : v) x = double(rng.next_below(c));
    return Tensor::from({1, 1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("ice loss worked values") {
    Tensor y = onehot_pixel(0, 3);
    Tensor a1 = Tensor::from({1, 3, 1, 1}, {41.0, 2.0, 2.0});
    // oracle: psi(45) - psi(41) = 1/41 + 1/42 + 1/43 + 1/44 (mpmath-frozen)
    CHECK(ice_loss(a1, y).item() == doctest::Approx(0.09418285439272393).epsilon(1e-12));

    Tensor a2 = Tensor::from({1, 3, 1, 1}, {1.0, 1.0, 1.0});
    CHECK(ice_loss(a2, y).item() == doctest::Approx(1.5).epsilon(1e-12));

    // loss decreases as labeled-class alpha grows with the others fixed
    double prev = ice_loss(Tensor::from({1, 3, 1, 1}, {2.0, 2.0, 2.0}), y).item();
    for (double a : {4.0, 8.0, 16.0}) {
        const double cur = ice_loss(Tensor::from({1, 3, 1, 1}, {a, 2.0, 2.0}), y).item();
        CHECK(cur < prev);
        prev = cur;
    }

    CHECK_THROWS_AS(ice_loss(a1, onehot_pixel(0, 2)), std::invalid_argument);
}

TEST_CASE("kl to uniform worked values") {
    // off-label alpha already at 1 -> adjusted Dirichlet is uniform -> KL 0
    Tensor y = onehot_pixel(0, 3);
    Tensor a_unit = Tensor::from({1, 3, 1, 1}, {7.0, 1.0, 1.0});
    CHECK(kl_to_uniform(a_unit, y).item() == doctest::Approx(0.0).epsilon(1e-12));

    // alpha = [41,2,2] -> adjusted [1,2,2]; mpmath-frozen Eq. 15 evaluation
    Tensor a = Tensor::from({1, 3, 1, 1}, {41.0, 2.0, 2.0});
    CHECK(kl_to_uniform(a, y).item() ==
          doctest::Approx(0.3182399831213336).epsilon(1e-12));
}

TEST_CASE("kl nonnegative on random valid inputs") {
    Rng rng(211);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t c = 2 + trial % 3;
        Tensor alpha = random_tensor({1, c, 2, 2}, rng, 1.0, 30.0);
        Tensor label = labels_from_rng(rng, c, 2, 2);
        Tensor y = one_hot(label, c);
        CHECK(kl_to_uniform(alpha, y).item() >= -1e-12);
        CHECK(ice_loss(alpha, y).item() >= -1e-12);
    }
}

TEST_CASE("soft dice loss") {
    const double smooth = 1e-5;
    Tensor y = Tensor::from({1, 2, 2, 2}, {0, 0, 1, 1, 1, 1, 0, 0});
    SUBCASE("perfect overlap") {
        CHECK(soft_dice_loss(y, y, smooth).item() == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("no overlap") {
        Tensor b = Tensor::from({1, 2, 2, 2}, {1, 1, 0, 0, 0, 0, 1, 1});
        // 1 - smooth/(N + smooth) with N = 2 + 2 foreground pixels
        CHECK(soft_dice_loss(b, y, smooth).item() ==
              doctest::Approx(1.0 - smooth / (4.0 + smooth)).epsilon(1e-12));
    }
    SUBCASE("pixel permutation leaves the loss unchanged") {
        Rng rng(223);
        Tensor b = random_tensor({1, 2, 2, 2}, rng, 0.0, 1.0);
        const double base = soft_dice_loss(b, y, smooth).item();
        // swap pixels 0 and 3 in both tensors
        auto swap_pix = [](const Tensor& t) {
            std::vector<double> v(t.values().begin(), t.values().end());
            for (std::size_t ch = 0; ch < 2; ++ch) std::swap(v[ch * 4 + 0], v[ch * 4 + 3]);
            return Tensor::from(t.shape(), std::move(v));
        };
        CHECK(soft_dice_loss(swap_pix(b), swap_pix(y), smooth).item() ==
              doctest::Approx(base).epsilon(1e-14));
    }
}

TEST_CASE("cup loss worked values") {
    // one accurate pixel, aggregated belief 1, u = 0.5, beta = 1
    Tensor b = Tensor::from({1, 3, 1, 1}, {1.0, 0.0, 0.0});
    Tensor u = Tensor::from({1, 1, 1, 1}, {0.5});
    Tensor y = onehot_pixel(0, 3);
    Tensor pred = Tensor::from({1, 1, 1, 1}, {0.0});
    Tensor label = Tensor::from({1, 1, 1, 1}, {0.0});
    CHECK(cup_loss(b, u, y, pred, label, 1.0).item() ==
          doctest::Approx(0.6931471805599453).epsilon(1e-6));

    // accurate pixels with u -> 0 push the loss to 0
    Tensor u_low = Tensor::from({1, 1, 1, 1}, {1e-9});
    CHECK(cup_loss(b, u_low, y, pred, label, 1.0).item() ==
          doctest::Approx(0.0).epsilon(1e-6));

    // inaccurate pixels with u -> 1 push the loss to 0
    Tensor wrong = Tensor::from({1, 1, 1, 1}, {1.0});
    Tensor u_high = Tensor::from({1, 1, 1, 1}, {1.0 - 1e-9});
    CHECK(cup_loss(b, u_high, y, pred, wrong, 0.3).item() ==
          doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("cup loss nonnegative") {
    Rng rng(227);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor b = random_tensor({1, 3, 2, 2}, rng, 0.0, 0.33);
        Tensor u = random_tensor({1, 1, 2, 2}, rng, 0.01, 0.99);
        Tensor label = labels_from_rng(rng, 3, 2, 2);
        Tensor pred = labels_from_rng(rng, 3, 2, 2);
        Tensor y = one_hot(label, 3);
        CHECK(cup_loss(b, u, y, pred, label, rng.next_uniform(0.01, 1.0)).item() >= 0.0);
    }
}

TEST_CASE("annealing schedule") {
    CHECK(anneal(0, 100, 0.01) == 0.01);
    CHECK(anneal(100, 100, 0.01) == 1.0);  // exact
    CHECK(std::abs(anneal(50, 100, 0.01) - 0.1) < 1e-12);
    double prev = anneal(0, 37, 0.01);
    for (long t = 1; t <= 37; ++t) {
        const double cur = anneal(t, 37, 0.01);
        CHECK(cur > prev);
        prev = cur;
    }
    CHECK_THROWS_AS(anneal(-1, 10, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(anneal(11, 10, 0.01), std::invalid_argument);
}

TEST_CASE("cup metric") {
    Tensor label = Tensor::from({1, 1, 2, 2}, {0, 1, 0, 1});
    SUBCASE("handcrafted four-pixel case") {
        // AC (acc, u=.1), AU (acc, u=.9), IC (inacc, u=.2), IU (inacc, u=.8)
        Tensor pred = Tensor::from({1, 1, 2, 2}, {0, 1, 1, 0});
        Tensor u = Tensor::from({1, 1, 2, 2}, {0.1, 0.9, 0.2, 0.8});
        CHECK(cup_metric(u, pred, label, 0.5) == doctest::Approx(0.5));
    }
    SUBCASE("all accurate and certain") {
        Tensor u = Tensor::from({1, 1, 2, 2}, {0.1, 0.1, 0.2, 0.3});
        CHECK(cup_metric(u, label, label, 0.5) == 1.0);
    }
    SUBCASE("all accurate but uncertain") {
        Tensor u = Tensor::from({1, 1, 2, 2}, {0.9, 0.8, 0.7, 0.6});
        CHECK(cup_metric(u, label, label, 0.5) == 0.0);
    }
    SUBCASE("invariant to pixel permutation") {
        Tensor pred = Tensor::from({1, 1, 2, 2}, {0, 1, 1, 0});
        Tensor u = Tensor::from({1, 1, 2, 2}, {0.1, 0.9, 0.2, 0.8});
        const double base = cup_metric(u, pred, label, 0.5);
        // same pixels in reversed order
        Tensor label_rev = Tensor::from({1, 1, 2, 2}, {1, 0, 1, 0});
        Tensor pred_rev = Tensor::from({1, 1, 2, 2}, {0, 1, 1, 0});
        Tensor u_rev = Tensor::from({1, 1, 2, 2}, {0.8, 0.2, 0.9, 0.1});
        CHECK(cup_metric(u_rev, pred_rev, label_rev, 0.5) == doctest::Approx(base));
    }
    CHECK_THROWS_AS(cup_metric(Tensor::zeros({1, 1, 0, 0}), Tensor::zeros({1, 1, 0, 0}),
                               Tensor::zeros({1, 1, 0, 0}), 0.5),
                    std::invalid_argument);
}

TEST_CASE("total loss recombination and switch-offs") {
    Rng rng(229);
    Tensor e = stable_evidence(rng, 3, 2, 2);
    Opinion op = opinion_from_evidence(e, 3);
    Tensor label = labels_from_rng(rng, 3, 2, 2);
    Tensor y = one_hot(label, 3);

    LossConfig cfg;
    cfg.total_epochs = 10;
    SUBCASE("report components recombine to the total (annealed form)") {
        cfg.anneal_dice = true;
        LossReport r = total_loss(op, y, label, 3, cfg);
        const double expect =
            r.ice + cfg.lambda_kl * r.kl + (1.0 - r.beta_t) * r.dice + r.cup;
        CHECK(std::abs(r.total - expect) < 1e-10);
    }
    SUBCASE("report components recombine to the total (plain form)") {
        cfg.anneal_dice = false;
        LossReport r = total_loss(op, y, label, 3, cfg);
        CHECK(std::abs(r.total - (r.ice + cfg.lambda_kl * r.kl + r.dice + r.cup)) < 1e-10);
    }
    SUBCASE("lambda 0 and beta 1 leave ice + cup") {
        cfg.anneal_dice = true;
        cfg.lambda_kl = 0.0;
        LossReport r = total_loss(op, y, label, 10, cfg);  // t = T -> beta_t = 1
        CHECK(r.beta_t == 1.0);
        CHECK(std::abs(r.total - (r.ice + r.cup)) < 1e-10);
    }
}

TEST_CASE("finite differences: each loss component") {
    Rng rng(233);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = 2 + trial % 2;
        Tensor label = labels_from_rng(rng, c, 2, 2);
        Tensor y = one_hot(label, c);

        Tensor alpha = random_tensor({1, c, 2, 2}, rng, 1.1, 20.0);
        CHECK(gradcheck([&](const Tensor& a) { return ice_loss(a, y); }, alpha) < 1e-4);
        CHECK(gradcheck([&](const Tensor& a) { return kl_to_uniform(a, y); }, alpha) < 1e-4);

        Tensor belief = random_tensor({1, c, 2, 2}, rng, 0.05, 0.95);
        CHECK(gradcheck([&](const Tensor& b) { return soft_dice_loss(b, y, 1e-5); }, belief) <
              1e-4);

        Tensor pred = labels_from_rng(rng, c, 2, 2);
        Tensor u = random_tensor({1, 1, 2, 2}, rng, 0.05, 0.95);
        const double beta = rng.next_uniform(0.05, 0.95);
        CHECK(gradcheck(
                  [&](const Tensor& b) { return cup_loss(b, u, y, pred, label, beta); },
                  belief) < 1e-4);
        CHECK(gradcheck(
                  [&](const Tensor& uu) { return cup_loss(belief, uu, y, pred, label, beta); },
                  u) < 1e-4);
    }
}

TEST_CASE("finite differences: combined objective through the opinion") {
    Rng rng(239);
    LossConfig cfg;
    cfg.total_epochs = 10;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = 2 + trial % 2;
        Tensor label = labels_from_rng(rng, c, 2, 2);
        Tensor y = one_hot(label, c);
        Tensor e = stable_evidence(rng, c, 2, 2);
        const long t = trial % (cfg.total_epochs + 1);
        auto f = [&](const Tensor& ev) {
            Opinion op = opinion_from_evidence(ev, c);
            return total_loss(op, y, label, t, cfg).objective;
        };
        CHECK(gradcheck(f, e) < 1e-4);
    }
}

TEST_CASE("grad oracle vs autodiff of the raw-alpha evidential loss") {
    Rng rng(241);
    const double lambda = 0.02;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t c = 2 + trial % 3;
        const std::size_t labeled = rng.next_below(c);
        std::vector<double> av(c), yv(c, 0.0);
        yv[labeled] = 1.0;
        for (auto& a : av) a = rng.next_uniform(1.05, 40.0);
        double alpha0 = 0.0;
        for (double a : av) alpha0 += a;

        Tensor alpha = Tensor::from({1, c, 1, 1}, av).set_requires_grad(true);
        Tensor y = Tensor::from({1, c, 1, 1}, yv);
        Tensor y_zero = Tensor::zeros({1, c, 1, 1});  // raw-alpha KL (no adjustment)
        backward(add(ice_loss(alpha, y), mul(kl_to_uniform(alpha, y_zero), lambda)));

        const auto oracle = grad_oracle_le(av, yv, lambda);
        auto grad = alpha.grad();
        // exact partial for the labeled class
        CHECK(std::abs(grad[labeled] - oracle[labeled]) < 1e-8);
        // off-label components differ from the true gradient by psi'(alpha0)
        for (std::size_t ch = 0; ch < c; ++ch) {
            if (ch == labeled) continue;
            CHECK(std::abs(grad[ch] - oracle[ch] - trigamma(alpha0)) < 1e-8);
        }
    }
}

TEST_CASE("grad oracle bracket vanishes at the local optimum") {
    const double lambda = 0.02;
    // alpha-hat = 1 + y/lambda makes the labeled psi'(alpha_c) bracket vanish
    std::vector<double> y = {1.0, 0.0, 0.0};
    std::vector<double> alpha = {1.0 + 1.0 / lambda, 1.0, 1.0};
    const double bracket = -y[0] + lambda * (alpha[0] - 1.0);
    CHECK(bracket == doctest::Approx(0.0).epsilon(1e-15));

    // lambda = 0 reduces to the pure-ICE pattern psi'(a0) y_c - psi'(a_c) y_c
    auto g = grad_oracle_le(alpha, y, 0.0);
    const double a0 = alpha[0] + alpha[1] + alpha[2];
    CHECK(g[0] == doctest::Approx(trigamma(a0) - trigamma(alpha[0])).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(g[2] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("loss config validation") {
    LossConfig bad;
    bad.beta0 = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = LossConfig{};
    bad.lambda_kl = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = LossConfig{};
    bad.certainty_threshold = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
