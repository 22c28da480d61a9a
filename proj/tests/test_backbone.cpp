#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "eviseg/backbone.hpp"
#include "eviseg/datagen.hpp"
#include "eviseg/pipeline.hpp"
#include "support/testutil.hpp"

using namespace eviseg;
using testutil::random_tensor;

namespace {
BackboneConfig tiny_config(std::uint64_t seed) {
    BackboneConfig cfg;
    cfg.in_channels = 1;
    cfg.num_classes = 2;
    cfg.base_width = 4;
    cfg.depth = 2;
    cfg.seed = seed;
    return cfg;
}
}  // namespace

TEST_CASE("forward shape contract") {
    ModelState state = init_backbone(tiny_config(5));
    Tensor x = Tensor::zeros({1, 1, 16, 16});
    Tensor logits = backbone_forward(x, state);
    CHECK(logits.shape() == Shape{1, 2, 16, 16});

    CHECK_THROWS_AS(backbone_forward(Tensor::zeros({1, 1, 18, 16}), state),
                    std::invalid_argument);
    CHECK_THROWS_AS(backbone_forward(Tensor::zeros({1, 2, 16, 16}), state),
                    std::invalid_argument);
}

TEST_CASE("forward is deterministic") {
    ModelState state = init_backbone(tiny_config(5));
    Rng rng(55);
    Tensor x = random_tensor({2, 1, 16, 16}, rng);
    NoGradGuard no_grad;
    Tensor a = backbone_forward(x, state);
    Tensor b = backbone_forward(x, state);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);
}

TEST_CASE("init is seeded and reproducible") {
    ModelState a = init_backbone(tiny_config(5));
    ModelState b = init_backbone(tiny_config(5));
    ModelState c = init_backbone(tiny_config(6));
    REQUIRE(a.params.size() == b.params.size());
    bool all_equal_ab = true, any_diff_ac = false;
    for (std::size_t k = 0; k < a.params.size(); ++k) {
        for (std::size_t i = 0; i < a.params[k].second.numel(); ++i) {
            all_equal_ab &=
                a.params[k].second.values()[i] == b.params[k].second.values()[i];
            any_diff_ac |=
                a.params[k].second.values()[i] != c.params[k].second.values()[i];
        }
    }
    CHECK(all_equal_ab);
    CHECK(any_diff_ac);
}

TEST_CASE("parameter count matches the closed form") {
    BackboneConfig cfg = tiny_config(1);
    ModelState state = init_backbone(cfg);
    // depth 2, width 4, 1 input channel, 2 classes, all 3x3 except the head:
    // enc0: (1*4*9+4) + (4*4*9+4); enc1: (4*8*9+8) + (8*8*9+8)
    // bott: (8*16*9+16) + (16*16*9+16)
    // dec1: (24*8*9+8) + (8*8*9+8); dec0: (12*4*9+4) + (4*4*9+4)
    // head: (4*2*1+2)
    const std::size_t expect = (36 + 4) + (144 + 4) + (288 + 8) + (576 + 8) +
                               (1152 + 16) + (2304 + 16) + (1728 + 8) + (576 + 8) +
                               (432 + 4) + (144 + 4) + (8 + 2);
    CHECK(expected_num_scalars(cfg) == expect);
    CHECK(state.num_scalars() == expect);
}

TEST_CASE("gradient reaches every parameter") {
    ModelState state = init_backbone(tiny_config(9));
    Rng rng(77);
    Tensor x = random_tensor({2, 1, 8, 8}, rng);
    Tensor logits = backbone_forward(x, state);
    backward(mean(mul(logits, logits)));
    for (const auto& [name, p] : state.params) {
        CAPTURE(name);
        REQUIRE(p.has_grad());
        double norm = 0.0;
        for (double g : p.grad()) norm += g * g;
        CHECK(norm > 0.0);  // no dead branches
    }
}

TEST_CASE("poly learning rate decay") {
    ModelState state = init_backbone(tiny_config(3));
    AdamConfig cfg;
    cfg.lr = 1e-3;
    cfg.max_iter = 10;
    Adam opt(state, cfg);
    CHECK(opt.current_lr() == doctest::Approx(1e-3));
    for (int i = 0; i < 10; ++i) opt.step(state);
    CHECK(opt.current_lr() == 0.0);  // endpoint
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    ModelState state = init_backbone(tiny_config(3));
    std::vector<std::vector<double>> before;
    for (const auto& [name, p] : state.params) {
        before.emplace_back(p.values().begin(), p.values().end());
    }
    AdamConfig acfg;
    acfg.lr = 0.0;
    acfg.max_iter = 5;
    Adam opt(state, acfg);
    Rng rng(88);
    Tensor x = random_tensor({1, 1, 8, 8}, rng);
    Tensor label = Tensor::zeros({1, 1, 8, 8});
    LossConfig lcfg;
    lcfg.total_epochs = 5;
    train_step(x, label, state, opt, make_evidential_loss(lcfg, 2), 0);
    for (std::size_t k = 0; k < state.params.size(); ++k) {
        for (std::size_t i = 0; i < before[k].size(); ++i) {
            CHECK(state.params[k].second.values()[i] == before[k][i]);
        }
    }
}

TEST_CASE("checkpoint round-trip is bitwise and reproduces the forward pass") {
    namespace fs = std::filesystem;
    ModelState state = init_backbone(tiny_config(21));
    state.step = 123;
    const std::string dir = (fs::temp_directory_path() / "eviseg_ckpt_test").string();
    fs::remove_all(dir);
    save_checkpoint(state, 0xdeadbeefull, dir);

    std::uint64_t rng_state = 0;
    ModelState back = load_checkpoint(dir, &rng_state);
    CHECK(rng_state == 0xdeadbeefull);
    CHECK(back.step == 123);
    REQUIRE(back.params.size() == state.params.size());
    for (std::size_t k = 0; k < state.params.size(); ++k) {
        CHECK(back.params[k].first == state.params[k].first);
        for (std::size_t i = 0; i < state.params[k].second.numel(); ++i) {
            CHECK(back.params[k].second.values()[i] == state.params[k].second.values()[i]);
        }
    }

    Rng rng(99);
    Tensor x = random_tensor({1, 1, 16, 16}, rng);
    NoGradGuard no_grad;
    Tensor a = backbone_forward(x, state);
    Tensor b = backbone_forward(x, back);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);
    fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    ModelState state = init_backbone(tiny_config(2));
    AdamConfig acfg;
    acfg.max_iter = 1;
    Adam opt(state, acfg);
    Tensor x = Tensor::full({1, 1, 8, 8}, 1.0);
    Tensor label = Tensor::zeros({1, 1, 8, 8});
    LossFn poisoned = [](const Tensor& logits, const Tensor&, long) {
        LossReport r;
        r.objective = mul(sum(logits), 0.0);
        r.total = std::nan("");
        return r;
    };
    CHECK_THROWS_WITH_AS(train_step(x, label, state, opt, poisoned, 0),
                         doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("300 steps reach 95% pixel accuracy on the two-blob task") {
    SyntheticSpec spec;
    spec.height = 16;
    spec.width = 16;
    spec.num_classes = 2;
    spec.fg_min = 0.08;
    spec.fg_max = 0.3;
    spec.texture_noise = 0.15;
    spec.seed = 404;
    Dataset data = generate(spec, 40);

    ModelState state = init_backbone(tiny_config(404));
    TrainConfig tcfg;
    tcfg.epochs = 30;  // 40 images / batch 4 -> 10 steps per epoch
    tcfg.batch_size = 4;
    tcfg.lr = 1e-3;
    tcfg.seed = 404;
    LossConfig lcfg;
    lcfg.total_epochs = tcfg.epochs;
    long steps = 0;
    train_model(data, state, tcfg, make_evidential_loss(lcfg, 2),
                [&steps](const LossReport&, const StepInfo&) { ++steps; });
    CHECK(steps == 300);

    std::size_t correct = 0, total = 0;
    for (const auto& sample : data) {
        PixelOutputs out = infer_evidential(state, sample.image);
        auto gt = sample.label.values();
        for (std::size_t i = 0; i < out.pred.size(); ++i) {
            correct += out.pred[i] == gt[i];
            ++total;
        }
    }
    const double acc = double(correct) / double(total);
    CAPTURE(acc);
    CHECK(acc >= 0.95);
}

TEST_CASE("training loss decreases on a learnable task") {
    SyntheticSpec spec;
    spec.height = 16;
    spec.width = 16;
    spec.num_classes = 2;
    spec.fg_min = 0.08;
    spec.fg_max = 0.3;
    spec.texture_noise = 0.15;
    spec.seed = 505;
    Dataset data = generate(spec, 20);

    ModelState state = init_backbone(tiny_config(505));
    TrainConfig tcfg;
    tcfg.epochs = 20;
    tcfg.batch_size = 4;
    tcfg.seed = 505;
    LossConfig lcfg;
    lcfg.total_epochs = tcfg.epochs;
    std::vector<double> totals;
    train_model(data, state, tcfg, make_evidential_loss(lcfg, 2),
                [&totals](const LossReport& r, const StepInfo&) {
                    totals.push_back(r.total);
                });
    REQUIRE(totals.size() == 100);
    const double head = std::accumulate(totals.begin(), totals.begin() + 10, 0.0) / 10.0;
    const double tail = std::accumulate(totals.end() - 10, totals.end(), 0.0) / 10.0;
    CHECK(tail < head);
}
