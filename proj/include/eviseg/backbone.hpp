#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "eviseg/losses.hpp"
#include "eviseg/rng.hpp"
#include "eviseg/tensor.hpp"

namespace eviseg {

// Small 2D encoder-decoder: per level two 3x3 convs + ReLU, 2x2 max-pool
// down, nearest-neighbour up with skip concatenation, 1x1 head producing
// raw per-class logits (no terminal normalization).
struct BackboneConfig {
    std::size_t in_channels = 1;
    std::size_t num_classes = 2;
    std::size_t base_width = 8;
    std::size_t depth = 2;  // number of downsamplings, 1..3
    std::uint64_t seed = 0;

    void validate() const;
};

struct ModelState {
    BackboneConfig config;
    std::vector<std::pair<std::string, Tensor>> params;  // fixed order
    long step = 0;

    const Tensor& param(const std::string& name) const;
    void zero_grad();
    std::size_t num_scalars() const;
};

// He fan-in init, deterministic under the config seed.
ModelState init_backbone(const BackboneConfig& config);

// Expected total parameter count for a config (closed form).
std::size_t expected_num_scalars(const BackboneConfig& config);

// x [N,in_channels,H,W] with H,W divisible by 2^depth -> [N,C,H,W] logits.
Tensor backbone_forward(const Tensor& x, const ModelState& state);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double poly_power = 0.9;  // lr * (1 - iter/max_iter)^power
    long max_iter = 1;
};

class Adam {
public:
    Adam(const ModelState& state, AdamConfig config);
    double current_lr() const;
    long iteration() const { return iter_; }
    void step(ModelState& state);

private:
    AdamConfig config_;
    std::vector<std::vector<double>> m_, v_;
    long iter_ = 0;
};

// Builds one step's loss from logits; epoch feeds annealing schedules.
using LossFn = std::function<LossReport(const Tensor& logits, const Tensor& label,
                                        long epoch)>;

// Full evidential objective behind the LossFn interface.
LossFn make_evidential_loss(const LossConfig& config, std::size_t num_classes);

// One optimizer update on a batch; throws std::runtime_error with a
// diagnostic if the loss stops being finite.
LossReport train_step(const Tensor& x, const Tensor& label, ModelState& state,
                      Adam& optimizer, const LossFn& loss_fn, long epoch);

// Checkpoint = directory of TNS1 params + JSON manifest (config, step,
// RNG state). Round-trips are bit exact.
void save_checkpoint(const ModelState& state, std::uint64_t rng_state,
                     const std::string& dir);
ModelState load_checkpoint(const std::string& dir, std::uint64_t* rng_state = nullptr);

}  // namespace eviseg
