#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "eviseg/backbone.hpp"
#include "eviseg/datagen.hpp"
#include "eviseg/metrics.hpp"
#include "eviseg/uaf.hpp"

namespace eviseg {

struct Batch {
    Tensor x;      // [N,in_channels,H,W]
    Tensor label;  // [N,1,H,W] class ids
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

struct TrainConfig {
    long epochs = 16;
    std::size_t batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;  // shuffle stream
};

struct StepInfo {
    long step;
    long epoch;
    double lr;
};

// Shuffled mini-batch training with Adam + poly lr decay across the whole
// run. Returns the shuffle RNG state after the final epoch.
std::uint64_t train_model(const Dataset& data, ModelState& state,
                          const TrainConfig& config, const LossFn& loss_fn,
                          const std::function<void(const LossReport&, const StepInfo&)>&
                              on_step = nullptr);

struct EvalOptions {
    int ece_bins = 10;
    std::vector<double> ueo_thresholds = default_ueo_thresholds();
    int workers = 1;
    bool compute_assd = true;
};

// Per-pixel outputs of one evidential inference, flattened row-major.
struct PixelOutputs {
    std::vector<double> pred;        // class ids
    std::vector<double> confidence;  // projected prob of the predicted class
    std::vector<double> uncertainty;
    std::size_t height = 0, width = 0;
};

PixelOutputs infer_evidential(const ModelState& state, const Tensor& image);

BinaryMask class_mask(std::span<const double> labels, std::size_t height,
                      std::size_t width, double cls);
BinaryMask foreground_mask(std::span<const double> labels, std::size_t height,
                           std::size_t width);

ImageEval evaluate_image(const PixelOutputs& out, const Tensor& gt_label,
                         std::size_t num_classes, const EvalOptions& opts);

EvalReport evaluate_evidential(const ModelState& state, const Dataset& data,
                               const DegradationSpec& degradation,
                               const EvalOptions& opts);

struct FilterOutcome {
    double u_star = 0.0;
    std::vector<ValidationPoint> validation;
    std::vector<FilterDecision> decisions;   // one per test image
    std::vector<double> test_dice;           // aligned with decisions
    double unfiltered_mean_dice = 0.0;
    double retained_mean_dice = 0.0;
    std::size_t retained_count = 0;
};

// Fits u* on the validation set (uncertainty averaged over the ground-truth
// foreground) and classifies the test set (uncertainty averaged over the
// predicted foreground, whole-image fallback).
FilterOutcome run_filter(const ModelState& state, const Dataset& validation,
                         const Dataset& test, const EvalOptions& opts);

}  // namespace eviseg
