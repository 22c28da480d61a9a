#pragma once

// Plain softmax cross-entropy baseline used only by the test/acceptance
// suites to compare the evidential head against a conventional one on the
// same backbone.

#include <cmath>
#include <numeric>

#include "eviseg/backbone.hpp"
#include "eviseg/losses.hpp"
#include "eviseg/pipeline.hpp"

namespace eviseg::testutil {

inline LossFn make_softmax_ce_loss(std::size_t num_classes) {
    return [num_classes](const Tensor& logits, const Tensor& label, long) {
        Tensor y = one_hot(label, num_classes);
        Tensor shift = max_channels(logits);  // constant; stabilizes exp
        Tensor centered = logits - repeat_channels(shift, num_classes);
        Tensor lse = log(sum_channels(exp(centered)));
        Tensor ce = mean(lse + shift - sum_channels(mul(y, logits)));
        LossReport report;
        report.objective = ce;
        report.total = ce.item();
        return report;
    };
}

// Per-pixel predictions and softmax confidences of the baseline head.
inline PixelOutputs infer_softmax(const ModelState& state, const Tensor& image) {
    NoGradGuard no_grad;
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor x = Tensor::from({1, c, h, w},
                            std::vector<double>(image.values().begin(), image.values().end()));
    Tensor logits = backbone_forward(x, state);
    const std::size_t classes = state.config.num_classes;
    auto z = logits.values();

    PixelOutputs out;
    out.height = h;
    out.width = w;
    out.pred.resize(h * w);
    out.confidence.resize(h * w);
    out.uncertainty.resize(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        std::size_t best = 0;
        double zmax = z[i];
        for (std::size_t ch = 1; ch < classes; ++ch) {
            if (z[ch * h * w + i] > zmax) {
                zmax = z[ch * h * w + i];
                best = ch;
            }
        }
        double denom = 0.0;
        for (std::size_t ch = 0; ch < classes; ++ch)
            denom += std::exp(z[ch * h * w + i] - zmax);
        const double p = 1.0 / denom;  // softmax of the argmax class
        out.pred[i] = double(best);
        out.confidence[i] = p;
        out.uncertainty[i] = 1.0 - p;
    }
    return out;
}

inline EvalReport evaluate_softmax(const ModelState& state, const Dataset& data,
                                   const DegradationSpec& degradation,
                                   const EvalOptions& opts) {
    EvalReport report;
    report.images.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        DegradationSpec per_image = degradation;
        per_image.seed = mix_seed(degradation.seed, data[i].id);
        Tensor degraded = per_image.apply(data[i].image);
        PixelOutputs out = infer_softmax(state, degraded);
        report.images[i] = evaluate_image(out, data[i].label, state.config.num_classes, opts);
        report.images[i].id = data[i].id;
    }
    report.finalize();
    return report;
}

}  // namespace eviseg::testutil
