#include "eviseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "eviseg/evidential.hpp"

namespace eviseg {

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const Tensor& first = data.at(indices[0]).image;
    if (first.rank() != 3) throw std::invalid_argument("make_batch: image must be [C,H,W]");
    const std::size_t c = first.dim(0), h = first.dim(1), w = first.dim(2);

    std::vector<double> xs;
    xs.reserve(indices.size() * c * h * w);
    std::vector<double> labels;
    labels.reserve(indices.size() * h * w);
    for (std::size_t idx : indices) {
        const Sample& sample = data.at(idx);
        if (sample.image.shape() != first.shape()) {
            throw std::invalid_argument("make_batch: inconsistent image shapes");
        }
        auto iv = sample.image.values();
        xs.insert(xs.end(), iv.begin(), iv.end());
        auto lv = sample.label.values();
        labels.insert(labels.end(), lv.begin(), lv.end());
    }
    Batch batch;
    batch.x = Tensor::from({indices.size(), c, h, w}, std::move(xs));
    batch.label = Tensor::from({indices.size(), 1, h, w}, std::move(labels));
    return batch;
}

std::uint64_t train_model(const Dataset& data, ModelState& state,
                          const TrainConfig& config, const LossFn& loss_fn,
                          const std::function<void(const LossReport&, const StepInfo&)>&
                              on_step) {
    if (data.empty()) throw std::invalid_argument("train_model: empty dataset");
    if (config.epochs < 1 || config.batch_size < 1) {
        throw std::invalid_argument("train_model: bad epochs/batch");
    }
    const std::size_t n = data.size();
    const long steps_per_epoch =
        static_cast<long>((n + config.batch_size - 1) / config.batch_size);

    AdamConfig adam_config;
    adam_config.lr = config.lr;
    adam_config.max_iter = config.epochs * steps_per_epoch;
    Adam optimizer(state, adam_config);

    Rng shuffle_rng(mix_seed(config.seed, 0x7368756666ull));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    long step = 0;
    for (long epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, n - start);
            Batch batch = make_batch(data, {order.data() + start, len});
            const double lr = optimizer.current_lr();
            LossReport report =
                train_step(batch.x, batch.label, state, optimizer, loss_fn, epoch);
            if (on_step) on_step(report, {step, epoch, lr});
            ++step;
        }
    }
    return shuffle_rng.state();
}

PixelOutputs infer_evidential(const ModelState& state, const Tensor& image) {
    NoGradGuard no_grad;
    if (image.rank() != 3) {
        throw std::invalid_argument("infer_evidential: image must be [C,H,W]");
    }
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor x = Tensor::from({1, c, h, w},
                            std::vector<double>(image.values().begin(), image.values().end()));
    Tensor logits = backbone_forward(x, state);
    Opinion opinion = opinion_from_evidence(evidence_from_logits(logits),
                                            state.config.num_classes);
    Tensor pred = predict(opinion);

    PixelOutputs out;
    out.height = h;
    out.width = w;
    auto pv = pred.values();
    out.pred.assign(pv.begin(), pv.end());
    auto uv = opinion.uncertainty.values();
    out.uncertainty.assign(uv.begin(), uv.end());

    auto prob = opinion.projected_prob.values();
    out.confidence.resize(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        const auto cls = static_cast<std::size_t>(out.pred[i]);
        out.confidence[i] = prob[cls * h * w + i];
    }
    return out;
}

BinaryMask class_mask(std::span<const double> labels, std::size_t height,
                      std::size_t width, double cls) {
    BinaryMask mask{height, width, std::vector<std::uint8_t>(height * width, 0)};
    for (std::size_t i = 0; i < mask.fg.size(); ++i) mask.fg[i] = labels[i] == cls ? 1 : 0;
    return mask;
}

BinaryMask foreground_mask(std::span<const double> labels, std::size_t height,
                           std::size_t width) {
    BinaryMask mask{height, width, std::vector<std::uint8_t>(height * width, 0)};
    for (std::size_t i = 0; i < mask.fg.size(); ++i) mask.fg[i] = labels[i] >= 1.0 ? 1 : 0;
    return mask;
}

ImageEval evaluate_image(const PixelOutputs& out, const Tensor& gt_label,
                         std::size_t num_classes, const EvalOptions& opts) {
    const std::size_t h = out.height, w = out.width;
    if (gt_label.numel() != h * w) {
        throw std::invalid_argument("evaluate_image: label size mismatch");
    }
    auto gt = gt_label.values();

    ImageEval eval;
    double dice_sum = 0.0, assd_sum = 0.0;
    std::size_t assd_n = 0;
    bool assd_missing = false;
    for (std::size_t cls = 1; cls < num_classes; ++cls) {
        const BinaryMask pm = class_mask(out.pred, h, w, double(cls));
        const BinaryMask gm = class_mask(gt, h, w, double(cls));
        dice_sum += dice(pm, gm);
        if (opts.compute_assd) {
            try {
                assd_sum += assd(pm, gm);
                ++assd_n;
            } catch (const std::invalid_argument&) {
                assd_missing = true;  // empty mask: excluded from means
            }
        }
    }
    eval.dice = dice_sum / double(num_classes - 1);
    if (opts.compute_assd && assd_n > 0 && !assd_missing) {
        eval.assd = assd_sum / double(assd_n);
    }

    std::size_t correct_count = 0;
    std::vector<std::uint8_t> correct(h * w);
    BinaryMask error_mask{h, w, std::vector<std::uint8_t>(h * w, 0)};
    for (std::size_t i = 0; i < h * w; ++i) {
        const bool ok = out.pred[i] == gt[i];
        correct[i] = ok ? 1 : 0;
        error_mask.fg[i] = ok ? 0 : 1;
        correct_count += ok;
    }
    eval.accuracy = double(correct_count) / double(h * w);
    eval.ece = ece(out.confidence, correct, opts.ece_bins);
    const auto [overlap, tau] = ueo(error_mask, out.uncertainty, opts.ueo_thresholds);
    eval.ueo = overlap;
    eval.ueo_tau = tau;
    eval.mean_uncertainty =
        std::accumulate(out.uncertainty.begin(), out.uncertainty.end(), 0.0) /
        double(h * w);
    return eval;
}

namespace {

// Runs fn(i) over [0, n) on `workers` threads; results land by index, so
// the output order is independent of scheduling.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int threads = std::min<int>(workers, static_cast<int>(n));
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace

EvalReport evaluate_evidential(const ModelState& state, const Dataset& data,
                               const DegradationSpec& degradation,
                               const EvalOptions& opts) {
    EvalReport report;
    report.images.resize(data.size());
    parallel_for(data.size(), opts.workers, [&](std::size_t i) {
        DegradationSpec per_image = degradation;
        per_image.seed = mix_seed(degradation.seed, data[i].id);
        Tensor degraded = per_image.apply(data[i].image);
        PixelOutputs out = infer_evidential(state, degraded);
        report.images[i] = evaluate_image(out, data[i].label, state.config.num_classes, opts);
        report.images[i].id = data[i].id;
    });
    report.finalize();
    return report;
}

FilterOutcome run_filter(const ModelState& state, const Dataset& validation,
                         const Dataset& test, const EvalOptions& opts) {
    if (validation.empty()) throw std::invalid_argument("run_filter: empty validation set");
    FilterOutcome outcome;

    outcome.validation.resize(validation.size());
    parallel_for(validation.size(), opts.workers, [&](std::size_t i) {
        PixelOutputs out = infer_evidential(state, validation[i].image);
        auto gt = validation[i].label.values();
        std::size_t correct = 0;
        for (std::size_t k = 0; k < out.pred.size(); ++k) correct += out.pred[k] == gt[k];
        const BinaryMask region = foreground_mask(gt, out.height, out.width);
        const MeanUncertainty mu = mean_uncertainty(out.uncertainty, region);
        outcome.validation[i] = {double(correct) / double(out.pred.size()), mu.value};
    });
    outcome.u_star = fit_threshold(outcome.validation);

    outcome.decisions.resize(test.size());
    outcome.test_dice.resize(test.size());
    parallel_for(test.size(), opts.workers, [&](std::size_t i) {
        PixelOutputs out = infer_evidential(state, test[i].image);
        const BinaryMask region = foreground_mask(out.pred, out.height, out.width);
        const MeanUncertainty mu = mean_uncertainty(out.uncertainty, region);

        FilterDecision decision;
        decision.image_id = test[i].id;
        decision.mean_uncertainty = mu.value;
        decision.threshold = outcome.u_star;
        decision.verdict = filter_verdict(mu.value, outcome.u_star);
        decision.uncertainty_source = mu.fell_back_to_whole_image
                                          ? UncertaintySource::kWholeImage
                                          : UncertaintySource::kPredictedRegion;
        outcome.decisions[i] = decision;

        ImageEval eval = evaluate_image(out, test[i].label, state.config.num_classes, opts);
        outcome.test_dice[i] = eval.dice;
    });

    double total = 0.0, retained = 0.0;
    std::size_t retained_n = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        total += outcome.test_dice[i];
        if (outcome.decisions[i].verdict == 1) {
            retained += outcome.test_dice[i];
            ++retained_n;
        }
    }
    outcome.unfiltered_mean_dice = test.empty() ? 0.0 : total / double(test.size());
    outcome.retained_mean_dice = retained_n ? retained / double(retained_n) : 0.0;
    outcome.retained_count = retained_n;
    return outcome;
}

}  // namespace eviseg
