#include "eviseg/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "eviseg/special.hpp"

namespace eviseg {

namespace {

constexpr double kLogEps = 1e-7;

void check_onehot_shapes(const Tensor& a, const Tensor& y, const char* op) {
    if (a.rank() != 4 || y.rank() != 4 || a.shape() != y.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(y.shape()));
    }
}

}  // namespace

void LossConfig::validate() const {
    if (lambda_kl < 0.0) throw std::invalid_argument("loss config: lambda_kl must be >= 0");
    if (!(beta0 > 0.0 && beta0 <= 1.0)) {
        throw std::invalid_argument("loss config: beta0 must be in (0, 1]");
    }
    if (total_epochs < 1) throw std::invalid_argument("loss config: total_epochs must be >= 1");
    if (!(dice_smooth > 0.0)) throw std::invalid_argument("loss config: dice_smooth must be > 0");
    if (!(certainty_threshold > 0.0 && certainty_threshold < 1.0)) {
        throw std::invalid_argument("loss config: certainty_threshold must be in (0, 1)");
    }
}

Tensor ice_loss(const Tensor& alpha, const Tensor& y) {
    check_onehot_shapes(alpha, y, "ice_loss");
    Tensor strength = sum_channels(alpha);
    Tensor gap = repeat_channels(digamma(strength), alpha.dim(1)) - digamma(alpha);
    return mean(sum_channels(mul(y, gap)));
}

Tensor kl_to_uniform(const Tensor& alpha, const Tensor& y) {
    check_onehot_shapes(alpha, y, "kl_to_uniform");
    const std::size_t c = alpha.dim(1);
    // adjusted parameters: ground-truth class pinned to 1
    Tensor adj = y + mul(rsub(1.0, y), alpha);
    Tensor adj0 = sum_channels(adj);
    Tensor log_term = lgamma(adj0) - Tensor::full(adj0.shape(), eviseg::lgamma(double(c))) -
                      sum_channels(lgamma(adj));
    Tensor digamma_term =
        sum_channels(mul(adj - 1.0, digamma(adj) - repeat_channels(digamma(adj0), c)));
    return mean(log_term + digamma_term);
}

Tensor soft_dice_loss(const Tensor& belief, const Tensor& y, double smooth) {
    check_onehot_shapes(belief, y, "soft_dice_loss");
    if (!(smooth > 0.0)) throw std::invalid_argument("soft_dice_loss: smooth must be > 0");
    const std::size_t num_classes = belief.dim(1);
    if (num_classes < 2) throw std::invalid_argument("soft_dice_loss: need >= 2 classes");
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t c = 1; c < num_classes; ++c) {
        Tensor bc = slice_channel(belief, c);
        Tensor yc = slice_channel(y, c);
        Tensor inter = sum(mul(yc, bc));
        Tensor denom = sum(yc) + sum(bc) + smooth;
        acc = acc + rsub(1.0, div(inter * 2.0 + smooth, denom));
    }
    return acc * (1.0 / static_cast<double>(num_classes - 1));
}

Tensor cup_loss(const Tensor& belief, const Tensor& uncertainty, const Tensor& y,
                const Tensor& pred, const Tensor& label, double beta_t) {
    check_onehot_shapes(belief, y, "cup_loss");
    if (uncertainty.shape() != pred.shape() || pred.shape() != label.shape()) {
        throw std::invalid_argument("cup_loss: per-pixel shapes disagree");
    }
    if (uncertainty.dim(0) != belief.dim(0) || uncertainty.dim(2) != belief.dim(2) ||
        uncertainty.dim(3) != belief.dim(3) || uncertainty.dim(1) != 1) {
        throw std::invalid_argument("cup_loss: uncertainty must be [N,1,H,W] matching belief");
    }
    const double num_classes = static_cast<double>(belief.dim(1));
    const double pixels = static_cast<double>(uncertainty.numel());

    Tensor accurate = equal_mask(pred, label);  // constant {0,1} mask
    Tensor u = clamp(uncertainty, kLogEps, 1.0 - kLogEps);
    Tensor b_sum = sum_channels(clamp(belief, kLogEps, 1.0 - kLogEps));

    Tensor acc_term = sum(mul(accurate, mul(b_sum, log(rsub(1.0, u)))));
    Tensor inacc_term =
        sum(mul(rsub(1.0, accurate), mul(rsub(num_classes, b_sum), log(u))));
    return (acc_term * (-beta_t) + inacc_term * (beta_t - 1.0)) * (1.0 / pixels);
}

double anneal(long t, long total_epochs, double beta0) {
    if (total_epochs < 1) throw std::invalid_argument("anneal: total_epochs must be >= 1");
    if (t < 0 || t > total_epochs) throw std::invalid_argument("anneal: t outside [0, T]");
    return std::pow(beta0, 1.0 - static_cast<double>(t) / static_cast<double>(total_epochs));
}

double cup_metric(const Tensor& uncertainty, const Tensor& pred, const Tensor& label,
                  double certainty_threshold) {
    if (uncertainty.shape() != pred.shape() || pred.shape() != label.shape()) {
        throw std::invalid_argument("cup_metric: shape mismatch");
    }
    if (uncertainty.numel() == 0) throw std::invalid_argument("cup_metric: empty input");
    std::span<const double> u = uncertainty.values(), p = pred.values(), l = label.values();
    std::size_t n_ac = 0, n_au = 0, n_ic = 0, n_iu = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const bool accurate = p[i] == l[i];
        const bool certain = u[i] < certainty_threshold;
        if (accurate && certain) ++n_ac;
        else if (accurate) ++n_au;
        else if (certain) ++n_ic;
        else ++n_iu;
    }
    return static_cast<double>(n_ac + n_iu) / static_cast<double>(u.size());
}

namespace {

// Log-weighted proxy masses of the four accuracy/certainty cells,
// reported alongside the trained two-term penalty.
void proxy_masses(const Tensor& belief, const Tensor& uncertainty, const Tensor& pred,
                  const Tensor& label, LossReport& report) {
    std::span<const double> b = belief.values(), u = uncertainty.values(),
                            p = pred.values(), l = label.values();
    const std::size_t c = belief.dim(1);
    const std::size_t n = belief.dim(0), hw = belief.dim(2) * belief.dim(3);
    for (std::size_t img = 0; img < n; ++img)
        for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t pix = img * hw + i;
            const double uc = std::min(std::max(u[pix], kLogEps), 1.0 - kLogEps);
            const double log_u = std::log(uc), log_1mu = std::log1p(-uc);
            double b_sum = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) b_sum += b[(img * c + ch) * hw + i];
            if (p[pix] == l[pix]) {
                report.n_ac += b_sum * log_u;
                report.n_au += b_sum * log_1mu;
            } else {
                report.n_ic += (double(c) - b_sum) * log_u;
                report.n_iu += (double(c) - b_sum) * log_1mu;
            }
        }
}

}  // namespace

LossReport total_loss(const Opinion& opinion, const Tensor& y, const Tensor& label,
                      long t, const LossConfig& cfg) {
    cfg.validate();
    LossReport report;
    report.beta_t = anneal(t, cfg.total_epochs, cfg.beta0);

    Tensor pred = predict(opinion);
    Tensor ice = ice_loss(opinion.alpha, y);
    Tensor kl = kl_to_uniform(opinion.alpha, y);
    Tensor dice = soft_dice_loss(opinion.belief, y, cfg.dice_smooth);
    Tensor cup = cup_loss(opinion.belief, opinion.uncertainty, y, pred, label,
                          report.beta_t);

    const double dice_weight = cfg.anneal_dice ? 1.0 - report.beta_t : 1.0;
    report.objective = ice + kl * cfg.lambda_kl + dice * dice_weight + cup;

    report.ice = ice.item();
    report.kl = kl.item();
    report.dice = dice.item();
    report.cup = cup.item();
    report.total = report.objective.item();
    proxy_masses(opinion.belief, opinion.uncertainty, pred, label, report);
    return report;
}

std::vector<double> grad_oracle_le(const std::vector<double>& alpha,
                                   const std::vector<double>& y, double lambda) {
    if (alpha.size() != y.size() || alpha.empty()) {
        throw std::invalid_argument("grad_oracle_le: dimension mismatch");
    }
    const double num_classes = static_cast<double>(alpha.size());
    double alpha0 = 0.0;
    for (double a : alpha) alpha0 += a;
    const double tg0 = trigamma(alpha0);
    std::vector<double> grad(alpha.size());
    for (std::size_t c = 0; c < alpha.size(); ++c) {
        grad[c] = trigamma(alpha[c]) * (-y[c] + lambda * (alpha[c] - 1.0)) +
                  tg0 * (-lambda * (alpha0 - num_classes) + y[c]);
    }
    return grad;
}

Tensor one_hot(const Tensor& label, std::size_t num_classes) {
    if (label.rank() != 4 || label.dim(1) != 1) {
        throw std::invalid_argument("one_hot: expected [N,1,H,W] labels, got " +
                                    shape_str(label.shape()));
    }
    const std::size_t n = label.dim(0), hw = label.dim(2) * label.dim(3);
    std::span<const double> lv = label.values();
    std::vector<double> out(n * num_classes * hw, 0.0);
    for (std::size_t img = 0; img < n; ++img)
        for (std::size_t i = 0; i < hw; ++i) {
            const double v = lv[img * hw + i];
            const auto c = static_cast<long long>(v);
            if (v != static_cast<double>(c) || c < 0 ||
                c >= static_cast<long long>(num_classes)) {
                throw std::invalid_argument("one_hot: label " + std::to_string(v) +
                                            " outside [0, " + std::to_string(num_classes) +
                                            ")");
            }
            out[(img * num_classes + static_cast<std::size_t>(c)) * hw + i] = 1.0;
        }
    return Tensor::from({n, num_classes, label.dim(2), label.dim(3)}, std::move(out));
}

}  // namespace eviseg
