#pragma once

#include <vector>

#include "eviseg/evidential.hpp"
#include "eviseg/tensor.hpp"

namespace eviseg {

struct LossConfig {
    double lambda_kl = 0.02;
    double beta0 = 0.01;
    long total_epochs = 100;
    double dice_smooth = 1e-5;
    bool anneal_dice = true;
    double certainty_threshold = 0.5;

    void validate() const;
};

// Values of every term at one step. `objective` is the tracked scalar the
// optimizer differentiates; the doubles mirror it for logging. The n_*
// fields are the log-weighted accurate/inaccurate x certain/uncertain
// proxy masses, reported verbatim (they are not hard counts).
struct LossReport {
    double ice = 0.0;
    double kl = 0.0;
    double dice = 0.0;
    double cup = 0.0;
    double total = 0.0;
    double beta_t = 0.0;
    double n_ac = 0.0;
    double n_au = 0.0;
    double n_ic = 0.0;
    double n_iu = 0.0;
    Tensor objective;
};

// Evidential cross-entropy: mean over pixels of sum_c y_c (psi(S) - psi(alpha_c)).
// alpha [N,C,H,W] with entries >= 1, y one-hot over the class axis.
Tensor ice_loss(const Tensor& alpha, const Tensor& y);

// KL(Dir(alpha~) || Dir(1)) with alpha~ = y + (1-y) * alpha, mean over pixels.
Tensor kl_to_uniform(const Tensor& alpha, const Tensor& y);

// Soft Dice over belief masses, averaged over foreground classes (class 0
// is background). Sums run over the whole batch per class.
Tensor soft_dice_loss(const Tensor& belief, const Tensor& y, double smooth);

// Calibrated uncertainty penalty: pushes uncertainty down on accurate
// pixels and up on inaccurate ones, annealed by beta_t. `pred` and `label`
// are [N,1,H,W] class ids; u is clamped away from {0,1} before the logs.
Tensor cup_loss(const Tensor& belief, const Tensor& uncertainty, const Tensor& y,
                const Tensor& pred, const Tensor& label, double beta_t);

// beta_t = beta0^(1 - t/T): beta0 at t=0, exactly 1 at t=T, monotone in t.
double anneal(long t, long total_epochs, double beta0);

// Non-differentiable calibration ratio (N_AC + N_IU) / all, with hard
// counts and certain := u < threshold.
double cup_metric(const Tensor& uncertainty, const Tensor& pred, const Tensor& label,
                  double certainty_threshold);

// Combined objective. anneal_dice=true weights Dice by (1 - beta_t);
// false keeps the plain unweighted sum. y is one-hot, label is class ids.
LossReport total_loss(const Opinion& opinion, const Tensor& y, const Tensor& label,
                      long t, const LossConfig& cfg);

// Closed-form gradient of the single-pixel evidential loss (ICE + lambda *
// KL on raw alpha) used purely as a test oracle for the autodiff engine:
//   dL/dalpha_c = psi'(alpha_c) [-y_c + lambda (alpha_c - 1)]
//               + psi'(alpha_0) [-lambda (alpha_0 - C) + y_c].
// The formula is the exact partial for the labeled class; for off-label
// classes it omits the psi'(alpha_0) contribution of the ICE term.
std::vector<double> grad_oracle_le(const std::vector<double>& alpha,
                                   const std::vector<double>& y, double lambda);

// One-hot encoding of [N,1,H,W] class ids into [N,C,H,W].
Tensor one_hot(const Tensor& label, std::size_t num_classes);

}  // namespace eviseg
