#include "eviseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace eviseg {

namespace {

void check_same_dims(const BinaryMask& a, const BinaryMask& b, const char* op) {
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument(std::string(op) + ": mask dimensions disagree");
    }
    if (a.fg.size() != a.numel() || b.fg.size() != b.numel()) {
        throw std::invalid_argument(std::string(op) + ": mask buffer size mismatch");
    }
}

}  // namespace

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    check_same_dims(pred, gt, "dice");
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pred.fg.size(); ++i) {
        const bool p = pred.fg[i] != 0, g = gt.fg[i] != 0;
        np += p;
        ng += g;
        inter += p && g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<std::pair<std::size_t, std::size_t>> boundary_points(const BinaryMask& mask) {
    std::vector<std::pair<std::size_t, std::size_t>> pts;
    const std::size_t h = mask.height, w = mask.width;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            if (!mask.at(r, c)) continue;
            const bool edge = r == 0 || r + 1 == h || c == 0 || c + 1 == w ||
                              !mask.at(r - 1, c) || !mask.at(r + 1, c) ||
                              !mask.at(r, c - 1) || !mask.at(r, c + 1);
            if (edge) pts.emplace_back(r, c);
        }
    return pts;
}

std::vector<std::int64_t> squared_distance_transform(const BinaryMask& mask) {
    // Meijster et al. two-phase exact EDT, integer arithmetic only.
    const std::int64_t h = static_cast<std::int64_t>(mask.height);
    const std::int64_t w = static_cast<std::int64_t>(mask.width);
    const std::int64_t inf = h + w + 1;

    std::vector<std::int64_t> g(mask.numel());
    for (std::int64_t x = 0; x < w; ++x) {
        g[x] = mask.fg[x] ? 0 : inf;
        for (std::int64_t y = 1; y < h; ++y)
            g[y * w + x] = mask.fg[y * w + x] ? 0 : std::min(inf, g[(y - 1) * w + x] + 1);
        for (std::int64_t y = h - 2; y >= 0; --y)
            g[y * w + x] = std::min(g[y * w + x], g[(y + 1) * w + x] + 1);
    }

    std::vector<std::int64_t> dt(mask.numel());
    std::vector<std::int64_t> s(mask.width), t(mask.width);
    auto f = [&](std::int64_t x, std::int64_t i, const std::int64_t* grow) {
        return (x - i) * (x - i) + grow[i] * grow[i];
    };
    auto sep = [&](std::int64_t i, std::int64_t u, const std::int64_t* grow) {
        const std::int64_t num = u * u - i * i + grow[u] * grow[u] - grow[i] * grow[i];
        const std::int64_t den = 2 * (u - i);
        std::int64_t q = num / den;  // floor division: num may be negative
        if (num % den != 0 && num < 0) --q;
        return q;
    };
    std::vector<std::int64_t> grow(mask.width);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) grow[x] = g[y * w + x];
        std::int64_t q = 0;
        s[0] = 0;
        t[0] = 0;
        for (std::int64_t u = 1; u < w; ++u) {
            while (q >= 0 && f(t[q], s[q], grow.data()) > f(t[q], u, grow.data())) --q;
            if (q < 0) {
                q = 0;
                s[0] = u;
            } else {
                const std::int64_t ww = 1 + sep(s[q], u, grow.data());
                if (ww < w) {
                    ++q;
                    s[q] = u;
                    t[q] = ww;
                }
            }
        }
        for (std::int64_t x = w - 1; x >= 0; --x) {
            dt[y * w + x] = f(x, s[q], grow.data());
            if (x == t[q]) --q;
        }
    }
    return dt;
}

double assd(const BinaryMask& pred, const BinaryMask& gt) {
    check_same_dims(pred, gt, "assd");
    auto pts_pred = boundary_points(pred);
    auto pts_gt = boundary_points(gt);
    if (pts_pred.empty() || pts_gt.empty()) {
        throw std::invalid_argument("assd: both masks must be nonempty");
    }

    BinaryMask surf_pred{pred.height, pred.width,
                         std::vector<std::uint8_t>(pred.numel(), 0)};
    for (auto [r, c] : pts_pred) surf_pred.fg[r * pred.width + c] = 1;
    BinaryMask surf_gt{gt.height, gt.width, std::vector<std::uint8_t>(gt.numel(), 0)};
    for (auto [r, c] : pts_gt) surf_gt.fg[r * gt.width + c] = 1;

    const auto dt_to_gt = squared_distance_transform(surf_gt);
    const auto dt_to_pred = squared_distance_transform(surf_pred);

    double total = 0.0;
    for (auto [r, c] : pts_pred)
        total += std::sqrt(static_cast<double>(dt_to_gt[r * gt.width + c]));
    for (auto [r, c] : pts_gt)
        total += std::sqrt(static_cast<double>(dt_to_pred[r * pred.width + c]));
    return total / static_cast<double>(pts_pred.size() + pts_gt.size());
}

double ece(const std::vector<double>& confidence, const std::vector<std::uint8_t>& correct,
           int num_bins) {
    if (confidence.size() != correct.size()) {
        throw std::invalid_argument("ece: confidence/correct size mismatch");
    }
    if (num_bins < 1) throw std::invalid_argument("ece: need at least one bin");
    if (confidence.empty()) return 0.0;

    const std::size_t m = static_cast<std::size_t>(num_bins);
    std::vector<std::size_t> count(m, 0);
    std::vector<double> conf_sum(m, 0.0), acc_sum(m, 0.0);
    for (std::size_t i = 0; i < confidence.size(); ++i) {
        const double c = confidence[i];
        if (c < 0.0 || c > 1.0) throw std::invalid_argument("ece: confidence outside [0,1]");
        // right-closed bins ((k-1)/M, k/M]; confidence 0 lands in the first
        long idx = static_cast<long>(std::ceil(c * static_cast<double>(m))) - 1;
        idx = std::clamp<long>(idx, 0, static_cast<long>(m) - 1);
        count[idx] += 1;
        conf_sum[idx] += c;
        acc_sum[idx] += correct[i] ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(confidence.size());
    double out = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        if (count[k] == 0) continue;
        const double cnt = static_cast<double>(count[k]);
        out += (cnt / n) * std::abs(acc_sum[k] / cnt - conf_sum[k] / cnt);
    }
    return out;
}

std::vector<double> default_ueo_thresholds() {
    std::vector<double> taus;
    for (int i = 1; i <= 19; ++i) taus.push_back(0.05 * i);
    return taus;
}

std::pair<double, double> ueo(const BinaryMask& error_mask, const std::vector<double>& u,
                              const std::vector<double>& thresholds) {
    if (u.size() != error_mask.numel()) {
        throw std::invalid_argument("ueo: uncertainty size does not match mask");
    }
    if (thresholds.empty()) throw std::invalid_argument("ueo: no thresholds");
    double best = -1.0, best_tau = thresholds.front();
    BinaryMask thresholded{error_mask.height, error_mask.width,
                           std::vector<std::uint8_t>(error_mask.numel(), 0)};
    for (double tau : thresholds) {
        for (std::size_t i = 0; i < u.size(); ++i)
            thresholded.fg[i] = u[i] >= tau ? 1 : 0;
        const double overlap = dice(thresholded, error_mask);
        if (overlap > best) {
            best = overlap;
            best_tau = tau;
        }
    }
    return {best, best_tau};
}

void EvalReport::finalize() {
    mean_dice = 0.0;
    mean_ece = 0.0;
    mean_ueo = 0.0;
    mean_uncertainty = 0.0;
    double assd_sum = 0.0;
    std::size_t assd_n = 0;
    for (const auto& img : images) {
        mean_dice += img.dice;
        mean_ece += img.ece;
        mean_ueo += img.ueo;
        mean_uncertainty += img.mean_uncertainty;
        if (img.assd) {
            assd_sum += *img.assd;
            ++assd_n;
        }
    }
    const double n = images.empty() ? 1.0 : static_cast<double>(images.size());
    mean_dice /= n;
    mean_ece /= n;
    mean_ueo /= n;
    mean_uncertainty /= n;
    mean_assd = assd_n ? std::optional<double>(assd_sum / static_cast<double>(assd_n))
                       : std::nullopt;
}

}  // namespace eviseg
