#include "eviseg/backbone.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "eviseg/evidential.hpp"
#include "eviseg/tensor_io.hpp"

namespace eviseg {

void BackboneConfig::validate() const {
    if (in_channels < 1) throw std::invalid_argument("backbone: in_channels must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("backbone: num_classes must be >= 2");
    if (base_width < 1) throw std::invalid_argument("backbone: base_width must be >= 1");
    if (depth < 1 || depth > 3) throw std::invalid_argument("backbone: depth must be 1..3");
}

const Tensor& ModelState::param(const std::string& name) const {
    for (const auto& [key, value] : params) {
        if (key == name) return value;
    }
    throw std::logic_error("model: unknown parameter " + name);
}

void ModelState::zero_grad() {
    for (auto& [key, value] : params) value.zero_grad();
}

std::size_t ModelState::num_scalars() const {
    std::size_t n = 0;
    for (const auto& [key, value] : params) n += value.numel();
    return n;
}

namespace {

struct ConvSpec {
    std::string name;
    std::size_t in, out, k;
};

// The conv layers of the network in forward order.
std::vector<ConvSpec> layer_plan(const BackboneConfig& cfg) {
    std::vector<ConvSpec> plan;
    std::vector<std::size_t> widths(cfg.depth + 1);
    for (std::size_t i = 0; i <= cfg.depth; ++i) widths[i] = cfg.base_width << i;

    std::size_t prev = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        plan.push_back({"enc" + std::to_string(i) + ".conv1", prev, widths[i], 3});
        plan.push_back({"enc" + std::to_string(i) + ".conv2", widths[i], widths[i], 3});
        prev = widths[i];
    }
    plan.push_back({"bottleneck.conv1", prev, widths[cfg.depth], 3});
    plan.push_back({"bottleneck.conv2", widths[cfg.depth], widths[cfg.depth], 3});
    prev = widths[cfg.depth];
    for (std::size_t i = cfg.depth; i-- > 0;) {
        plan.push_back({"dec" + std::to_string(i) + ".conv1", prev + widths[i], widths[i], 3});
        plan.push_back({"dec" + std::to_string(i) + ".conv2", widths[i], widths[i], 3});
        prev = widths[i];
    }
    plan.push_back({"head", prev, cfg.num_classes, 1});
    return plan;
}

}  // namespace

std::size_t expected_num_scalars(const BackboneConfig& config) {
    std::size_t n = 0;
    for (const auto& spec : layer_plan(config)) {
        n += spec.out * spec.in * spec.k * spec.k + spec.out;
    }
    return n;
}

ModelState init_backbone(const BackboneConfig& config) {
    config.validate();
    ModelState state;
    state.config = config;
    Rng rng(mix_seed(config.seed, 0x6d6f64656cull));  // independent init stream
    for (const auto& spec : layer_plan(config)) {
        const std::size_t fan_in = spec.in * spec.k * spec.k;
        const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        std::vector<double> w(spec.out * spec.in * spec.k * spec.k);
        for (auto& v : w) v = std_dev * rng.next_normal();
        Tensor wt = Tensor::from({spec.out, spec.in, spec.k, spec.k}, std::move(w));
        wt.set_requires_grad(true);
        state.params.emplace_back(spec.name + ".w", std::move(wt));
        Tensor bt = Tensor::zeros({spec.out});
        bt.set_requires_grad(true);
        state.params.emplace_back(spec.name + ".b", std::move(bt));
    }
    return state;
}

namespace {

Tensor conv_block(const Tensor& x, const ModelState& state, const std::string& name) {
    Tensor h = relu(conv2d(x, state.param(name + ".conv1.w"), state.param(name + ".conv1.b"), 1));
    return relu(conv2d(h, state.param(name + ".conv2.w"), state.param(name + ".conv2.b"), 1));
}

}  // namespace

Tensor backbone_forward(const Tensor& x, const ModelState& state) {
    const BackboneConfig& cfg = state.config;
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels) {
        throw std::invalid_argument("backbone: expected input [N," +
                                    std::to_string(cfg.in_channels) + ",H,W], got " +
                                    shape_str(x.shape()));
    }
    const std::size_t stride = 1ull << cfg.depth;
    if (x.dim(2) % stride != 0 || x.dim(3) % stride != 0) {
        throw std::invalid_argument("backbone: spatial dims of " + shape_str(x.shape()) +
                                    " must be divisible by " + std::to_string(stride));
    }

    std::vector<Tensor> skips;
    Tensor h = x;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        h = conv_block(h, state, "enc" + std::to_string(i));
        skips.push_back(h);
        h = max_pool2d(h);
    }
    h = conv_block(h, state, "bottleneck");
    for (std::size_t i = cfg.depth; i-- > 0;) {
        h = upsample_nearest2(h);
        h = concat_channels(h, skips[i]);
        h = conv_block(h, state, "dec" + std::to_string(i));
    }
    return conv2d(h, state.param("head.w"), state.param("head.b"), 0);
}

// ---- Adam ----

Adam::Adam(const ModelState& state, AdamConfig config) : config_(config) {
    if (config_.max_iter < 1) throw std::invalid_argument("adam: max_iter must be >= 1");
    m_.reserve(state.params.size());
    v_.reserve(state.params.size());
    for (const auto& [name, p] : state.params) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

double Adam::current_lr() const {
    const double frac = std::min(1.0, static_cast<double>(iter_) /
                                          static_cast<double>(config_.max_iter));
    return config_.lr * std::pow(1.0 - frac, config_.poly_power);
}

void Adam::step(ModelState& state) {
    if (state.params.size() != m_.size()) {
        throw std::logic_error("adam: optimizer bound to a different model");
    }
    const double lr = current_lr();
    ++iter_;
    const double t = static_cast<double>(iter_);
    const double bias1 = 1.0 - std::pow(config_.beta1, t);
    const double bias2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t k = 0; k < state.params.size(); ++k) {
        Tensor& p = state.params[k].second;
        if (!p.has_grad()) continue;
        std::span<const double> g = p.grad();
        std::span<double> w = p.values_mut();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bias1;
            const double vhat = v[i] / bias2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

// ---- loss plumbing ----

LossFn make_evidential_loss(const LossConfig& config, std::size_t num_classes) {
    config.validate();
    return [config, num_classes](const Tensor& logits, const Tensor& label, long epoch) {
        Tensor evidence = evidence_from_logits(logits);
        Opinion opinion = opinion_from_evidence(evidence, num_classes);
        Tensor y = one_hot(label, num_classes);
        return total_loss(opinion, y, label, epoch, config);
    };
}

LossReport train_step(const Tensor& x, const Tensor& label, ModelState& state,
                      Adam& optimizer, const LossFn& loss_fn, long epoch) {
    Tensor logits = backbone_forward(x, state);
    LossReport report = loss_fn(logits, label, epoch);
    if (!std::isfinite(report.total)) {
        throw std::runtime_error("train_step: non-finite loss at step " +
                                 std::to_string(state.step) + " (ice=" +
                                 std::to_string(report.ice) + ", kl=" +
                                 std::to_string(report.kl) + ", dice=" +
                                 std::to_string(report.dice) + ", cup=" +
                                 std::to_string(report.cup) + ")");
    }
    state.zero_grad();
    backward(report.objective);
    optimizer.step(state);
    ++state.step;
    return report;
}

// ---- checkpoints ----

void save_checkpoint(const ModelState& state, std::uint64_t rng_state,
                     const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, p] : state.params) {
        std::string file = name;
        for (auto& ch : file)
            if (ch == '.') ch = '_';
        file += ".tns";
        write_tns1(p.detach(), dir + "/" + file);
        params.push_back({{"name", name}, {"file", file}});
    }
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["config"] = {{"in_channels", state.config.in_channels},
                          {"num_classes", state.config.num_classes},
                          {"base_width", state.config.base_width},
                          {"depth", state.config.depth},
                          {"seed", state.config.seed}};
    manifest["step"] = state.step;
    manifest["rng_state"] = rng_state;
    manifest["params"] = params;
    std::ofstream os(dir + "/checkpoint.json");
    if (!os) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

ModelState load_checkpoint(const std::string& dir, std::uint64_t* rng_state) {
    std::ifstream is(dir + "/checkpoint.json");
    if (!is) throw std::runtime_error("checkpoint: cannot open " + dir + "/checkpoint.json");
    nlohmann::json manifest = nlohmann::json::parse(is);
    BackboneConfig config;
    const auto& c = manifest.at("config");
    config.in_channels = c.at("in_channels").get<std::size_t>();
    config.num_classes = c.at("num_classes").get<std::size_t>();
    config.base_width = c.at("base_width").get<std::size_t>();
    config.depth = c.at("depth").get<std::size_t>();
    config.seed = c.at("seed").get<std::uint64_t>();

    ModelState state;
    state.config = config;
    state.step = manifest.at("step").get<long>();
    if (rng_state) *rng_state = manifest.at("rng_state").get<std::uint64_t>();
    for (const auto& entry : manifest.at("params")) {
        Tensor p = read_tns1(dir + "/" + entry.at("file").get<std::string>());
        p.set_requires_grad(true);
        state.params.emplace_back(entry.at("name").get<std::string>(), std::move(p));
    }
    return state;
}

}  // namespace eviseg
