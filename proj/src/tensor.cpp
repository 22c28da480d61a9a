#include "eviseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "eviseg/special.hpp"

namespace eviseg {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace detail {
void Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}
}  // namespace detail

using detail::Node;

namespace {

thread_local int g_no_grad_depth = 0;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
    if (shape_numel(shape) != value.size()) {
        throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                    " does not match " + std::to_string(value.size()) +
                                    " values");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

bool any_requires_grad(const std::vector<Tensor>& parents) {
    for (const auto& p : parents) {
        if (p.requires_grad()) return true;
    }
    return false;
}

Tensor make_op(Shape shape, std::vector<double> value,
               const std::vector<Tensor>& parents,
               std::function<void(Node&)> backprop) {
    auto n = new_node(std::move(shape), std::move(value));
    if (grad_enabled() && any_requires_grad(parents)) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor::wrap(std::move(n));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void check_rank4(const Tensor& a, const char* op) {
    if (a.rank() != 4) {
        throw std::invalid_argument(std::string(op) + ": expected rank-4 tensor, got " +
                                    shape_str(a.shape()));
    }
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Elementwise unary helper: fwd(value) and dfdx(x, y) for the local slope.
template <typename F, typename G>
Tensor unary_op(const Tensor& a, F&& fwd, G&& dfdx) {
    std::span<const double> av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return make_op(a.shape(), std::move(out), {a}, [dfdx](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double* g = self.grad.data();
        const double* x = p.value.data();
        const double* y = self.value.data();
        double* px = p.grad.data();
        for (std::size_t i = 0; i < self.value.size(); ++i) px[i] += g[i] * dfdx(x[i], y[i]);
    });
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    return wrap(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return wrap(new_node(std::move(shape), std::move(v)));
}

Tensor Tensor::full(Shape shape, double x) {
    std::vector<double> v(shape_numel(shape), x);
    return wrap(new_node(std::move(shape), std::move(v)));
}

Tensor Tensor::scalar(double x) { return full({1}, x); }

Tensor Tensor::wrap(std::shared_ptr<Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

const Shape& Tensor::shape() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->numel() : 0; }

std::span<const double> Tensor::values() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return {node_->value.data(), node_->value.size()};
}

std::span<double> Tensor::values_mut() {
    if (!node_) throw std::logic_error("tensor: undefined");
    return {node_->value.data(), node_->value.size()};
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("tensor: item() requires a scalar, got " +
                                    shape_str(shape()));
    }
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!node_) throw std::logic_error("tensor: undefined");
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!node_ || node_->grad.empty()) {
        throw std::logic_error("tensor: gradient not populated");
    }
    return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    if (!node_) return Tensor();
    return from(node_->shape, node_->value);
}

// ---- grad mode ----

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// ---- tape / backward ----

ComputationTape::ComputationTape(const std::shared_ptr<Node>& root) {
    // Iterative post-order DFS: parents precede children in order_.
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order_.push_back(node);
            stack.pop_back();
        }
    }
}

void ComputationTape::zero_interior_grads() {
    for (Node* node : order_) {
        if (!node->parents.empty()) {
            std::fill(node->grad.begin(), node->grad.end(), 0.0);
        }
    }
}

void ComputationTape::replay_backward() {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward: loss is not tracked by any graph");
    }
    auto root = loss.node();
    ComputationTape tape(root);
    tape.zero_interior_grads();
    root->ensure_grad();
    root->grad[0] += 1.0;
    tape.replay_backward();
}

// ---- elementwise binary ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::span<const double> av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const double* g = self.grad.data();
        for (int k = 0; k < 2; ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            double* pg = p.grad.data();
            for (std::size_t i = 0; i < self.value.size(); ++i) pg[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::span<const double> av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const double* g = self.grad.data();
        Node& pa = *self.parents[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.value.size(); ++i) pa.grad[i] += g[i];
        }
        Node& pb = *self.parents[1];
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.value.size(); ++i) pb.grad[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::span<const double> av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const double* g = self.grad.data();
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double* bx = pb.value.data();
            for (std::size_t i = 0; i < self.value.size(); ++i) pa.grad[i] += g[i] * bx[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            const double* ax = pa.value.data();
            for (std::size_t i = 0; i < self.value.size(); ++i) pb.grad[i] += g[i] * ax[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    std::span<const double> av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
    return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        const double* g = self.grad.data();
        const double* y = self.value.data();
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* bx = pb.value.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.value.size(); ++i) pa.grad[i] += g[i] / bx[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.value.size(); ++i)
                pb.grad[i] -= g[i] * y[i] / bx[i];
        }
    });
}

Tensor add(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x + s; },
                    [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x * s; },
                    [s](double, double) { return s; });
}

Tensor rsub(double s, const Tensor& a) {
    return unary_op(a, [s](double x) { return s - x; },
                    [](double, double) { return -1.0; });
}

Tensor neg(const Tensor& a) {
    return unary_op(a, [](double x) { return -x; },
                    [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
    // ln(1+e^x); for x > 0 rewritten as x + ln(1+e^-x) so large inputs
    // neither overflow nor lose the asymptote.
    return unary_op(a,
                    [](double x) {
                        return x > 0.0 ? x + std::log1p(std::exp(-x))
                                       : std::log1p(std::exp(x));
                    },
                    [](double x, double) { return sigmoid(x); });
}

Tensor digamma(const Tensor& a) {
    return unary_op(a, [](double x) { return eviseg::digamma(x); },
                    [](double x, double) { return eviseg::trigamma(x); });
}

Tensor lgamma(const Tensor& a) {
    return unary_op(a, [](double x) { return eviseg::lgamma(x); },
                    [](double x, double) { return eviseg::digamma(x); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
    return unary_op(a,
                    [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---- comparisons / selection ----

Tensor greater(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "greater");
    std::span<const double> av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > bv[i] ? 1.0 : 0.0;
    return Tensor::from(a.shape(), std::move(out));
}

Tensor equal_mask(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "equal_mask");
    std::span<const double> av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] == bv[i] ? 1.0 : 0.0;
    return Tensor::from(a.shape(), std::move(out));
}

Tensor select(const Tensor& mask, const Tensor& a, const Tensor& b) {
    check_same_shape(mask, a, "select");
    check_same_shape(a, b, "select");
    std::span<const double> mv = mask.values(), av = a.values(), bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = mv[i] != 0.0 ? av[i] : bv[i];
    return make_op(a.shape(), std::move(out), {mask, a, b}, [](Node& self) {
        const double* g = self.grad.data();
        const double* m = self.parents[0]->value.data();
        Node& pa = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.value.size(); ++i)
                if (m[i] != 0.0) pa.grad[i] += g[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.value.size(); ++i)
                if (m[i] == 0.0) pb.grad[i] += g[i];
        }
    });
}

// ---- reductions & shape ops ----

Tensor sum(const Tensor& a) {
    std::span<const double> av = a.values();
    double acc = 0.0;
    for (double x : av) acc += x;
    return make_op({1}, {acc}, {a}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += g;
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    std::span<const double> av = a.values();
    double acc = 0.0;
    for (double x : av) acc += x;
    const double inv = 1.0 / static_cast<double>(av.size());
    return make_op({1}, {acc * inv}, {a}, [inv](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const double g = self.grad[0] * inv;
        for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += g;
    });
}

Tensor sum_channels(const Tensor& a) {
    check_rank4(a, "sum_channels");
    const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    std::span<const double> av = a.values();
    std::vector<double> out(n * hw, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* src = av.data() + (b * c + ch) * hw;
            double* dst = out.data() + b * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
    return make_op({n, 1, a.dim(2), a.dim(3)}, std::move(out), {a},
                   [n, c, hw](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t ch = 0; ch < c; ++ch) {
                               const double* g = self.grad.data() + b * hw;
                               double* dst = p.grad.data() + (b * c + ch) * hw;
                               for (std::size_t i = 0; i < hw; ++i) dst[i] += g[i];
                           }
                   });
}

Tensor repeat_channels(const Tensor& a, std::size_t c) {
    check_rank4(a, "repeat_channels");
    if (a.dim(1) != 1) {
        throw std::invalid_argument("repeat_channels: expected channel dim 1, got " +
                                    shape_str(a.shape()));
    }
    const std::size_t n = a.dim(0), hw = a.dim(2) * a.dim(3);
    std::span<const double> av = a.values();
    std::vector<double> out(n * c * hw);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* src = av.data() + b * hw;
            double* dst = out.data() + (b * c + ch) * hw;
            std::copy(src, src + hw, dst);
        }
    return make_op({n, c, a.dim(2), a.dim(3)}, std::move(out), {a},
                   [n, c, hw](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t ch = 0; ch < c; ++ch) {
                               const double* g = self.grad.data() + (b * c + ch) * hw;
                               double* dst = p.grad.data() + b * hw;
                               for (std::size_t i = 0; i < hw; ++i) dst[i] += g[i];
                           }
                   });
}

Tensor slice_channel(const Tensor& a, std::size_t c) {
    check_rank4(a, "slice_channel");
    if (c >= a.dim(1)) throw std::invalid_argument("slice_channel: channel out of range");
    const std::size_t n = a.dim(0), cs = a.dim(1), hw = a.dim(2) * a.dim(3);
    std::span<const double> av = a.values();
    std::vector<double> out(n * hw);
    for (std::size_t b = 0; b < n; ++b) {
        const double* src = av.data() + (b * cs + c) * hw;
        std::copy(src, src + hw, out.data() + b * hw);
    }
    return make_op({n, 1, a.dim(2), a.dim(3)}, std::move(out), {a},
                   [n, cs, c, hw](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t b = 0; b < n; ++b) {
                           const double* g = self.grad.data() + b * hw;
                           double* dst = p.grad.data() + (b * cs + c) * hw;
                           for (std::size_t i = 0; i < hw; ++i) dst[i] += g[i];
                       }
                   });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check_rank4(a, "concat_channels");
    check_rank4(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw std::invalid_argument("concat_channels: incompatible shapes " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1),
                      hw = a.dim(2) * a.dim(3);
    std::span<const double> av = a.values(), bv = b.values();
    std::vector<double> out(n * (ca + cb) * hw);
    for (std::size_t batch = 0; batch < n; ++batch) {
        std::copy(av.data() + batch * ca * hw, av.data() + (batch + 1) * ca * hw,
                  out.data() + batch * (ca + cb) * hw);
        std::copy(bv.data() + batch * cb * hw, bv.data() + (batch + 1) * cb * hw,
                  out.data() + (batch * (ca + cb) + ca) * hw);
    }
    return make_op({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                   [n, ca, cb, hw](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       for (std::size_t batch = 0; batch < n; ++batch) {
                           const double* g = self.grad.data() + batch * (ca + cb) * hw;
                           if (pa.requires_grad) {
                               pa.ensure_grad();
                               double* dst = pa.grad.data() + batch * ca * hw;
                               for (std::size_t i = 0; i < ca * hw; ++i) dst[i] += g[i];
                           }
                           if (pb.requires_grad) {
                               pb.ensure_grad();
                               double* dst = pb.grad.data() + batch * cb * hw;
                               for (std::size_t i = 0; i < cb * hw; ++i)
                                   dst[i] += g[ca * hw + i];
                           }
                       }
                   });
}

Tensor max_channels(const Tensor& a) {
    check_rank4(a, "max_channels");
    const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    std::span<const double> av = a.values();
    std::vector<double> out(n * hw);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
            double best = av[(b * c) * hw + i];
            for (std::size_t ch = 1; ch < c; ++ch)
                best = std::max(best, av[(b * c + ch) * hw + i]);
            out[b * hw + i] = best;
        }
    return Tensor::from({n, 1, a.dim(2), a.dim(3)}, std::move(out));
}

Tensor argmax_channels(const Tensor& a) {
    check_rank4(a, "argmax_channels");
    const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    std::span<const double> av = a.values();
    std::vector<double> out(n * hw);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
            std::size_t best = 0;
            double bestv = av[(b * c) * hw + i];
            for (std::size_t ch = 1; ch < c; ++ch) {
                const double v = av[(b * c + ch) * hw + i];
                if (v > bestv) {  // ties keep the lowest class index
                    bestv = v;
                    best = ch;
                }
            }
            out[b * hw + i] = static_cast<double>(best);
        }
    return Tensor::from({n, 1, a.dim(2), a.dim(3)}, std::move(out));
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::span<const double> av = a.values(), bv = b.values();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double x = av[i * k + kk];
            const double* brow = bv.data() + kk * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    return make_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* g = self.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double* bvx = pb.value.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += g[i * n + j] * bvx[kk * n + j];
                    pa.grad[i * k + kk] += acc;
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            const double* avx = pa.value.data();
            for (std::size_t kk = 0; kk < k; ++kk)
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = avx[i * k + kk];
                    for (std::size_t j = 0; j < n; ++j)
                        pb.grad[kk * n + j] += x * g[i * n + j];
                }
        }
    });
}

// ---- conv / pool / upsample ----

namespace {
// Output-row range [lo, hi) for which the input row oh + d stays inside
// [0, in_size); hi is also capped by the output size.
inline std::pair<long, long> conv_bounds(long d, long in_size, long out_size) {
    const long lo = std::max<long>(0, -d);
    const long hi = std::min<long>(out_size, in_size - d);
    return {lo, std::max(lo, hi)};
}
}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t padding) {
    check_rank4(x, "conv2d");
    check_rank4(w, "conv2d");
    if (x.dim(1) != w.dim(1)) {
        throw std::invalid_argument("conv2d: input channels " + shape_str(x.shape()) +
                                    " do not match kernel " + shape_str(w.shape()));
    }
    const std::size_t N = x.dim(0), CI = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t CO = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    if (H + 2 * padding < KH || W + 2 * padding < KW) {
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    }
    const std::size_t OH = H + 2 * padding - KH + 1, OW = W + 2 * padding - KW + 1;
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != CO)) {
        throw std::invalid_argument("conv2d: bias shape must be [out_channels]");
    }

    std::span<const double> xv = x.values(), wv = w.values();
    std::vector<double> out(N * CO * OH * OW, 0.0);
    const long p = static_cast<long>(padding);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < CO; ++co) {
            double* oplane = out.data() + (n * CO + co) * OH * OW;
            if (bias.defined()) {
                const double b = bias.values()[co];
                for (std::size_t i = 0; i < OH * OW; ++i) oplane[i] = b;
            }
            for (std::size_t ci = 0; ci < CI; ++ci) {
                const double* iplane = xv.data() + (n * CI + ci) * H * W;
                const double* kplane = wv.data() + (co * CI + ci) * KH * KW;
                for (std::size_t kh = 0; kh < KH; ++kh)
                    for (std::size_t kw = 0; kw < KW; ++kw) {
                        const double kval = kplane[kh * KW + kw];
                        if (kval == 0.0) continue;
                        const long dh = static_cast<long>(kh) - p;
                        const long dw = static_cast<long>(kw) - p;
                        const auto [oh0, oh1] = conv_bounds(dh, H, OH);
                        const auto [ow0, ow1] = conv_bounds(dw, W, OW);
                        for (long oh = oh0; oh < oh1; ++oh) {
                            const double* irow = iplane + (oh + dh) * W + dw;
                            double* orow = oplane + oh * OW;
                            for (long ow = ow0; ow < ow1; ++ow)
                                orow[ow] += kval * irow[ow];
                        }
                    }
            }
        }

    std::vector<Tensor> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    return make_op({N, CO, OH, OW}, std::move(out), parents,
                   [N, CI, H, W, CO, KH, KW, OH, OW, p](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        const double* g = self.grad.data();
        if (px.requires_grad) {
            px.ensure_grad();
            const double* wx = pw.value.data();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t co = 0; co < CO; ++co) {
                    const double* gplane = g + (n * CO + co) * OH * OW;
                    for (std::size_t ci = 0; ci < CI; ++ci) {
                        double* iplane = px.grad.data() + (n * CI + ci) * H * W;
                        const double* kplane = wx + (co * CI + ci) * KH * KW;
                        for (std::size_t kh = 0; kh < KH; ++kh)
                            for (std::size_t kw = 0; kw < KW; ++kw) {
                                const double kval = kplane[kh * KW + kw];
                                if (kval == 0.0) continue;
                                const long dh = static_cast<long>(kh) - p;
                                const long dw = static_cast<long>(kw) - p;
                                const auto [oh0, oh1] = conv_bounds(dh, H, OH);
                                const auto [ow0, ow1] = conv_bounds(dw, W, OW);
                                for (long oh = oh0; oh < oh1; ++oh) {
                                    double* irow = iplane + (oh + dh) * W + dw;
                                    const double* grow = gplane + oh * OW;
                                    for (long ow = ow0; ow < ow1; ++ow)
                                        irow[ow] += kval * grow[ow];
                                }
                            }
                    }
                }
        }
        if (pw.requires_grad) {
            pw.ensure_grad();
            const double* xv2 = px.value.data();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t co = 0; co < CO; ++co) {
                    const double* gplane = g + (n * CO + co) * OH * OW;
                    for (std::size_t ci = 0; ci < CI; ++ci) {
                        const double* iplane = xv2 + (n * CI + ci) * H * W;
                        double* kplane = pw.grad.data() + (co * CI + ci) * KH * KW;
                        for (std::size_t kh = 0; kh < KH; ++kh)
                            for (std::size_t kw = 0; kw < KW; ++kw) {
                                const long dh = static_cast<long>(kh) - p;
                                const long dw = static_cast<long>(kw) - p;
                                const auto [oh0, oh1] = conv_bounds(dh, H, OH);
                                const auto [ow0, ow1] = conv_bounds(dw, W, OW);
                                double acc = 0.0;
                                for (long oh = oh0; oh < oh1; ++oh) {
                                    const double* irow = iplane + (oh + dh) * W + dw;
                                    const double* grow = gplane + oh * OW;
                                    for (long ow = ow0; ow < ow1; ++ow)
                                        acc += irow[ow] * grow[ow];
                                }
                                kplane[kh * KW + kw] += acc;
                            }
                    }
                }
        }
        if (self.parents.size() > 2) {
            Node& pb = *self.parents[2];
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t co = 0; co < CO; ++co) {
                        const double* gplane = g + (n * CO + co) * OH * OW;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < OH * OW; ++i) acc += gplane[i];
                        pb.grad[co] += acc;
                    }
            }
        }
    });
}

Tensor max_pool2d(const Tensor& x) {
    check_rank4(x, "max_pool2d");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) {
        throw std::invalid_argument("max_pool2d: spatial dims must be even, got " +
                                    shape_str(x.shape()));
    }
    const std::size_t OH = H / 2, OW = W / 2;
    std::span<const double> xv = x.values();
    std::vector<double> out(N * C * OH * OW);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* iplane = xv.data() + nc * H * W;
        double* oplane = out.data() + nc * OH * OW;
        std::uint32_t* aplane = argmax->data() + nc * OH * OW;
        for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
                const std::size_t base = (2 * oh) * W + 2 * ow;
                std::size_t besti = base;
                double best = iplane[base];
                const std::size_t cand[3] = {base + 1, base + W, base + W + 1};
                for (std::size_t k = 0; k < 3; ++k)
                    if (iplane[cand[k]] > best) {
                        best = iplane[cand[k]];
                        besti = cand[k];
                    }
                oplane[oh * OW + ow] = best;
                aplane[oh * OW + ow] = static_cast<std::uint32_t>(besti);
            }
    }
    return make_op({N, C, OH, OW}, std::move(out), {x},
                   [argmax, H, W, OH, OW](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       const std::size_t planes = self.value.size() / (OH * OW);
                       for (std::size_t nc = 0; nc < planes; ++nc) {
                           const double* g = self.grad.data() + nc * OH * OW;
                           const std::uint32_t* a = argmax->data() + nc * OH * OW;
                           double* dst = p.grad.data() + nc * H * W;
                           for (std::size_t i = 0; i < OH * OW; ++i) dst[a[i]] += g[i];
                       }
                   });
}

Tensor upsample_nearest2(const Tensor& x) {
    check_rank4(x, "upsample_nearest2");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = 2 * H, OW = 2 * W;
    std::span<const double> xv = x.values();
    std::vector<double> out(N * C * OH * OW);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* iplane = xv.data() + nc * H * W;
        double* oplane = out.data() + nc * OH * OW;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                const double v = iplane[h * W + w];
                double* o = oplane + (2 * h) * OW + 2 * w;
                o[0] = v;
                o[1] = v;
                o[OW] = v;
                o[OW + 1] = v;
            }
    }
    return make_op({N, C, OH, OW}, std::move(out), {x}, [H, W, OH, OW](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const std::size_t planes = self.value.size() / (OH * OW);
        for (std::size_t nc = 0; nc < planes; ++nc) {
            const double* g = self.grad.data() + nc * OH * OW;
            double* dst = p.grad.data() + nc * H * W;
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w) {
                    const double* gq = g + (2 * h) * OW + 2 * w;
                    dst[h * W + w] += gq[0] + gq[1] + gq[OW] + gq[OW + 1];
                }
        }
    });
}

}  // namespace eviseg
