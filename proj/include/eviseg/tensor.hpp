#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace eviseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily; empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates into the parents' grad buffers given this node's grad.
    std::function<void(Node&)> backprop;

    std::size_t numel() const { return value.size(); }
    void ensure_grad();
};

}  // namespace detail

// Dense row-major f64 array with optional reverse-mode gradient tracking.
// Value-semantic handle; the underlying node is shared, so copies alias.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t i) const { return shape().at(i); }

    std::span<const double> values() const;
    // Writable view; only valid for tensors that are not part of a graph.
    std::span<double> values_mut();
    double item() const;  // requires numel() == 1

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();
    Tensor detach() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

// While alive on a thread, newly created ops record no graph. Used for
// inference passes where gradients are never needed.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// The ordered record of operations reachable from one root, in a valid
// topological order; replaying it in reverse drives the backward pass.
class ComputationTape {
public:
    explicit ComputationTape(const std::shared_ptr<detail::Node>& root);
    // Interior grad buffers are scratch per replay; leaf grads accumulate
    // across replays until explicitly zeroed.
    void zero_interior_grads();
    void replay_backward();
    std::size_t size() const { return order_.size(); }

private:
    std::vector<detail::Node*> order_;
};

// Runs reverse-mode accumulation from a scalar loss. Grad buffers are
// accumulated additively; call zero_grad between steps.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);
Tensor rsub(double s, const Tensor& a);  // s - a
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor digamma(const Tensor& a);
Tensor lgamma(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return rsub(s, a); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- comparisons / selection (masks carry no gradient) ----
Tensor greater(const Tensor& a, const Tensor& b);
Tensor equal_mask(const Tensor& a, const Tensor& b);
Tensor select(const Tensor& mask, const Tensor& a, const Tensor& b);

// ---- reductions & shape ops ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [N,C,H,W] -> [N,1,H,W]
Tensor sum_channels(const Tensor& a);
// [N,1,H,W] -> [N,C,H,W]
Tensor repeat_channels(const Tensor& a, std::size_t c);
Tensor slice_channel(const Tensor& a, std::size_t c);
Tensor concat_channels(const Tensor& a, const Tensor& b);
// non-differentiable per-pixel reductions over the class axis
Tensor max_channels(const Tensor& a);
Tensor argmax_channels(const Tensor& a);

// ---- linear algebra / nn primitives ----
Tensor matmul(const Tensor& a, const Tensor& b);
// x [N,Cin,H,W], w [Cout,Cin,KH,KW], bias [Cout] (may be undefined), stride 1
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t padding);
Tensor max_pool2d(const Tensor& x);        // 2x2 window, stride 2
Tensor upsample_nearest2(const Tensor& x); // factor 2

}  // namespace eviseg
