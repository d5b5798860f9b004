#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "modfuser/rng.hpp"

namespace modfuser {

// Row-major dense shapes; an empty shape is a scalar (one element).
using Shape = std::vector<int>;

class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;     // empty until first accumulation
    bool requires_grad = false;   // leaf flag; for taped outputs: on the grad path
    Tape* tape = nullptr;         // producing tape, null for leaves
    std::int64_t tape_index = -1;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

// Handle to a shared dense f64 array. Tensors are immutable after creation
// except for gradient accumulation and leaf parameter updates between tapes.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int dim() const;
    std::int64_t size() const;
    bool requires_grad() const;

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();  // leaf updates only; never call on taped tensors
    const std::vector<double>& grad() const;
    void zero_grad();

    double value() const;  // single-element tensors
    double at(const std::vector<int>& index) const;

    Tensor detach() const;
    Tensor clone(bool requires_grad = false) const;

    detail::NodePtr node() const { return node_; }

private:
    detail::NodePtr node_;
};

// Ordered record of operations in execution order; an operation's inputs
// always precede it, so a reverse walk is a valid topological order for
// backpropagation. Single-threaded; independent tapes may coexist on
// different threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }

    struct Entry {
        detail::NodePtr out;
        std::function<void()> backward;
    };
    std::vector<Entry> entries_;
};

// Makes a tape the active recording target for the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

// Propagates d(loss)/d(leaf) into every requires_grad leaf reachable from
// loss. Gradients accumulate additively; the caller zeroes them between
// optimization steps. Intermediate adjoints are released as the walk passes
// them, so backward may be invoked once per recorded loss.
void backward(const Tensor& loss);

// ---- primitives -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);  // numpy-style broadcasting
Tensor sub(const Tensor& a, const Tensor& b);  // broadcasting
Tensor mul(const Tensor& a, const Tensor& b);  // broadcasting
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int length);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// Reduces the last `n_axes` axes to their mean (global average pooling etc.)
Tensor mean_last_axes(const Tensor& a, int n_axes);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope);
Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
Tensor softmax(const Tensor& a, int axis);
// -log softmax(logits)[target]; logits is 1-D
Tensor cross_entropy_logits(const Tensor& logits, int target);

// Cross-correlation (no kernel flip). input [B,Cin,H,W], kernel
// [Cout,Cin,kh,kw]; H' = floor((H + 2*padding - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

// Exact adjoint of conv2d with the same geometry. input [B,Cin,H,W], kernel
// [Cin,Cout,kh,kw]; H' = (H-1)*stride - 2*padding + kh.
Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, int stride, int padding);

// Zero mean / unit variance over the last n_axes axes (population variance,
// eps inside the square root). The building block for layer and instance norm.
Tensor normalize_last_axes(const Tensor& a, int n_axes, double eps);

// Normalization over the last axis followed by the affine map gain*x + bias;
// gain and bias have the length of the last axis.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

}  // namespace modfuser
