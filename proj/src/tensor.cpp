#include "modfuser/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace modfuser {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

thread_local Tape* g_tape = nullptr;

[[noreturn]] void fail(const std::string& msg) { throw TensorError(msg); }

void check_defined(const char* op, std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (!t->defined()) fail(std::string(op) + ": undefined tensor argument");
}

void check_shape_valid(const char* op, const Shape& s) {
    for (int d : s)
        if (d <= 0) fail(std::string(op) + ": non-positive dimension in " + shape_str(s));
}

Tensor make_out(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return Tensor(std::move(n));
}

// Registers the op on the active tape when gradients can flow through it.
void record(const Tensor& out, bool needs_grad, std::function<void()> backward_fn) {
    if (!needs_grad || g_tape == nullptr) return;
    detail::NodePtr node = out.node();
    node->requires_grad = true;
    node->tape = g_tape;
    node->tape_index = static_cast<std::int64_t>(g_tape->entries_.size());
    g_tape->entries_.push_back({node, std::move(backward_fn)});
}

bool taping(const Tensor& a) { return g_tape != nullptr && a.requires_grad(); }
bool taping(const Tensor& a, const Tensor& b) {
    return g_tape != nullptr && (a.requires_grad() || b.requires_grad());
}

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size());
    std::int64_t acc = 1;
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        st[static_cast<std::size_t>(d)] = acc;
        acc *= s[static_cast<std::size_t>(d)];
    }
    return st;
}

struct BroadcastPlan {
    Shape out;
    std::vector<std::int64_t> sa, sb;  // strides of a and b in out-index space
    bool same = false;                 // both operands already have out's shape
};

BroadcastPlan make_plan(const char* op, const Shape& a, const Shape& b) {
    const int nd = static_cast<int>(std::max(a.size(), b.size()));
    BroadcastPlan p;
    p.out.assign(static_cast<std::size_t>(nd), 1);
    for (int d = 0; d < nd; ++d) {
        const int ia = d - (nd - static_cast<int>(a.size()));
        const int ib = d - (nd - static_cast<int>(b.size()));
        const int ea = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
        const int eb = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
        if (ea != eb && ea != 1 && eb != 1)
            fail(std::string(op) + ": shapes not broadcastable " + shape_str(a) + " vs " +
                 shape_str(b));
        p.out[static_cast<std::size_t>(d)] = std::max(ea, eb);
    }
    auto strides_for = [&](const Shape& s) {
        std::vector<std::int64_t> st(static_cast<std::size_t>(nd), 0);
        auto own = contiguous_strides(s);
        for (int d = 0; d < nd; ++d) {
            const int is = d - (nd - static_cast<int>(s.size()));
            if (is < 0) continue;
            const int extent = s[static_cast<std::size_t>(is)];
            st[static_cast<std::size_t>(d)] =
                (extent == 1 && p.out[static_cast<std::size_t>(d)] != 1)
                    ? 0
                    : own[static_cast<std::size_t>(is)];
        }
        return st;
    };
    p.sa = strides_for(a);
    p.sb = strides_for(b);
    p.same = (a == p.out && b == p.out);
    return p;
}

// Visits every output coordinate, tracking the matching linear offsets into
// both operands. f(i_out, i_a, i_b).
template <typename F>
void broadcast_walk(const BroadcastPlan& p, F&& f) {
    const int nd = static_cast<int>(p.out.size());
    const std::int64_t total = numel(p.out);
    if (nd == 0) {
        f(std::int64_t{0}, std::int64_t{0}, std::int64_t{0});
        return;
    }
    std::vector<int> idx(static_cast<std::size_t>(nd), 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t io = 0; io < total; ++io) {
        f(io, ia, ib);
        for (int d = nd - 1; d >= 0; --d) {
            const std::size_t ud = static_cast<std::size_t>(d);
            ++idx[ud];
            ia += p.sa[ud];
            ib += p.sb[ud];
            if (idx[ud] < p.out[ud]) break;
            ia -= static_cast<std::int64_t>(p.out[ud]) * p.sa[ud];
            ib -= static_cast<std::int64_t>(p.out[ud]) * p.sb[ud];
            idx[ud] = 0;
        }
    }
}

template <typename Combine, typename BackA, typename BackB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Combine&& comb, BackA&& back_a,
                 BackB&& back_b) {
    check_defined(op, {&a, &b});
    BroadcastPlan plan = make_plan(op, a.shape(), b.shape());
    const auto& da = a.data();
    const auto& db = b.data();
    std::vector<double> out(static_cast<std::size_t>(numel(plan.out)));
    if (plan.same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = comb(da[i], db[i]);
    } else {
        broadcast_walk(plan, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
            out[static_cast<std::size_t>(io)] = comb(da[static_cast<std::size_t>(ia)],
                                                     db[static_cast<std::size_t>(ib)]);
        });
    }
    Tensor y = make_out(plan.out, std::move(out));
    if (taping(a, b)) {
        auto an = a.node();
        auto bn = b.node();
        auto yn = y.node();
        record(y, true, [an, bn, yn, plan, back_a, back_b]() {
            const std::vector<double>& g = yn->grad;
            const bool na = an->requires_grad;
            const bool nb = bn->requires_grad;
            if (na) an->ensure_grad();
            if (nb) bn->ensure_grad();
            if (plan.same) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (na) an->grad[i] += back_a(g[i], an->data[i], bn->data[i]);
                    if (nb) bn->grad[i] += back_b(g[i], an->data[i], bn->data[i]);
                }
            } else {
                broadcast_walk(plan, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                    const std::size_t uo = static_cast<std::size_t>(io);
                    const std::size_t ua = static_cast<std::size_t>(ia);
                    const std::size_t ub = static_cast<std::size_t>(ib);
                    if (na) an->grad[ua] += back_a(g[uo], an->data[ua], bn->data[ub]);
                    if (nb) bn->grad[ub] += back_b(g[uo], an->data[ua], bn->data[ub]);
                });
            }
        });
    }
    return y;
}

// dfn(x, y) is d out / d in at one element, with y the forward output.
template <typename Fwd, typename Dfn>
Tensor unary_op(const char* /*op*/, const Tensor& a, Fwd&& f, Dfn&& dfn) {
    const auto& da = a.data();
    std::vector<double> out(da.size());
    for (std::size_t i = 0; i < da.size(); ++i) out[i] = f(da[i]);
    Tensor y = make_out(a.shape(), std::move(out));
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn, dfn]() {
            an->ensure_grad();
            const std::vector<double>& g = yn->grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                an->grad[i] += g[i] * dfn(an->data[i], yn->data[i]);
        });
    }
    return y;
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape_valid("zeros", shape);
    auto n = std::make_shared<detail::TensorNode>();
    n->data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node()->data.begin(), t.node()->data.end(), value);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full(Shape{}, value, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape_valid("from_data", shape);
    if (static_cast<std::int64_t>(values.size()) != numel(shape))
        fail("from_data: " + std::to_string(values.size()) + " values for shape " +
             shape_str(shape));
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.node()->data) v = rng.normal() * stddev;
    return t;
}

const Shape& Tensor::shape() const {
    if (!node_) fail("shape: undefined tensor");
    return node_->shape;
}

int Tensor::dim() const { return static_cast<int>(shape().size()); }

std::int64_t Tensor::size() const {
    if (!node_) fail("size: undefined tensor");
    return node_->size();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::data() const {
    if (!node_) fail("data: undefined tensor");
    return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
    if (!node_) fail("mutable_data: undefined tensor");
    return node_->data;
}

const std::vector<double>& Tensor::grad() const {
    if (!node_) fail("grad: undefined tensor");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_) fail("zero_grad: undefined tensor");
    std::vector<double>().swap(node_->grad);
}

double Tensor::value() const {
    if (size() != 1) fail("value: tensor has " + std::to_string(size()) + " elements");
    return node_->data[0];
}

double Tensor::at(const std::vector<int>& index) const {
    const Shape& s = shape();
    if (index.size() != s.size())
        fail("at: index rank " + std::to_string(index.size()) + " for shape " + shape_str(s));
    std::int64_t off = 0;
    for (std::size_t d = 0; d < s.size(); ++d) {
        if (index[d] < 0 || index[d] >= s[d])
            fail("at: index out of range for shape " + shape_str(s));
        off = off * s[d] + index[d];
    }
    return node_->data[static_cast<std::size_t>(off)];
}

Tensor Tensor::detach() const {
    check_defined("detach", {this});
    return from_data(node_->shape, node_->data, false);
}

Tensor Tensor::clone(bool requires_grad) const {
    check_defined("clone", {this});
    return from_data(node_->shape, node_->data, requires_grad);
}

// ---- tape -----------------------------------------------------------------

TapeScope::TapeScope(Tape& tape) : previous_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = previous_; }

Tape* active_tape() { return g_tape; }

void backward(const Tensor& loss) {
    check_defined("backward", {&loss});
    if (loss.size() != 1) fail("backward: loss must be a single element, got " +
                               shape_str(loss.shape()));
    detail::NodePtr node = loss.node();
    if (node->tape == nullptr) fail("backward: loss is not recorded on a tape");
    Tape* tape = node->tape;
    node->ensure_grad();
    node->grad[0] += 1.0;
    for (std::int64_t i = node->tape_index; i >= 0; --i) {
        Tape::Entry& e = tape->entries_[static_cast<std::size_t>(i)];
        if (e.out->grad.empty()) continue;  // not on the path from this loss
        e.backward();
        // Adjoints of recorded intermediates are complete once their entry
        // runs; releasing them keeps repeated per-sample backward passes from
        // compounding and returns memory early. Leaf grads are untouched.
        std::vector<double>().swap(e.out->grad);
    }
}

// ---- arithmetic -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor neg(const Tensor& a) {
    check_defined("neg", {&a});
    return unary_op(
        "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double factor) {
    check_defined("scale", {&a});
    return unary_op(
        "scale", a, [factor](double x) { return x * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
    check_defined("add_scalar", {&a});
    return unary_op(
        "add_scalar", a, [offset](double x) { return x + offset; },
        [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined("matmul", {&a, &b});
    if (a.dim() != 2 || b.dim() != 2)
        fail("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
             shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        fail("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
             shape_str(b.shape()));
    const auto& da = a.data();
    const auto& db = b.data();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = da[static_cast<std::size_t>(i) * k + kk];
            const double* brow = db.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Tensor y = make_out(Shape{m, n}, std::move(out));
    if (taping(a, b)) {
        auto an = a.node();
        auto bn = b.node();
        auto yn = y.node();
        record(y, true, [an, bn, yn, m, k, n]() {
            const std::vector<double>& g = yn->grad;
            if (an->requires_grad) {
                an->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
                        const double* brow = bn->data.data() + static_cast<std::size_t>(kk) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        an->grad[static_cast<std::size_t>(i) * k + kk] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const double av = an->data[static_cast<std::size_t>(i) * k + kk];
                        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
                        double* brow = bn->grad.data() + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
            }
        });
    }
    return y;
}

// ---- structure ------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    check_defined("reshape", {&a});
    check_shape_valid("reshape", shape);
    if (numel(shape) != a.size())
        fail("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor y = make_out(std::move(shape), a.data());
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
        });
    }
    return y;
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
    check_defined("transpose", {&a});
    const int nd = a.dim();
    if (axis0 < 0 || axis0 >= nd || axis1 < 0 || axis1 >= nd)
        fail("transpose: axes (" + std::to_string(axis0) + "," + std::to_string(axis1) +
             ") out of range for " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    std::swap(out_shape[static_cast<std::size_t>(axis0)],
              out_shape[static_cast<std::size_t>(axis1)]);
    auto in_strides = contiguous_strides(a.shape());
    std::swap(in_strides[static_cast<std::size_t>(axis0)],
              in_strides[static_cast<std::size_t>(axis1)]);
    const auto& da = a.data();
    const std::int64_t total = a.size();
    std::vector<double> out(static_cast<std::size_t>(total));
    std::vector<int> idx(static_cast<std::size_t>(std::max(nd, 1)), 0);
    std::int64_t ii = 0;
    for (std::int64_t io = 0; io < total; ++io) {
        out[static_cast<std::size_t>(io)] = da[static_cast<std::size_t>(ii)];
        for (int d = nd - 1; d >= 0; --d) {
            const std::size_t ud = static_cast<std::size_t>(d);
            ++idx[ud];
            ii += in_strides[ud];
            if (idx[ud] < out_shape[ud]) break;
            ii -= static_cast<std::int64_t>(out_shape[ud]) * in_strides[ud];
            idx[ud] = 0;
        }
    }
    Tensor y = make_out(out_shape, std::move(out));
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn, out_shape, in_strides, nd, total]() {
            an->ensure_grad();
            std::vector<int> ix(static_cast<std::size_t>(std::max(nd, 1)), 0);
            std::int64_t ii2 = 0;
            for (std::int64_t io = 0; io < total; ++io) {
                an->grad[static_cast<std::size_t>(ii2)] += yn->grad[static_cast<std::size_t>(io)];
                for (int d = nd - 1; d >= 0; --d) {
                    const std::size_t ud = static_cast<std::size_t>(d);
                    ++ix[ud];
                    ii2 += in_strides[ud];
                    if (ix[ud] < out_shape[ud]) break;
                    ii2 -= static_cast<std::int64_t>(out_shape[ud]) * in_strides[ud];
                    ix[ud] = 0;
                }
            }
        });
    }
    return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) fail("concat: no inputs");
    for (const Tensor& t : parts) check_defined("concat", {&t});
    const Shape& base = parts[0].shape();
    const int nd = static_cast<int>(base.size());
    if (axis < 0 || axis >= nd)
        fail("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(base));
    int axis_total = 0;
    for (const Tensor& t : parts) {
        if (t.dim() != nd)
            fail("concat: rank mismatch, " + shape_str(base) + " vs " + shape_str(t.shape()));
        for (int d = 0; d < nd; ++d)
            if (d != axis && t.shape()[static_cast<std::size_t>(d)] !=
                                 base[static_cast<std::size_t>(d)])
                fail("concat: shape mismatch off axis, " + shape_str(base) + " vs " +
                     shape_str(t.shape()));
        axis_total += t.shape()[static_cast<std::size_t>(axis)];
    }
    Shape out_shape = base;
    out_shape[static_cast<std::size_t>(axis)] = axis_total;
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= base[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= base[static_cast<std::size_t>(d)];
    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    const std::int64_t out_row = static_cast<std::int64_t>(axis_total) * inner;
    std::int64_t offset = 0;  // start of each part inside an outer block
    std::vector<std::int64_t> part_offsets;
    for (const Tensor& t : parts) {
        part_offsets.push_back(offset);
        const std::int64_t row = static_cast<std::int64_t>(
                                     t.shape()[static_cast<std::size_t>(axis)]) *
                                 inner;
        const auto& dt = t.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(dt.begin() + o * row, dt.begin() + (o + 1) * row,
                      out.begin() + o * out_row + offset);
        offset += row;
    }
    Tensor y = make_out(out_shape, std::move(out));
    bool need = false;
    for (const Tensor& t : parts) need = need || t.requires_grad();
    if (g_tape != nullptr && need) {
        std::vector<detail::NodePtr> nodes;
        for (const Tensor& t : parts) nodes.push_back(t.node());
        auto yn = y.node();
        record(y, true, [nodes, yn, part_offsets, outer, inner, out_row, axis]() {
            for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                const detail::NodePtr& pn = nodes[pi];
                if (!pn->requires_grad) continue;
                pn->ensure_grad();
                const std::int64_t row = static_cast<std::int64_t>(
                                             pn->shape[static_cast<std::size_t>(axis)]) *
                                         inner;
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = yn->grad.data() + o * out_row + part_offsets[pi];
                    double* dst = pn->grad.data() + o * row;
                    for (std::int64_t i = 0; i < row; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return y;
}

Tensor slice(const Tensor& a, int axis, int start, int length) {
    check_defined("slice", {&a});
    const Shape& s = a.shape();
    const int nd = static_cast<int>(s.size());
    if (axis < 0 || axis >= nd)
        fail("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    if (start < 0 || length < 1 || start + length > s[static_cast<std::size_t>(axis)])
        fail("slice: window [" + std::to_string(start) + "," + std::to_string(start + length) +
             ") invalid for " + shape_str(s));
    Shape out_shape = s;
    out_shape[static_cast<std::size_t>(axis)] = length;
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= s[static_cast<std::size_t>(d)];
    const std::int64_t in_row = static_cast<std::int64_t>(s[static_cast<std::size_t>(axis)]) *
                                inner;
    const std::int64_t out_rowlen = static_cast<std::int64_t>(length) * inner;
    const std::int64_t skip = static_cast<std::int64_t>(start) * inner;
    const auto& da = a.data();
    std::vector<double> out(static_cast<std::size_t>(outer * out_rowlen));
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(da.begin() + o * in_row + skip, da.begin() + o * in_row + skip + out_rowlen,
                  out.begin() + o * out_rowlen);
    Tensor y = make_out(out_shape, std::move(out));
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn, outer, in_row, out_rowlen, skip]() {
            an->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                const double* src = yn->grad.data() + o * out_rowlen;
                double* dst = an->grad.data() + o * in_row + skip;
                for (std::int64_t i = 0; i < out_rowlen; ++i) dst[i] += src[i];
            }
        });
    }
    return y;
}

// ---- reductions -----------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    check_defined("sum_all", {&a});
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor y = make_out(Shape{}, {s});
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn]() {
            an->ensure_grad();
            const double g = yn->grad[0];
            for (double& v : an->grad) v += g;
        });
    }
    return y;
}

Tensor mean_all(const Tensor& a) {
    check_defined("mean_all", {&a});
    const double inv = 1.0 / static_cast<double>(a.size());
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor y = make_out(Shape{}, {s * inv});
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn, inv]() {
            an->ensure_grad();
            const double g = yn->grad[0] * inv;
            for (double& v : an->grad) v += g;
        });
    }
    return y;
}

Tensor mean_last_axes(const Tensor& a, int n_axes) {
    check_defined("mean_last_axes", {&a});
    const int nd = a.dim();
    if (n_axes < 1 || n_axes > nd)
        fail("mean_last_axes: cannot reduce " + std::to_string(n_axes) + " axes of " +
             shape_str(a.shape()));
    Shape out_shape(a.shape().begin(), a.shape().end() - n_axes);
    std::int64_t group = 1;
    for (int d = nd - n_axes; d < nd; ++d) group *= a.shape()[static_cast<std::size_t>(d)];
    const std::int64_t groups = numel(out_shape);
    const double inv = 1.0 / static_cast<double>(group);
    const auto& da = a.data();
    std::vector<double> out(static_cast<std::size_t>(groups));
    for (std::int64_t o = 0; o < groups; ++o) {
        double s = 0.0;
        const double* src = da.data() + o * group;
        for (std::int64_t i = 0; i < group; ++i) s += src[i];
        out[static_cast<std::size_t>(o)] = s * inv;
    }
    Tensor y = make_out(std::move(out_shape), std::move(out));
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn, groups, group, inv]() {
            an->ensure_grad();
            for (std::int64_t o = 0; o < groups; ++o) {
                const double g = yn->grad[static_cast<std::size_t>(o)] * inv;
                double* dst = an->grad.data() + o * group;
                for (std::int64_t i = 0; i < group; ++i) dst[i] += g;
            }
        });
    }
    return y;
}

// ---- pointwise nonlinearities ----------------------------------------------

Tensor exp(const Tensor& a) {
    check_defined("exp", {&a});
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    check_defined("log", {&a});
    for (double v : a.data())
        if (v <= 0.0) fail("log: non-positive input " + std::to_string(v));
    return unary_op(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
    check_defined("tanh", {&a});
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    check_defined("sigmoid", {&a});
    return unary_op(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    check_defined("relu", {&a});
    return unary_op(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
    check_defined("leaky_relu", {&a});
    return unary_op(
        "leaky_relu", a,
        [negative_slope](double x) { return x > 0.0 ? x : negative_slope * x; },
        [negative_slope](double x, double) { return x > 0.0 ? 1.0 : negative_slope; });
}

Tensor gelu(const Tensor& a) {
    check_defined("gelu", {&a});
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary_op(
        "gelu", a,
        [kInvSqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [kInvSqrt2, kInvSqrt2Pi](double x, double) {
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                   x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
}

Tensor softplus(const Tensor& a) {
    check_defined("softplus", {&a});
    return unary_op(
        "softplus", a,
        [](double x) {
            return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        },
        [](double x, double) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Tensor abs(const Tensor& a) {
    check_defined("abs", {&a});
    return unary_op(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor pow(const Tensor& a, double exponent) {
    check_defined("pow", {&a});
    const bool integral = exponent == std::floor(exponent);
    for (double v : a.data()) {
        if (v < 0.0 && !integral)
            fail("pow: negative base " + std::to_string(v) + " with fractional exponent");
        if (v == 0.0 && exponent < 0.0) fail("pow: zero base with negative exponent");
    }
    return unary_op(
        "pow", a, [exponent](double x) { return std::pow(x, exponent); },
        [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

// ---- softmax family ---------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
    check_defined("softmax", {&a});
    const Shape& s = a.shape();
    const int nd = static_cast<int>(s.size());
    if (axis < 0 || axis >= nd)
        fail("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    std::int64_t outer = 1, inner = 1;
    const int len = s[static_cast<std::size_t>(axis)];
    for (int d = 0; d < axis; ++d) outer *= s[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= s[static_cast<std::size_t>(d)];
    const auto& da = a.data();
    std::vector<double> out(da.size());
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * len * inner + i;
            double mx = da[static_cast<std::size_t>(base)];
            for (int j = 1; j < len; ++j)
                mx = std::max(mx, da[static_cast<std::size_t>(base + j * inner)]);
            double denom = 0.0;
            for (int j = 0; j < len; ++j) {
                const double e = std::exp(da[static_cast<std::size_t>(base + j * inner)] - mx);
                out[static_cast<std::size_t>(base + j * inner)] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (int j = 0; j < len; ++j) out[static_cast<std::size_t>(base + j * inner)] *= inv;
        }
    Tensor y = make_out(s, std::move(out));
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn, outer, inner, len]() {
            an->ensure_grad();
            const std::vector<double>& g = yn->grad;
            const std::vector<double>& p = yn->data;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = o * len * inner + i;
                    double dot = 0.0;
                    for (int j = 0; j < len; ++j) {
                        const std::size_t k = static_cast<std::size_t>(base + j * inner);
                        dot += g[k] * p[k];
                    }
                    for (int j = 0; j < len; ++j) {
                        const std::size_t k = static_cast<std::size_t>(base + j * inner);
                        an->grad[k] += p[k] * (g[k] - dot);
                    }
                }
        });
    }
    return y;
}

Tensor cross_entropy_logits(const Tensor& logits, int target) {
    check_defined("cross_entropy_logits", {&logits});
    if (logits.dim() != 1)
        fail("cross_entropy_logits: expects 1-D logits, got " + shape_str(logits.shape()));
    const int k = logits.shape()[0];
    if (target < 0 || target >= k)
        fail("cross_entropy_logits: target " + std::to_string(target) + " for " +
             std::to_string(k) + " classes");
    const auto& dl = logits.data();
    double mx = dl[0];
    for (double v : dl) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : dl) denom += std::exp(v - mx);
    const double lse = mx + std::log(denom);
    Tensor y = make_out(Shape{}, {lse - dl[static_cast<std::size_t>(target)]});
    if (taping(logits)) {
        auto ln = logits.node();
        auto yn = y.node();
        record(y, true, [ln, yn, target, mx, denom, k]() {
            ln->ensure_grad();
            const double g = yn->grad[0];
            const double inv = 1.0 / denom;
            for (int j = 0; j < k; ++j) {
                const double p = std::exp(ln->data[static_cast<std::size_t>(j)] - mx) * inv;
                ln->grad[static_cast<std::size_t>(j)] +=
                    g * (p - (j == target ? 1.0 : 0.0));
            }
        });
    }
    return y;
}

// ---- convolutions -----------------------------------------------------------

namespace {

struct ConvGeom {
    int B, Cin, H, W, Cout, kh, kw, OH, OW, stride, padding;
    // Per output (or input) row/column: the kernel tap range that stays in
    // bounds, so inner loops never test coordinates.
    std::vector<int> ky_lo, ky_hi, kx_lo, kx_hi;
};

// conv2d layout: input [B,Cin,H,W], kernel [Cout,Cin,kh,kw].
ConvGeom conv_geometry(const char* op, const Shape& in, const Shape& kern, int stride,
                       int padding, bool transpose) {
    if (in.size() != 4) fail(std::string(op) + ": input must be [B,C,H,W], got " + shape_str(in));
    if (kern.size() != 4)
        fail(std::string(op) + ": kernel must be 4-D, got " + shape_str(kern));
    if (stride < 1) fail(std::string(op) + ": stride must be >= 1");
    if (padding < 0) fail(std::string(op) + ": padding must be >= 0");
    ConvGeom g;
    g.B = in[0];
    g.Cin = in[1];
    g.H = in[2];
    g.W = in[3];
    g.stride = stride;
    g.padding = padding;
    const int kc_in = transpose ? kern[0] : kern[1];
    g.Cout = transpose ? kern[1] : kern[0];
    g.kh = kern[2];
    g.kw = kern[3];
    if (kc_in != g.Cin)
        fail(std::string(op) + ": kernel channel mismatch, input " + shape_str(in) +
             " kernel " + shape_str(kern));
    if (!transpose) {
        g.OH = (g.H + 2 * padding - g.kh) / stride + 1;
        g.OW = (g.W + 2 * padding - g.kw) / stride + 1;
        if (g.H + 2 * padding < g.kh || g.W + 2 * padding < g.kw || g.OH < 1 || g.OW < 1)
            fail(std::string(op) + ": kernel " + shape_str(kern) + " too large for input " +
                 shape_str(in) + " at padding " + std::to_string(padding));
        g.ky_lo.resize(static_cast<std::size_t>(g.OH));
        g.ky_hi.resize(static_cast<std::size_t>(g.OH));
        for (int oy = 0; oy < g.OH; ++oy) {
            g.ky_lo[static_cast<std::size_t>(oy)] = std::max(0, padding - oy * stride);
            g.ky_hi[static_cast<std::size_t>(oy)] =
                std::min(g.kh, g.H + padding - oy * stride);
        }
        g.kx_lo.resize(static_cast<std::size_t>(g.OW));
        g.kx_hi.resize(static_cast<std::size_t>(g.OW));
        for (int ox = 0; ox < g.OW; ++ox) {
            g.kx_lo[static_cast<std::size_t>(ox)] = std::max(0, padding - ox * stride);
            g.kx_hi[static_cast<std::size_t>(ox)] =
                std::min(g.kw, g.W + padding - ox * stride);
        }
    } else {
        g.OH = (g.H - 1) * stride - 2 * padding + g.kh;
        g.OW = (g.W - 1) * stride - 2 * padding + g.kw;
        if (g.OH < 1 || g.OW < 1)
            fail(std::string(op) + ": output collapses for input " + shape_str(in) +
                 " kernel " + shape_str(kern) + " at padding " + std::to_string(padding));
        // Tap ranges are indexed by input coordinate here.
        g.ky_lo.resize(static_cast<std::size_t>(g.H));
        g.ky_hi.resize(static_cast<std::size_t>(g.H));
        for (int iy = 0; iy < g.H; ++iy) {
            g.ky_lo[static_cast<std::size_t>(iy)] = std::max(0, padding - iy * stride);
            g.ky_hi[static_cast<std::size_t>(iy)] =
                std::min(g.kh, g.OH + padding - iy * stride);
        }
        g.kx_lo.resize(static_cast<std::size_t>(g.W));
        g.kx_hi.resize(static_cast<std::size_t>(g.W));
        for (int ix = 0; ix < g.W; ++ix) {
            g.kx_lo[static_cast<std::size_t>(ix)] = std::max(0, padding - ix * stride);
            g.kx_hi[static_cast<std::size_t>(ix)] =
                std::min(g.kw, g.OW + padding - ix * stride);
        }
    }
    return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    check_defined("conv2d", {&input, &kernel});
    ConvGeom g = conv_geometry("conv2d", input.shape(), kernel.shape(), stride, padding, false);
    const auto& din = input.data();
    const auto& dk = kernel.data();
    std::vector<double> out(
        static_cast<std::size_t>(g.B) * g.Cout * g.OH * g.OW, 0.0);
    const std::int64_t in_plane = static_cast<std::int64_t>(g.H) * g.W;
    const std::int64_t out_plane = static_cast<std::int64_t>(g.OH) * g.OW;
    const std::int64_t k_plane = static_cast<std::int64_t>(g.kh) * g.kw;
    for (int b = 0; b < g.B; ++b)
        for (int co = 0; co < g.Cout; ++co) {
            double* op = out.data() + (static_cast<std::int64_t>(b) * g.Cout + co) * out_plane;
            for (int ci = 0; ci < g.Cin; ++ci) {
                const double* ip =
                    din.data() + (static_cast<std::int64_t>(b) * g.Cin + ci) * in_plane;
                const double* kp =
                    dk.data() + (static_cast<std::int64_t>(co) * g.Cin + ci) * k_plane;
                for (int oy = 0; oy < g.OH; ++oy) {
                    double* orow = op + static_cast<std::int64_t>(oy) * g.OW;
                    const int ky0 = g.ky_lo[static_cast<std::size_t>(oy)];
                    const int ky1 = g.ky_hi[static_cast<std::size_t>(oy)];
                    for (int ky = ky0; ky < ky1; ++ky) {
                        const int iy = oy * g.stride - g.padding + ky;
                        const double* irow = ip + static_cast<std::int64_t>(iy) * g.W;
                        const double* krow = kp + static_cast<std::int64_t>(ky) * g.kw;
                        for (int ox = 0; ox < g.OW; ++ox) {
                            const int ix0 = ox * g.stride - g.padding;
                            double acc = 0.0;
                            const int kx0 = g.kx_lo[static_cast<std::size_t>(ox)];
                            const int kx1 = g.kx_hi[static_cast<std::size_t>(ox)];
                            for (int kx = kx0; kx < kx1; ++kx) acc += irow[ix0 + kx] * krow[kx];
                            orow[ox] += acc;
                        }
                    }
                }
            }
        }
    Tensor y = make_out(Shape{g.B, g.Cout, g.OH, g.OW}, std::move(out));
    if (taping(input, kernel)) {
        auto in_node = input.node();
        auto k_node = kernel.node();
        auto yn = y.node();
        record(y, true, [in_node, k_node, yn, g, in_plane, out_plane, k_plane]() {
            const bool need_in = in_node->requires_grad;
            const bool need_k = k_node->requires_grad;
            if (need_in) in_node->ensure_grad();
            if (need_k) k_node->ensure_grad();
            const std::vector<double>& gout = yn->grad;
            for (int b = 0; b < g.B; ++b)
                for (int co = 0; co < g.Cout; ++co) {
                    const double* gp =
                        gout.data() + (static_cast<std::int64_t>(b) * g.Cout + co) * out_plane;
                    for (int ci = 0; ci < g.Cin; ++ci) {
                        const double* ip = in_node->data.data() +
                                           (static_cast<std::int64_t>(b) * g.Cin + ci) * in_plane;
                        double* dip = need_in
                                          ? in_node->grad.data() +
                                                (static_cast<std::int64_t>(b) * g.Cin + ci) *
                                                    in_plane
                                          : nullptr;
                        const double* kp =
                            k_node->data.data() +
                            (static_cast<std::int64_t>(co) * g.Cin + ci) * k_plane;
                        double* dkp = need_k
                                          ? k_node->grad.data() +
                                                (static_cast<std::int64_t>(co) * g.Cin + ci) *
                                                    k_plane
                                          : nullptr;
                        for (int oy = 0; oy < g.OH; ++oy) {
                            const double* grow = gp + static_cast<std::int64_t>(oy) * g.OW;
                            const int ky0 = g.ky_lo[static_cast<std::size_t>(oy)];
                            const int ky1 = g.ky_hi[static_cast<std::size_t>(oy)];
                            for (int ky = ky0; ky < ky1; ++ky) {
                                const int iy = oy * g.stride - g.padding + ky;
                                const double* irow = ip + static_cast<std::int64_t>(iy) * g.W;
                                double* dirow =
                                    need_in ? dip + static_cast<std::int64_t>(iy) * g.W : nullptr;
                                const double* krow = kp + static_cast<std::int64_t>(ky) * g.kw;
                                double* dkrow =
                                    need_k ? dkp + static_cast<std::int64_t>(ky) * g.kw : nullptr;
                                for (int ox = 0; ox < g.OW; ++ox) {
                                    const double gv = grow[ox];
                                    if (gv == 0.0) continue;
                                    const int ix0 = ox * g.stride - g.padding;
                                    const int kx0 = g.kx_lo[static_cast<std::size_t>(ox)];
                                    const int kx1 = g.kx_hi[static_cast<std::size_t>(ox)];
                                    if (need_in)
                                        for (int kx = kx0; kx < kx1; ++kx)
                                            dirow[ix0 + kx] += gv * krow[kx];
                                    if (need_k)
                                        for (int kx = kx0; kx < kx1; ++kx)
                                            dkrow[kx] += gv * irow[ix0 + kx];
                                }
                            }
                        }
                    }
                }
        });
    }
    return y;
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    check_defined("conv2d_transpose", {&input, &kernel});
    ConvGeom g =
        conv_geometry("conv2d_transpose", input.shape(), kernel.shape(), stride, padding, true);
    const auto& din = input.data();
    const auto& dk = kernel.data();
    std::vector<double> out(
        static_cast<std::size_t>(g.B) * g.Cout * g.OH * g.OW, 0.0);
    const std::int64_t in_plane = static_cast<std::int64_t>(g.H) * g.W;
    const std::int64_t out_plane = static_cast<std::int64_t>(g.OH) * g.OW;
    const std::int64_t k_plane = static_cast<std::int64_t>(g.kh) * g.kw;
    for (int b = 0; b < g.B; ++b)
        for (int ci = 0; ci < g.Cin; ++ci) {
            const double* ip = din.data() + (static_cast<std::int64_t>(b) * g.Cin + ci) * in_plane;
            for (int co = 0; co < g.Cout; ++co) {
                double* op =
                    out.data() + (static_cast<std::int64_t>(b) * g.Cout + co) * out_plane;
                const double* kp =
                    dk.data() + (static_cast<std::int64_t>(ci) * g.Cout + co) * k_plane;
                for (int iy = 0; iy < g.H; ++iy) {
                    const double* irow = ip + static_cast<std::int64_t>(iy) * g.W;
                    const int ky0 = g.ky_lo[static_cast<std::size_t>(iy)];
                    const int ky1 = g.ky_hi[static_cast<std::size_t>(iy)];
                    for (int ky = ky0; ky < ky1; ++ky) {
                        const int oy = iy * g.stride - g.padding + ky;
                        double* orow = op + static_cast<std::int64_t>(oy) * g.OW;
                        const double* krow = kp + static_cast<std::int64_t>(ky) * g.kw;
                        for (int ix = 0; ix < g.W; ++ix) {
                            const double iv = irow[ix];
                            if (iv == 0.0) continue;
                            const int ox0 = ix * g.stride - g.padding;
                            const int kx0 = g.kx_lo[static_cast<std::size_t>(ix)];
                            const int kx1 = g.kx_hi[static_cast<std::size_t>(ix)];
                            for (int kx = kx0; kx < kx1; ++kx)
                                orow[ox0 + kx] += iv * krow[kx];
                        }
                    }
                }
            }
        }
    Tensor y = make_out(Shape{g.B, g.Cout, g.OH, g.OW}, std::move(out));
    if (taping(input, kernel)) {
        auto in_node = input.node();
        auto k_node = kernel.node();
        auto yn = y.node();
        record(y, true, [in_node, k_node, yn, g, in_plane, out_plane, k_plane]() {
            const bool need_in = in_node->requires_grad;
            const bool need_k = k_node->requires_grad;
            if (need_in) in_node->ensure_grad();
            if (need_k) k_node->ensure_grad();
            const std::vector<double>& gout = yn->grad;
            for (int b = 0; b < g.B; ++b)
                for (int ci = 0; ci < g.Cin; ++ci) {
                    const double* ip = in_node->data.data() +
                                       (static_cast<std::int64_t>(b) * g.Cin + ci) * in_plane;
                    double* dip = need_in ? in_node->grad.data() +
                                                (static_cast<std::int64_t>(b) * g.Cin + ci) *
                                                    in_plane
                                          : nullptr;
                    for (int co = 0; co < g.Cout; ++co) {
                        const double* gp =
                            gout.data() + (static_cast<std::int64_t>(b) * g.Cout + co) * out_plane;
                        const double* kp = k_node->data.data() +
                                           (static_cast<std::int64_t>(ci) * g.Cout + co) * k_plane;
                        double* dkp = need_k
                                          ? k_node->grad.data() +
                                                (static_cast<std::int64_t>(ci) * g.Cout + co) *
                                                    k_plane
                                          : nullptr;
                        for (int iy = 0; iy < g.H; ++iy) {
                            const double* irow = ip + static_cast<std::int64_t>(iy) * g.W;
                            double* dirow =
                                need_in ? dip + static_cast<std::int64_t>(iy) * g.W : nullptr;
                            const int ky0 = g.ky_lo[static_cast<std::size_t>(iy)];
                            const int ky1 = g.ky_hi[static_cast<std::size_t>(iy)];
                            for (int ky = ky0; ky < ky1; ++ky) {
                                const int oy = iy * g.stride - g.padding + ky;
                                const double* grow = gp + static_cast<std::int64_t>(oy) * g.OW;
                                const double* krow = kp + static_cast<std::int64_t>(ky) * g.kw;
                                double* dkrow =
                                    need_k ? dkp + static_cast<std::int64_t>(ky) * g.kw : nullptr;
                                for (int ix = 0; ix < g.W; ++ix) {
                                    const int ox0 = ix * g.stride - g.padding;
                                    const int kx0 = g.kx_lo[static_cast<std::size_t>(ix)];
                                    const int kx1 = g.kx_hi[static_cast<std::size_t>(ix)];
                                    if (need_in) {
                                        double acc = 0.0;
                                        for (int kx = kx0; kx < kx1; ++kx)
                                            acc += grow[ox0 + kx] * krow[kx];
                                        dirow[ix] += acc;
                                    }
                                    if (need_k) {
                                        const double iv = irow[ix];
                                        if (iv != 0.0)
                                            for (int kx = kx0; kx < kx1; ++kx)
                                                dkrow[kx] += iv * grow[ox0 + kx];
                                    }
                                }
                            }
                        }
                    }
                }
        });
    }
    return y;
}

// ---- normalization -----------------------------------------------------------

Tensor normalize_last_axes(const Tensor& a, int n_axes, double eps) {
    check_defined("normalize_last_axes", {&a});
    const int nd = a.dim();
    if (n_axes < 1 || n_axes > nd)
        fail("normalize_last_axes: cannot normalize " + std::to_string(n_axes) + " axes of " +
             shape_str(a.shape()));
    if (eps <= 0.0) fail("normalize_last_axes: eps must be positive");
    std::int64_t group = 1;
    for (int d = nd - n_axes; d < nd; ++d) group *= a.shape()[static_cast<std::size_t>(d)];
    const std::int64_t groups = a.size() / group;
    const double inv_n = 1.0 / static_cast<double>(group);
    const auto& da = a.data();
    std::vector<double> out(da.size());
    std::vector<double> invs(static_cast<std::size_t>(groups));
    for (std::int64_t o = 0; o < groups; ++o) {
        const double* src = da.data() + o * group;
        double mean = 0.0;
        for (std::int64_t i = 0; i < group; ++i) mean += src[i];
        mean *= inv_n;
        double var = 0.0;
        for (std::int64_t i = 0; i < group; ++i) {
            const double d = src[i] - mean;
            var += d * d;
        }
        var *= inv_n;
        const double inv = 1.0 / std::sqrt(var + eps);
        invs[static_cast<std::size_t>(o)] = inv;
        double* dst = out.data() + o * group;
        for (std::int64_t i = 0; i < group; ++i) dst[i] = (src[i] - mean) * inv;
    }
    Tensor y = make_out(a.shape(), std::move(out));
    if (taping(a)) {
        auto an = a.node();
        auto yn = y.node();
        record(y, true, [an, yn, invs, groups, group, inv_n]() {
            an->ensure_grad();
            const std::vector<double>& g = yn->grad;
            const std::vector<double>& yv = yn->data;
            for (std::int64_t o = 0; o < groups; ++o) {
                const double* grow = g.data() + o * group;
                const double* yrow = yv.data() + o * group;
                double* drow = an->grad.data() + o * group;
                double gmean = 0.0, gymean = 0.0;
                for (std::int64_t i = 0; i < group; ++i) {
                    gmean += grow[i];
                    gymean += grow[i] * yrow[i];
                }
                gmean *= inv_n;
                gymean *= inv_n;
                const double inv = invs[static_cast<std::size_t>(o)];
                for (std::int64_t i = 0; i < group; ++i)
                    drow[i] += inv * (grow[i] - gmean - yrow[i] * gymean);
            }
        });
    }
    return y;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    check_defined("layer_norm", {&a, &gain, &bias});
    if (a.dim() < 1) fail("layer_norm: input must have at least one axis");
    const int last = a.shape().back();
    if (gain.dim() != 1 || gain.shape()[0] != last || bias.dim() != 1 || bias.shape()[0] != last)
        fail("layer_norm: gain/bias must be length " + std::to_string(last) + ", got " +
             shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    return add(mul(normalize_last_axes(a, 1, eps), gain), bias);
}

}  // namespace modfuser
