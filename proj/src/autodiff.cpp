#include "asyncflow/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <sstream>

namespace asyncflow {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------- ParamSet

template <class T>
std::size_t ParamSet<T>::add(std::string name, Tensor<T> value) {
    ASYNCFLOW_EXPECT(!contains(name), "duplicate parameter name: " + name);
    params_.push_back({std::move(name), std::move(value)});
    return params_.size() - 1;
}

template <class T>
std::size_t ParamSet<T>::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw ContractViolation("no parameter named " + std::string(name));
}

template <class T>
bool ParamSet<T>::contains(std::string_view name) const {
    for (const auto& p : params_)
        if (p.name == name) return true;
    return false;
}

template <class T>
std::size_t ParamSet<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

template <class T>
std::vector<T> ParamSet<T>::flatten() const {
    std::vector<T> out;
    out.reserve(scalar_count());
    for (const auto& p : params_) out.insert(out.end(), p.value.vec().begin(), p.value.vec().end());
    return out;
}

template <class T>
void ParamSet<T>::assign_flat(std::span<const T> flat) {
    ASYNCFLOW_EXPECT(flat.size() == scalar_count(), "flat parameter vector has wrong length");
    std::size_t off = 0;
    for (auto& p : params_) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(),
                    p.value.vec().begin());
        off += p.value.size();
    }
}

// -------------------------------------------------------------------- Tape

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    n.op = "constant";
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.op = "leaf";
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::param(const ParamSet<T>& params, std::size_t id) {
    ASYNCFLOW_EXPECT(id < params.size(), "parameter id out of range");
    Node n;
    n.external = &params[id].value;
    n.op = "param";
    n.param_id = static_cast<long>(id);
    n.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, std::string_view op,
                       Backward backward) {
    Node n;
    n.owned = std::move(value);
    n.op = std::string(op);
    for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <class T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
}

template <class T>
void Tape<T>::accumulate(std::size_t id, const Tensor<T>& g) {
    if (!nodes_[id].requires_grad) return;
    if (!has_grad_[id]) {
        grads_[id] = g;
        has_grad_[id] = true;
        return;
    }
    auto& dst = grads_[id].vec();
    const auto& src = g.vec();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class T>
void Tape<T>::accumulate(std::size_t id, Tensor<T>&& g) {
    if (!nodes_[id].requires_grad) return;
    if (!has_grad_[id]) {
        grads_[id] = std::move(g);
        has_grad_[id] = true;
        return;
    }
    accumulate(id, static_cast<const Tensor<T>&>(g));
}

template <class T>
void Tape<T>::run_backward(Var<T> loss) {
    ASYNCFLOW_EXPECT(loss.tape == this, "loss belongs to a different tape");
    ASYNCFLOW_EXPECT(value(loss.id).size() == 1 && value(loss.id).rank() == 0,
                     "grad() requires a scalar loss, got shape " + shape_str(value(loss.id).shape()));
    grads_.assign(nodes_.size(), Tensor<T>());
    has_grad_.assign(nodes_.size(), false);
    if (!nodes_[loss.id].requires_grad) return;
    grads_[loss.id] = Tensor<T>::scalar(T(1));
    has_grad_[loss.id] = true;
    for (std::size_t k = loss.id + 1; k-- > 0;) {
        if (!has_grad_[k]) continue;
        Node& n = nodes_[k];
        if (n.inputs.empty()) continue;
        if (!n.backward) throw UnsupportedOp(n.op);
        n.backward(*this, k, grads_[k]);
    }
}

template <class T>
Gradients<T> Tape<T>::grad(Var<T> loss, std::size_t param_count) {
    run_backward(loss);
    Gradients<T> out(param_count);
    std::vector<bool> seen(param_count, false);
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
        const Node& n = nodes_[k];
        if (n.param_id < 0) continue;
        auto pid = static_cast<std::size_t>(n.param_id);
        ASYNCFLOW_EXPECT(pid < param_count, "parameter id exceeds param_count");
        if (!seen[pid]) {
            out[pid] = Tensor<T>(n.external->shape(), T(0));
            seen[pid] = true;
        }
        if (!has_grad_[k]) continue;
        auto& dst = out[pid].vec();
        const auto& src = grads_[k].vec();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    return out;
}

template <class T>
std::vector<Tensor<T>> Tape<T>::grad_wrt(Var<T> loss, const std::vector<Var<T>>& leaves) {
    run_backward(loss);
    std::vector<Tensor<T>> out;
    out.reserve(leaves.size());
    for (const auto& l : leaves) {
        if (has_grad_[l.id])
            out.push_back(grads_[l.id]);
        else
            out.emplace_back(value(l.id).shape(), T(0));
    }
    return out;
}

// ---------------------------------------------------------------- helpers

namespace {

template <class T>
void same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    ASYNCFLOW_EXPECT(a.tape == b.tape, std::string(op) + ": operands on different tapes");
    ASYNCFLOW_EXPECT(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                                 shape_str(a.shape()) + " vs " +
                                                 shape_str(b.shape()));
}

template <class T, class F>
Var<T> unary(Var<T> a, const char* op, F f, std::function<T(T x, T y)> dydx) {
    const Tensor<T>& x = a.value();
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return a.tape->record(std::move(y), {a.id}, op,
                          [dydx](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              const auto in = t.inputs(self)[0];
                              const Tensor<T>& xv = t.value(in);
                              const Tensor<T>& yv = t.value(self);
                              Tensor<T> gx(xv.shape());
                              for (std::size_t i = 0; i < gx.size(); ++i)
                                  gx[i] = g[i] * dydx(xv[i], yv[i]);
                              t.accumulate(in, std::move(gx));
                          });
}

// Splits `shape` around `axis` into (outer, extent, inner) for slicing.
inline void split_axis(const Shape& shape, int axis, std::size_t& outer, std::size_t& extent,
                       std::size_t& inner, std::size_t& ax) {
    const int r = static_cast<int>(shape.size());
    const int a = axis < 0 ? axis + r : axis;
    ASYNCFLOW_EXPECT(a >= 0 && a < r, "axis out of range for shape " + shape_str(shape));
    ax = static_cast<std::size_t>(a);
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
    extent = shape[ax];
    for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
}

// Strides of `from` aligned to `to` (0 for broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to) {
    ASYNCFLOW_EXPECT(from.size() <= to.size(),
                     "cannot broadcast " + shape_str(from) + " to " + shape_str(to));
    std::vector<std::size_t> strides(to.size(), 0);
    const std::size_t off = to.size() - from.size();
    std::size_t stride = 1;
    for (std::size_t i = from.size(); i-- > 0;) {
        ASYNCFLOW_EXPECT(from[i] == to[i + off] || from[i] == 1,
                         "cannot broadcast " + shape_str(from) + " to " + shape_str(to));
        strides[i + off] = from[i] == 1 ? 0 : stride;
        stride *= from[i];
    }
    return strides;
}

template <class F>
void for_each_broadcast(const Shape& to, const std::vector<std::size_t>& strides, F f) {
    const std::size_t total = shape_size(to);
    std::vector<std::size_t> idx(to.size(), 0);
    std::size_t src = 0;
    for (std::size_t out = 0; out < total; ++out) {
        f(out, src);
        for (std::size_t d = to.size(); d-- > 0;) {
            ++idx[d];
            src += strides[d];
            if (idx[d] < to[d]) break;
            src -= strides[d] * to[d];
            idx[d] = 0;
        }
    }
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;

}  // namespace

// -------------------------------------------------------------- elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    same_shape(a, b, "add");
    const auto& x = a.value();
    const auto& y = b.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return a.tape->record(std::move(out), {a.id, b.id}, "add",
                          [](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              t.accumulate(t.inputs(self)[0], g);
                              t.accumulate(t.inputs(self)[1], g);
                          });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    same_shape(a, b, "sub");
    const auto& x = a.value();
    const auto& y = b.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return a.tape->record(std::move(out), {a.id, b.id}, "sub",
                          [](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              t.accumulate(t.inputs(self)[0], g);
                              Tensor<T> ng = g;
                              for (auto& v : ng.vec()) v = -v;
                              t.accumulate(t.inputs(self)[1], std::move(ng));
                          });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    same_shape(a, b, "mul");
    const auto& x = a.value();
    const auto& y = b.value();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return a.tape->record(std::move(out), {a.id, b.id}, "mul",
                          [](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              const auto ia = t.inputs(self)[0];
                              const auto ib = t.inputs(self)[1];
                              const auto& xv = t.value(ia);
                              const auto& yv = t.value(ib);
                              if (t.requires_grad(ia)) {
                                  Tensor<T> ga(xv.shape());
                                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * yv[i];
                                  t.accumulate(ia, std::move(ga));
                              }
                              if (t.requires_grad(ib)) {
                                  Tensor<T> gb(yv.shape());
                                  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = g[i] * xv[i];
                                  t.accumulate(ib, std::move(gb));
                              }
                          });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
    return unary<T>(a, "scale", [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
    return unary<T>(a, "add_scalar", [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> exp(Var<T> a) {
    return unary<T>(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(Var<T> a) {
    return unary<T>(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var<T> tanh(Var<T> a) {
    return unary<T>(a, "tanh", [](T x) { return std::tanh(x); },
                    [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> silu(Var<T> a) {
    return unary<T>(
        a, "silu", [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <class T>
Var<T> gelu(Var<T> a) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    return unary<T>(
        a, "gelu",
        [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
        [](T x, T) {
            const T u = c * (x + k * x * x * x);
            const T th = std::tanh(u);
            const T du = c * (T(1) + T(3) * k * x * x);
            return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
        });
}

template <class T>
Var<T> clamp(Var<T> a, T lo, T hi) {
    ASYNCFLOW_EXPECT(lo <= hi, "clamp: lo > hi");
    return unary<T>(
        a, "clamp", [lo, hi](T x) { return std::clamp(x, lo, hi); },
        [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <class T>
Var<T> masked_fill(Var<T> a, const std::vector<std::uint8_t>& mask, T value) {
    const auto& x = a.value();
    ASYNCFLOW_EXPECT(mask.size() == x.size(), "masked_fill: mask size mismatch");
    Tensor<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i]) out[i] = value;
    return a.tape->record(std::move(out), {a.id}, "masked_fill",
                          [mask](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              Tensor<T> gx = g;
                              for (std::size_t i = 0; i < gx.size(); ++i)
                                  if (mask[i]) gx[i] = T(0);
                              t.accumulate(t.inputs(self)[0], std::move(gx));
                          });
}

// -------------------------------------------------------------------- shape

template <class T>
Var<T> broadcast_to(Var<T> a, const Shape& shape) {
    const auto& x = a.value();
    if (x.shape() == shape) return a;
    auto strides = broadcast_strides(x.shape(), shape);
    Tensor<T> out(shape);
    for_each_broadcast(shape, strides, [&](std::size_t o, std::size_t s) { out[o] = x[s]; });
    return a.tape->record(std::move(out), {a.id}, "broadcast",
                          [strides, shape](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              const auto in = t.inputs(self)[0];
                              Tensor<T> gx(t.value(in).shape(), T(0));
                              for_each_broadcast(shape, strides,
                                                 [&](std::size_t o, std::size_t s) { gx[s] += g[o]; });
                              t.accumulate(in, std::move(gx));
                          });
}

template <class T>
Var<T> reshape(Var<T> a, const Shape& shape) {
    Tensor<T> out = a.value().reshaped(shape);
    return a.tape->record(std::move(out), {a.id}, "reshape",
                          [](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              const auto in = t.inputs(self)[0];
                              t.accumulate(in, g.reshaped(t.value(in).shape()));
                          });
}

namespace {

template <class T>
Tensor<T> swap_last_two(const Tensor<T>& x) {
    ASYNCFLOW_EXPECT(x.rank() >= 2, "transpose requires rank >= 2");
    const std::size_t m = x.dim(-2), n = x.dim(-1);
    const std::size_t batch = x.size() / (m * n);
    Shape s = x.shape();
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    Tensor<T> out(s);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out[b * m * n + j * m + i] = x[b * m * n + i * n + j];
    return out;
}

}  // namespace

template <class T>
Var<T> transpose(Var<T> a) {
    return a.tape->record(swap_last_two(a.value()), {a.id}, "transpose",
                          [](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              t.accumulate(t.inputs(self)[0], swap_last_two(g));
                          });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    ASYNCFLOW_EXPECT(!parts.empty(), "concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    std::size_t outer, extent, inner, ax;
    split_axis(s0, axis, outer, extent, inner, ax);
    std::size_t total = 0;
    std::vector<std::size_t> extents, ids;
    for (const auto& p : parts) {
        Shape s = p.shape();
        ASYNCFLOW_EXPECT(s.size() == s0.size(), "concat: rank mismatch");
        const std::size_t e = s[ax];
        s[ax] = s0[ax];
        ASYNCFLOW_EXPECT(s == s0, "concat: incompatible shapes");
        extents.push_back(e);
        ids.push_back(p.id);
        total += e;
    }
    Shape out_shape = s0;
    out_shape[ax] = total;
    Tensor<T> out(out_shape);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& x = parts[p].value();
        const std::size_t e = extents[p];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x.vec().begin() + static_cast<std::ptrdiff_t>(o * e * inner), e * inner,
                        out.vec().begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
        offset += e;
    }
    return parts[0].tape->record(
        std::move(out), ids, "concat",
        [extents, outer, inner, total](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
            const auto& in = t.inputs(self);
            std::size_t offset = 0;
            for (std::size_t p = 0; p < in.size(); ++p) {
                const std::size_t e = extents[p];
                if (t.requires_grad(in[p])) {
                    Tensor<T> gp(t.value(in[p]).shape());
                    for (std::size_t o = 0; o < outer; ++o)
                        std::copy_n(g.vec().begin() +
                                        static_cast<std::ptrdiff_t>((o * total + offset) * inner),
                                    e * inner,
                                    gp.vec().begin() + static_cast<std::ptrdiff_t>(o * e * inner));
                    t.accumulate(in[p], std::move(gp));
                }
                offset += e;
            }
        });
}

template <class T>
Var<T> slice(Var<T> a, int axis, std::size_t begin, std::size_t end) {
    const auto& x = a.value();
    std::size_t outer, extent, inner, ax;
    split_axis(x.shape(), axis, outer, extent, inner, ax);
    ASYNCFLOW_EXPECT(begin < end && end <= extent, "slice bounds out of range");
    const std::size_t len = end - begin;
    Shape s = x.shape();
    s[ax] = len;
    Tensor<T> out(s);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.vec().begin() + static_cast<std::ptrdiff_t>((o * extent + begin) * inner),
                    len * inner, out.vec().begin() + static_cast<std::ptrdiff_t>(o * len * inner));
    return a.tape->record(
        std::move(out), {a.id}, "slice",
        [outer, extent, inner, begin, len](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
            const auto in = t.inputs(self)[0];
            Tensor<T> gx(t.value(in).shape(), T(0));
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(g.vec().begin() + static_cast<std::ptrdiff_t>(o * len * inner),
                            len * inner,
                            gx.vec().begin() +
                                static_cast<std::ptrdiff_t>((o * extent + begin) * inner));
            t.accumulate(in, std::move(gx));
        });
}

// ------------------------------------------------------------------ matmul

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const auto& x = a.value();
    const auto& w = b.value();
    ASYNCFLOW_EXPECT(x.rank() >= 2 && (w.rank() == 2 || w.rank() == 3),
                     "matmul: unsupported ranks " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
    if (w.rank() == 2) {
        const std::size_t k = x.dim(-1), n = w.dim(-1);
        ASYNCFLOW_EXPECT(w.dim(0) == k, "matmul: inner dimension mismatch " +
                                            shape_str(x.shape()) + " x " + shape_str(w.shape()));
        const std::size_t rows = x.size() / k;
        Shape s = x.shape();
        s.back() = n;
        Tensor<T> out(s);
        MMap<T>(out.vec().data(), rows, n).noalias() =
            CMap<T>(x.vec().data(), rows, k) * CMap<T>(w.vec().data(), k, n);
        return a.tape->record(
            std::move(out), {a.id, b.id}, "matmul",
            [rows, k, n](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                const auto ia = t.inputs(self)[0];
                const auto ib = t.inputs(self)[1];
                CMap<T> G(g.vec().data(), rows, n);
                if (t.requires_grad(ia)) {
                    Tensor<T> ga(t.value(ia).shape());
                    MMap<T>(ga.vec().data(), rows, k).noalias() =
                        G * CMap<T>(t.value(ib).vec().data(), k, n).transpose();
                    t.accumulate(ia, std::move(ga));
                }
                if (t.requires_grad(ib)) {
                    Tensor<T> gb(t.value(ib).shape());
                    MMap<T>(gb.vec().data(), k, n).noalias() =
                        CMap<T>(t.value(ia).vec().data(), rows, k).transpose() * G;
                    t.accumulate(ib, std::move(gb));
                }
            });
    }
    ASYNCFLOW_EXPECT(x.rank() == 3 && x.dim(0) == w.dim(0) && x.dim(2) == w.dim(1),
                     "matmul: batched shape mismatch " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
    const std::size_t batch = x.dim(0), m = x.dim(1), k = x.dim(2), n = w.dim(2);
    Tensor<T> out(Shape{batch, m, n});
    for (std::size_t bi = 0; bi < batch; ++bi)
        MMap<T>(out.vec().data() + bi * m * n, m, n).noalias() =
            CMap<T>(x.vec().data() + bi * m * k, m, k) * CMap<T>(w.vec().data() + bi * k * n, k, n);
    return a.tape->record(
        std::move(out), {a.id, b.id}, "matmul",
        [batch, m, k, n](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
            const auto ia = t.inputs(self)[0];
            const auto ib = t.inputs(self)[1];
            const auto& xv = t.value(ia);
            const auto& wv = t.value(ib);
            const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
            Tensor<T> ga(need_a ? xv.shape() : Shape{1});
            Tensor<T> gb(need_b ? wv.shape() : Shape{1});
            for (std::size_t bi = 0; bi < batch; ++bi) {
                CMap<T> G(g.vec().data() + bi * m * n, m, n);
                if (need_a)
                    MMap<T>(ga.vec().data() + bi * m * k, m, k).noalias() =
                        G * CMap<T>(wv.vec().data() + bi * k * n, k, n).transpose();
                if (need_b)
                    MMap<T>(gb.vec().data() + bi * k * n, k, n).noalias() =
                        CMap<T>(xv.vec().data() + bi * m * k, m, k).transpose() * G;
            }
            if (need_a) t.accumulate(ia, std::move(ga));
            if (need_b) t.accumulate(ib, std::move(gb));
        });
}

// --------------------------------------------------------------- reductions

template <class T>
Var<T> sum(Var<T> a) {
    const auto& x = a.value();
    double acc = 0.0;
    for (auto v : x.vec()) acc += static_cast<double>(v);
    return a.tape->record(Tensor<T>::scalar(static_cast<T>(acc)), {a.id}, "sum",
                          [](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              const auto in = t.inputs(self)[0];
                              t.accumulate(in, Tensor<T>(t.value(in).shape(), g.item()));
                          });
}

template <class T>
Var<T> sum_last(Var<T> a) {
    const auto& x = a.value();
    ASYNCFLOW_EXPECT(x.rank() >= 1, "sum_last requires rank >= 1");
    const std::size_t n = x.dim(-1), rows = x.size() / n;
    Shape s(x.shape().begin(), x.shape().end() - 1);
    Tensor<T> out(s);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(x[r * n + j]);
        out[r] = static_cast<T>(acc);
    }
    return a.tape->record(std::move(out), {a.id}, "sum_last",
                          [rows, n](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              const auto in = t.inputs(self)[0];
                              Tensor<T> gx(t.value(in).shape());
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t j = 0; j < n; ++j) gx[r * n + j] = g[r];
                              t.accumulate(in, std::move(gx));
                          });
}

template <class T>
Var<T> mean(Var<T> a) {
    const T inv = T(1) / static_cast<T>(a.value().size());
    return scale(sum(a), inv);
}

// ------------------------------------------------------------ normalisation

template <class T>
Var<T> softmax(Var<T> a) {
    const auto& x = a.value();
    const std::size_t n = x.dim(-1), rows = x.size() / n;
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xi = x.vec().data() + r * n;
        T* yi = y.vec().data() + r * n;
        const T mx = *std::max_element(xi, xi + n);
        ASYNCFLOW_EXPECT(std::isfinite(mx), "softmax: row has no finite entry");
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) z += (yi[j] = std::exp(xi[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yi[j] /= z;
    }
    return a.tape->record(std::move(y), {a.id}, "softmax",
                          [rows, n](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              const auto& yv = t.value(self);
                              Tensor<T> gx(yv.shape());
                              for (std::size_t r = 0; r < rows; ++r) {
                                  T dot = 0;
                                  for (std::size_t j = 0; j < n; ++j)
                                      dot += g[r * n + j] * yv[r * n + j];
                                  for (std::size_t j = 0; j < n; ++j)
                                      gx[r * n + j] = yv[r * n + j] * (g[r * n + j] - dot);
                              }
                              t.accumulate(t.inputs(self)[0], std::move(gx));
                          });
}

template <class T>
Var<T> log_softmax(Var<T> a) {
    const auto& x = a.value();
    const std::size_t n = x.dim(-1), rows = x.size() / n;
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xi = x.vec().data() + r * n;
        T* yi = y.vec().data() + r * n;
        const T mx = *std::max_element(xi, xi + n);
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
        const T lse = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) yi[j] = xi[j] - lse;
    }
    return a.tape->record(std::move(y), {a.id}, "log_softmax",
                          [rows, n](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
                              const auto& yv = t.value(self);
                              Tensor<T> gx(yv.shape());
                              for (std::size_t r = 0; r < rows; ++r) {
                                  T gs = 0;
                                  for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
                                  for (std::size_t j = 0; j < n; ++j)
                                      gx[r * n + j] = g[r * n + j] - std::exp(yv[r * n + j]) * gs;
                              }
                              t.accumulate(t.inputs(self)[0], std::move(gx));
                          });
}

template <class T>
Var<T> layer_norm(Var<T> a, T eps) {
    const auto& x = a.value();
    const std::size_t n = x.dim(-1), rows = x.size() / n;
    Tensor<T> y(x.shape());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xi = x.vec().data() + r * n;
        T mu = 0;
        for (std::size_t j = 0; j < n; ++j) mu += xi[j];
        mu /= static_cast<T>(n);
        T var = 0;
        for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<T>(n);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] = (xi[j] - mu) * inv_std[r];
    }
    return a.tape->record(
        std::move(y), {a.id}, "layer_norm",
        [rows, n, inv_std](Tape<T>& t, std::size_t self, const Tensor<T>& g) {
            const auto& yv = t.value(self);
            Tensor<T> gx(yv.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                T gm = 0, gym = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    gm += g[r * n + j];
                    gym += g[r * n + j] * yv[r * n + j];
                }
                gm /= static_cast<T>(n);
                gym /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j)
                    gx[r * n + j] = inv_std[r] * (g[r * n + j] - gm - yv[r * n + j] * gym);
            }
            t.accumulate(t.inputs(self)[0], std::move(gx));
        });
}

// ---------------------------------------------------------- instantiation

#define ASYNCFLOW_INSTANTIATE(T)                                                        \
    template class ParamSet<T>;                                                         \
    template class Tape<T>;                                                             \
    template Var<T> add(Var<T>, Var<T>);                                                \
    template Var<T> sub(Var<T>, Var<T>);                                                \
    template Var<T> mul(Var<T>, Var<T>);                                                \
    template Var<T> scale(Var<T>, T);                                                   \
    template Var<T> add_scalar(Var<T>, T);                                              \
    template Var<T> exp(Var<T>);                                                        \
    template Var<T> log(Var<T>);                                                        \
    template Var<T> tanh(Var<T>);                                                       \
    template Var<T> silu(Var<T>);                                                       \
    template Var<T> gelu(Var<T>);                                                       \
    template Var<T> clamp(Var<T>, T, T);                                                \
    template Var<T> masked_fill(Var<T>, const std::vector<std::uint8_t>&, T);           \
    template Var<T> broadcast_to(Var<T>, const Shape&);                                 \
    template Var<T> reshape(Var<T>, const Shape&);                                      \
    template Var<T> transpose(Var<T>);                                                  \
    template Var<T> concat(const std::vector<Var<T>>&, int);                            \
    template Var<T> slice(Var<T>, int, std::size_t, std::size_t);                       \
    template Var<T> matmul(Var<T>, Var<T>);                                             \
    template Var<T> sum(Var<T>);                                                        \
    template Var<T> sum_last(Var<T>);                                                   \
    template Var<T> mean(Var<T>);                                                       \
    template Var<T> softmax(Var<T>);                                                    \
    template Var<T> log_softmax(Var<T>);                                                \
    template Var<T> layer_norm(Var<T>, T);

ASYNCFLOW_INSTANTIATE(float)
ASYNCFLOW_INSTANTIATE(double)

}  // namespace asyncflow
