#include "dlspf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dlspf::ad {

namespace {

constexpr double kMaskValue = -1e9;

void round_f32(Tensor::Node& n) {
    if (n.dtype != Dtype::f32) return;
    for (double& v : n.value) v = static_cast<double>(static_cast<float>(v));
}

std::vector<double>& grad_buf(const std::shared_ptr<Tensor::Node>& n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
    return n->grad;
}

bool grad_pending(const std::shared_ptr<Tensor::Node>& n) { return !n->grad.empty(); }

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw ShapeError(std::string(op) + ": dtype mismatch");
}

// b must have the same shape as a or a trailing-suffix shape of it.
std::size_t suffix_reps(const Tensor& a, const Tensor& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sa.size())
        throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " against " +
                         shape_str(sa));
    for (std::size_t i = 0; i < sb.size(); ++i) {
        if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i])
            throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(sa) + " vs " +
                             shape_str(sb));
    }
    return b.size() == 0 ? 0 : a.size() / b.size();
}

// C[m x n] += A[m x k] * B[k x n]
void mm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
           std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a[l];
            const double* brow = B + l * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
        }
    }
}

// C[m x k] += G[m x n] * B^T  (B is [k x n])
void mm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t n,
           std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        double* c = C + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const double* brow = B + l * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
            c[l] += acc;
        }
    }
}

// C[k x n] += A^T * G  (A is [m x k], G is [m x n])
void mm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k,
           std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        const double* g = G + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a[l];
            double* c = C + l * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * g[j];
        }
    }
}

struct AxisSplit {
    std::size_t outer;
    std::size_t n;
    std::size_t inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) throw ShapeError("axis out of range");
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

void maybe_record(bool want, std::function<void()> fn) {
    if (want && GradientTape::active()) GradientTape::active()->record(std::move(fn));
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, Dtype dtype, bool requires_grad) : n_(std::make_shared<Node>()) {
    for (std::size_t e : shape)
        if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
    n_->shape = std::move(shape);
    n_->dtype = dtype;
    n_->requires_grad = requires_grad;
    n_->value.assign(numel(n_->shape), 0.0);
}

Tensor Tensor::zeros(Shape shape, Dtype dtype, bool requires_grad) {
    return Tensor(std::move(shape), dtype, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, Dtype dtype, bool requires_grad) {
    Tensor t(std::move(shape), dtype, requires_grad);
    std::fill(t.value().begin(), t.value().end(), v);
    round_f32(*t.n_);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, Dtype dtype, bool requires_grad) {
    Tensor t(std::move(shape), dtype, requires_grad);
    if (data.size() != t.size())
        throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                         shape_str(t.shape()));
    t.n_->value = std::move(data);
    round_f32(*t.n_);
    return t;
}

Tensor Tensor::identity(std::size_t n, Dtype dtype) {
    Tensor t({n, n}, dtype, false);
    for (std::size_t i = 0; i < n; ++i) t.value()[i * n + i] = 1.0;
    return t;
}

Tensor Tensor::randn(Shape shape, RngStream& rng, double std, Dtype dtype, bool requires_grad) {
    Tensor t(std::move(shape), dtype, requires_grad);
    for (double& v : t.value()) v = rng.normal() * std;
    round_f32(*t.n_);
    return t;
}

Tensor Tensor::xavier(std::size_t fan_in, std::size_t fan_out, RngStream& rng, Dtype dtype,
                      bool requires_grad) {
    Tensor t({fan_in, fan_out}, dtype, requires_grad);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.value()) v = rng.uniform(-limit, limit);
    round_f32(*t.n_);
    return t;
}

std::vector<double>& Tensor::grad() { return grad_buf(n_); }

void Tensor::zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != rank()) throw ShapeError("at(): index rank mismatch");
    std::size_t off = 0;
    std::size_t i = 0;
    for (std::size_t v : idx) {
        if (v >= n_->shape[i]) throw ShapeError("at(): index out of range");
        off = off * n_->shape[i] + v;
        ++i;
    }
    return n_->value[off];
}

bool Tensor::all_finite() const {
    for (double v : n_->value)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::detached_copy() const {
    Tensor t(n_->shape, n_->dtype, false);
    t.n_->value = n_->value;
    return t;
}

// ---------------------------------------------------------------- tape

namespace {
thread_local GradientTape* g_active_tape = nullptr;
}

GradientTape::GradientTape() : prev_(g_active_tape) { g_active_tape = this; }

GradientTape::~GradientTape() { g_active_tape = prev_; }

GradientTape* GradientTape::active() { return g_active_tape; }

void GradientTape::record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
}

void GradientTape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward() requires a scalar loss");
    grad_buf(loss.node())[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------- activations

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "gelu") return Activation::gelu;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
    switch (act) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::gelu: return "gelu";
    }
    return "identity";
}

// ---------------------------------------------------------------- elementwise

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    check_same_dtype(a, b, name);
    const std::size_t reps = suffix_reps(a, b, name);
    (void)reps;
    const bool want = a.requires_grad() || b.requires_grad();
    Tensor out(a.shape(), a.dtype(), want);
    const std::size_t nb = b.size();
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i], bv[i % nb]);
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), bn = b.node(), on = out.node(), bwd] {
        if (!grad_pending(on)) return;
        bwd(an, bn, on);
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "add", [](double x, double y) { return x + y; },
        [](const auto& an, const auto& bn, const auto& on) {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& da = grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& db = grad_buf(bn);
                const std::size_t nb = db.size();
                for (std::size_t i = 0; i < g.size(); ++i) db[i % nb] += g[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](const auto& an, const auto& bn, const auto& on) {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& da = grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& db = grad_buf(bn);
                const std::size_t nb = db.size();
                for (std::size_t i = 0; i < g.size(); ++i) db[i % nb] -= g[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](const auto& an, const auto& bn, const auto& on) {
            const auto& g = on->grad;
            const std::size_t nb = bn->value.size();
            if (an->requires_grad) {
                auto& da = grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bn->value[i % nb];
            }
            if (bn->requires_grad) {
                auto& db = grad_buf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) db[i % nb] += g[i] * an->value[i];
            }
        });
}

Tensor add_scalar(const Tensor& a, double s) {
    const bool want = a.requires_grad();
    Tensor out(a.shape(), a.dtype(), want);
    for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] + s;
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node()] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += on->grad[i];
    });
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    const bool want = a.requires_grad();
    Tensor out(a.shape(), a.dtype(), want);
    for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * s;
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node(), s] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += on->grad[i] * s;
    });
    return out;
}

Tensor reciprocal(const Tensor& a) {
    const bool want = a.requires_grad();
    Tensor out(a.shape(), a.dtype(), want);
    for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = 1.0 / a.value()[i];
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node()] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        for (std::size_t i = 0; i < da.size(); ++i)
            da[i] -= on->grad[i] * on->value[i] * on->value[i];
    });
    return out;
}

Tensor activate(const Tensor& a, Activation act) {
    if (act == Activation::identity) return a;
    const bool want = a.requires_grad();
    Tensor out(a.shape(), a.dtype(), want);
    auto& ov = out.value();
    const auto& av = a.value();
    switch (act) {
        case Activation::relu:
            for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::tanh(av[i]);
            break;
        case Activation::gelu:
            for (std::size_t i = 0; i < av.size(); ++i)
                ov[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * M_SQRT1_2));
            break;
        default: break;
    }
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node(), act] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        const auto& g = on->grad;
        switch (act) {
            case Activation::relu:
                for (std::size_t i = 0; i < da.size(); ++i)
                    if (an->value[i] > 0.0) da[i] += g[i];
                break;
            case Activation::tanh:
                for (std::size_t i = 0; i < da.size(); ++i)
                    da[i] += g[i] * (1.0 - on->value[i] * on->value[i]);
                break;
            case Activation::gelu:
                for (std::size_t i = 0; i < da.size(); ++i) {
                    const double x = an->value[i];
                    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
                    da[i] += g[i] * (cdf + x * pdf);
                }
                break;
            default: break;
        }
    });
    return out;
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "matmul");
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: rank must be >= 2");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa[sa.size() - 1];
    const bool b_batched = sb.size() > 2;
    if (b_batched && sb.size() != sa.size())
        throw ShapeError("matmul: batched operands must have equal rank");
    const std::size_t kb = sb[sb.size() - 2];
    const std::size_t n = sb[sb.size() - 1];
    if (k != kb)
        throw ShapeError("matmul: inner extents differ, " + shape_str(sa) + " x " + shape_str(sb));
    Shape out_shape(sa.begin(), sa.end() - 2);
    if (b_batched) {
        for (std::size_t i = 0; i + 2 < sb.size(); ++i)
            if (sb[i] != sa[i]) throw ShapeError("matmul: leading batch dims differ");
    }
    const std::size_t batch = numel(out_shape);
    out_shape.push_back(m);
    out_shape.push_back(n);

    const bool want = a.requires_grad() || b.requires_grad();
    Tensor out(out_shape, a.dtype(), want);
    const std::size_t a_blk = m * k;
    const std::size_t b_blk = b_batched ? k * n : 0;
    const std::size_t o_blk = m * n;
    for (std::size_t bi = 0; bi < batch; ++bi)
        mm_nn(a.value().data() + bi * a_blk, b.value().data() + bi * b_blk,
              out.value().data() + bi * o_blk, m, k, n);
    round_f32(*out.node());

    maybe_record(want, [an = a.node(), bn = b.node(), on = out.node(), batch, m, k, n, a_blk,
                        b_blk, o_blk] {
        if (!grad_pending(on)) return;
        if (an->requires_grad) {
            auto& da = grad_buf(an);
            for (std::size_t bi = 0; bi < batch; ++bi)
                mm_nt(on->grad.data() + bi * o_blk, bn->value.data() + bi * b_blk,
                      da.data() + bi * a_blk, m, n, k);
        }
        if (bn->requires_grad) {
            auto& db = grad_buf(bn);
            for (std::size_t bi = 0; bi < batch; ++bi)
                mm_tn(an->value.data() + bi * a_blk, on->grad.data() + bi * o_blk,
                      db.data() + bi * b_blk, m, k, n);
        }
    });
    return out;
}

namespace {
void transpose_kernel(const double* in, double* out, std::size_t batch, std::size_t r,
                      std::size_t c, bool accumulate) {
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = in + b * r * c;
        double* dst = out + b * r * c;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                if (accumulate)
                    dst[j * r + i] += src[i * c + j];
                else
                    dst[j * r + i] = src[i * c + j];
            }
    }
}
}  // namespace

Tensor transpose(const Tensor& a) {
    if (a.rank() < 2) throw ShapeError("transpose: rank must be >= 2");
    Shape s = a.shape();
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    const std::size_t r = a.shape()[a.rank() - 2];
    const std::size_t c = a.shape()[a.rank() - 1];
    const std::size_t batch = a.size() / (r * c);
    const bool want = a.requires_grad();
    Tensor out(s, a.dtype(), want);
    transpose_kernel(a.value().data(), out.value().data(), batch, r, c, false);
    maybe_record(want, [an = a.node(), on = out.node(), batch, r, c] {
        if (!grad_pending(on)) return;
        transpose_kernel(on->grad.data(), grad_buf(an).data(), batch, c, r, true);
    });
    return out;
}

// ---------------------------------------------------------------- structure

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    const bool want = a.requires_grad();
    Tensor out(shape, a.dtype(), want);
    out.value() = a.value();
    maybe_record(want, [an = a.node(), on = out.node()] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += on->grad[i];
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
    std::size_t total_axis = 0;
    bool want = false;
    for (const Tensor& p : parts) {
        if (p.rank() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != axis && p.shape()[i] != s0[i]) throw ShapeError("concat: shape mismatch");
        check_same_dtype(parts[0], p, "concat");
        total_axis += p.shape()[axis];
        want = want || p.requires_grad();
    }
    Shape os = s0;
    os[axis] = total_axis;
    Tensor out(os, parts[0].dtype(), want);
    const AxisSplit sp = split_at(os, axis);
    std::size_t axis_off = 0;
    std::vector<std::shared_ptr<Tensor::Node>> nodes;
    std::vector<std::size_t> offsets;
    for (const Tensor& p : parts) {
        const std::size_t e = p.shape()[axis];
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::memcpy(out.value().data() + (o * total_axis + axis_off) * sp.inner,
                        p.value().data() + o * e * sp.inner, e * sp.inner * sizeof(double));
        nodes.push_back(p.node());
        offsets.push_back(axis_off);
        axis_off += e;
    }
    maybe_record(want, [nodes, offsets, on = out.node(), sp, total_axis, axis] {
        if (!grad_pending(on)) return;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
            const auto& pn = nodes[pi];
            if (!pn->requires_grad) continue;
            const std::size_t e = pn->shape[axis];
            auto& dp = grad_buf(pn);
            for (std::size_t o = 0; o < sp.outer; ++o) {
                const double* g = on->grad.data() + (o * total_axis + offsets[pi]) * sp.inner;
                double* d = dp.data() + o * e * sp.inner;
                for (std::size_t i = 0; i < e * sp.inner; ++i) d[i] += g[i];
            }
        }
    });
    return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t lo, std::size_t hi) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ShapeError("slice: axis out of range");
    if (lo >= hi || hi > s[axis]) throw ShapeError("slice: bad range");
    Shape os = s;
    os[axis] = hi - lo;
    const bool want = a.requires_grad();
    Tensor out(os, a.dtype(), want);
    const AxisSplit sp = split_at(s, axis);
    const std::size_t e = hi - lo;
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::memcpy(out.value().data() + o * e * sp.inner,
                    a.value().data() + (o * s[axis] + lo) * sp.inner,
                    e * sp.inner * sizeof(double));
    maybe_record(want, [an = a.node(), on = out.node(), sp, lo, e, full = s[axis]] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        for (std::size_t o = 0; o < sp.outer; ++o) {
            const double* g = on->grad.data() + o * e * sp.inner;
            double* d = da.data() + (o * full + lo) * sp.inner;
            for (std::size_t i = 0; i < e * sp.inner; ++i) d[i] += g[i];
        }
    });
    return out;
}

Tensor patch_split(const Tensor& x, std::size_t p) {
    if (x.rank() < 2) throw ShapeError("patch_split: rank must be >= 2");
    const Shape& s = x.shape();
    const std::size_t C = s[s.size() - 2];
    const std::size_t X = s[s.size() - 1];
    if (p == 0 || X % p != 0)
        throw ConfigError("patch_split: length " + std::to_string(X) + " not divisible into " +
                          std::to_string(p) + " patches");
    const std::size_t P = X / p;
    Shape os(s.begin(), s.end() - 2);
    os.push_back(p);
    os.push_back(C * P);
    const std::size_t batch = x.size() / (C * X);
    const bool want = x.requires_grad();
    Tensor out(os, x.dtype(), want);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = x.value().data() + b * C * X;
        double* dst = out.value().data() + b * C * X;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t j = 0; j < P; ++j)
                    dst[i * C * P + c * P + j] = src[c * X + i * P + j];
    }
    maybe_record(want, [xn = x.node(), on = out.node(), batch, p, C, P, X] {
        if (!grad_pending(on)) return;
        auto& dx = grad_buf(xn);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* g = on->grad.data() + b * C * X;
            double* d = dx.data() + b * C * X;
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t j = 0; j < P; ++j)
                        d[c * X + i * P + j] += g[i * C * P + c * P + j];
        }
    });
    return out;
}

Tensor patch_merge(const Tensor& e, std::size_t channels, std::size_t patch_len) {
    if (e.rank() < 2) throw ShapeError("patch_merge: rank must be >= 2");
    const Shape& s = e.shape();
    const std::size_t p = s[s.size() - 2];
    const std::size_t F = s[s.size() - 1];
    if (F != channels * patch_len)
        throw ShapeError("patch_merge: feature size " + std::to_string(F) + " != channels*patch_len");
    const std::size_t X = p * patch_len;
    Shape os(s.begin(), s.end() - 2);
    os.push_back(channels);
    os.push_back(X);
    const std::size_t batch = e.size() / (p * F);
    const bool want = e.requires_grad();
    Tensor out(os, e.dtype(), want);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = e.value().data() + b * p * F;
        double* dst = out.value().data() + b * p * F;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t j = 0; j < patch_len; ++j)
                    dst[c * X + i * patch_len + j] = src[i * F + c * patch_len + j];
    }
    maybe_record(want, [en = e.node(), on = out.node(), batch, p, channels, patch_len, F, X] {
        if (!grad_pending(on)) return;
        auto& de = grad_buf(en);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* g = on->grad.data() + b * p * F;
            double* d = de.data() + b * p * F;
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t j = 0; j < patch_len; ++j)
                        d[i * F + c * patch_len + j] += g[c * X + i * patch_len + j];
        }
    });
    return out;
}

// ---------------------------------------------------------------- softmax / layer norm

Tensor softmax(const Tensor& a, std::size_t axis) {
    const AxisSplit sp = split_at(a.shape(), axis);
    const bool want = a.requires_grad();
    Tensor out(a.shape(), a.dtype(), want);
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.n * sp.inner + in;
            double mx = av[base];
            for (std::size_t i = 1; i < sp.n; ++i)
                mx = std::max(mx, av[base + i * sp.inner]);
            double sum = 0.0;
            for (std::size_t i = 0; i < sp.n; ++i) {
                const double e = std::exp(av[base + i * sp.inner] - mx);
                ov[base + i * sp.inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::size_t i = 0; i < sp.n; ++i) ov[base + i * sp.inner] *= inv;
        }
    }
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node(), sp] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        const auto& g = on->grad;
        const auto& y = on->value;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.n * sp.inner + in;
                double dot = 0.0;
                for (std::size_t i = 0; i < sp.n; ++i)
                    dot += g[base + i * sp.inner] * y[base + i * sp.inner];
                for (std::size_t i = 0; i < sp.n; ++i) {
                    const std::size_t k = base + i * sp.inner;
                    da[k] += (g[k] - dot) * y[k];
                }
            }
        }
    });
    return out;
}

Tensor softmax_lastdim(const Tensor& a) { return softmax(a, a.rank() - 1); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = x.shape().back();
    if (gamma.size() != d || beta.size() != d)
        throw ShapeError("layer_norm: gamma/beta must have the feature extent");
    const std::size_t rows = x.size() / d;
    const bool want = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor out(x.shape(), x.dtype(), want);
    const auto& xv = x.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    auto& ov = out.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double ivar = 1.0 / std::sqrt(var + eps);
        double* orow = ov.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] = gv[j] * (row[j] - mean) * ivar + bv[j];
    }
    round_f32(*out.node());
    maybe_record(want, [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(), rows,
                        d, eps] {
        if (!grad_pending(on)) return;
        const auto& g = on->grad;
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = xn->value.data() + r * d;
            const double* grow = g.data() + r * d;
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += row[j];
            mean /= dd;
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= dd;
            const double ivar = 1.0 / std::sqrt(var + eps);
            if (gn->requires_grad) {
                auto& dg = grad_buf(gn);
                for (std::size_t j = 0; j < d; ++j)
                    dg[j] += grow[j] * (row[j] - mean) * ivar;
            }
            if (bn->requires_grad) {
                auto& db = grad_buf(bn);
                for (std::size_t j = 0; j < d; ++j) db[j] += grow[j];
            }
            if (xn->requires_grad) {
                auto& dx = grad_buf(xn);
                double sum_dxhat = 0.0;
                double sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double xhat = (row[j] - mean) * ivar;
                    const double dxhat = grow[j] * gn->value[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                double* dxr = dx.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) {
                    const double xhat = (row[j] - mean) * ivar;
                    const double dxhat = grow[j] * gn->value[j];
                    dxr[j] += ivar * (dxhat - sum_dxhat / dd - xhat * sum_dxhat_xhat / dd);
                }
            }
        }
    });
    return out;
}

Tensor causal_mask(const Tensor& scores) {
    if (scores.rank() < 2) throw ShapeError("causal_mask: rank must be >= 2");
    const std::size_t r = scores.shape()[scores.rank() - 2];
    const std::size_t c = scores.shape()[scores.rank() - 1];
    if (r != c) throw ShapeError("causal_mask: last two axes must be square");
    const std::size_t batch = scores.size() / (r * c);
    const bool want = scores.requires_grad();
    Tensor out(scores.shape(), scores.dtype(), want);
    out.value() = scores.value();
    for (std::size_t b = 0; b < batch; ++b) {
        double* m = out.value().data() + b * r * c;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = i + 1; j < c; ++j) m[i * c + j] += kMaskValue;
    }
    maybe_record(want, [an = scores.node(), on = out.node()] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += on->grad[i];
    });
    return out;
}

// ---------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& a) {
    const bool want = a.requires_grad();
    Tensor out({1}, a.dtype(), want);
    double s = 0.0;
    for (double v : a.value()) s += v;
    out.value()[0] = s;
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node()] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        const double g = on->grad[0];
        for (double& v : da) v += g;
    });
    return out;
}

Tensor mean_all(const Tensor& a) {
    const bool want = a.requires_grad();
    Tensor out({1}, a.dtype(), want);
    double s = 0.0;
    for (double v : a.value()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    out.value()[0] = s * inv;
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node(), inv] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        const double g = on->grad[0] * inv;
        for (double& v : da) v += g;
    });
    return out;
}

Tensor sum_offdiag(const Tensor& a) {
    if (a.rank() != 2 || a.shape()[0] != a.shape()[1])
        throw ShapeError("sum_offdiag: expects a square matrix");
    const std::size_t n = a.shape()[0];
    const bool want = a.requires_grad();
    Tensor out({1}, a.dtype(), want);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) s += a.value()[i * n + j];
    out.value()[0] = s;
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node(), n] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        const double g = on->grad[0];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) da[i * n + j] += g;
    });
    return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "mse");
    if (a.shape() != b.shape()) throw ShapeError("mse: shape mismatch");
    const bool want = a.requires_grad() || b.requires_grad();
    Tensor out({1}, a.dtype(), want);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    const double inv = 1.0 / static_cast<double>(a.size());
    out.value()[0] = s * inv;
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), bn = b.node(), on = out.node(), inv] {
        if (!grad_pending(on)) return;
        const double g = 2.0 * on->grad[0] * inv;
        if (an->requires_grad) {
            auto& da = grad_buf(an);
            for (std::size_t i = 0; i < da.size(); ++i)
                da[i] += g * (an->value[i] - bn->value[i]);
        }
        if (bn->requires_grad) {
            auto& db = grad_buf(bn);
            for (std::size_t i = 0; i < db.size(); ++i)
                db[i] -= g * (an->value[i] - bn->value[i]);
        }
    });
    return out;
}

Tensor sum_sq(const Tensor& a) {
    const bool want = a.requires_grad();
    Tensor out({1}, a.dtype(), want);
    double s = 0.0;
    for (double v : a.value()) s += v * v;
    out.value()[0] = s;
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), on = out.node()] {
        if (!grad_pending(on)) return;
        auto& da = grad_buf(an);
        const double g = 2.0 * on->grad[0];
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * an->value[i];
    });
    return out;
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "pairwise_sqdist");
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
        throw ShapeError("pairwise_sqdist: expects [N,d] and [M,d]");
    const std::size_t N = a.shape()[0];
    const std::size_t M = b.shape()[0];
    const std::size_t d = a.shape()[1];
    const bool want = a.requires_grad() || b.requires_grad();
    Tensor out({N, M}, a.dtype(), want);
    for (std::size_t i = 0; i < N; ++i) {
        const double* ai = a.value().data() + i * d;
        for (std::size_t j = 0; j < M; ++j) {
            const double* bj = b.value().data() + j * d;
            double s = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                const double diff = ai[l] - bj[l];
                s += diff * diff;
            }
            out.value()[i * M + j] = s;
        }
    }
    round_f32(*out.node());
    maybe_record(want, [an = a.node(), bn = b.node(), on = out.node(), N, M, d] {
        if (!grad_pending(on)) return;
        for (std::size_t i = 0; i < N; ++i) {
            const double* ai = an->value.data() + i * d;
            for (std::size_t j = 0; j < M; ++j) {
                const double g = 2.0 * on->grad[i * M + j];
                if (g == 0.0) continue;
                const double* bj = bn->value.data() + j * d;
                if (an->requires_grad) {
                    double* da = grad_buf(an).data() + i * d;
                    for (std::size_t l = 0; l < d; ++l) da[l] += g * (ai[l] - bj[l]);
                }
                if (bn->requires_grad) {
                    double* db = grad_buf(bn).data() + j * d;
                    for (std::size_t l = 0; l < d; ++l) db[l] -= g * (ai[l] - bj[l]);
                }
            }
        }
    });
    return out;
}

Tensor dense(const Tensor& x, const Tensor& W, const Tensor& b, Activation act) {
    Tensor y = matmul(x, W);
    if (b.defined()) y = add(y, b);
    return activate(y, act);
}

}  // namespace dlspf::ad
