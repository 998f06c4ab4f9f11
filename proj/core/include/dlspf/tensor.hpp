#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dlspf/errors.hpp"
#include "dlspf/rng.hpp"

namespace dlspf::ad {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. Arithmetic is carried out in double precision;
// tensors tagged f32 have every op result rounded through float so that
// values stay exactly representable in 32 bits (storage and checkpoint
// round-trips are bit-exact).
class Tensor {
public:
    struct Node {
        Shape shape;
        Dtype dtype = Dtype::f64;
        bool requires_grad = false;
        std::vector<double> value;
        std::vector<double> grad;  // empty until touched by backward()
    };

    Tensor() = default;
    Tensor(Shape shape, Dtype dtype, bool requires_grad = false);

    static Tensor zeros(Shape shape, Dtype dtype = Dtype::f64, bool requires_grad = false);
    static Tensor full(Shape shape, double v, Dtype dtype = Dtype::f64, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, Dtype dtype = Dtype::f64,
                            bool requires_grad = false);
    static Tensor identity(std::size_t n, Dtype dtype = Dtype::f64);
    // Gaussian fill, mean 0, given std.
    static Tensor randn(Shape shape, RngStream& rng, double std = 1.0, Dtype dtype = Dtype::f64,
                        bool requires_grad = false);
    // Glorot/Xavier uniform init for a [fan_in x fan_out] weight matrix.
    static Tensor xavier(std::size_t fan_in, std::size_t fan_out, RngStream& rng,
                         Dtype dtype = Dtype::f64, bool requires_grad = true);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t size() const { return n_->value.size(); }
    std::size_t extent(std::size_t axis) const { return n_->shape.at(axis); }
    Dtype dtype() const { return n_->dtype; }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }

    std::vector<double>& value() { return n_->value; }
    const std::vector<double>& value() const { return n_->value; }
    // Gradient accumulator; materializes a zero buffer on first access.
    std::vector<double>& grad();
    bool has_grad() const { return !n_->grad.empty(); }
    void zero_grad();

    double item() const;
    double at(std::initializer_list<std::size_t> idx) const;

    bool all_finite() const;
    // Independent copy of values (no tape participation).
    Tensor detached_copy() const;

    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

// Reverse-mode tape. Ops record themselves in execution order; replaying
// the records backwards visits every node after all of its consumers,
// i.e. reverse topological order, exactly once.
class GradientTape {
public:
    GradientTape();
    ~GradientTape();
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    static GradientTape* active();
    void record(std::function<void()> backward_fn);
    std::size_t num_ops() const { return ops_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape. `loss` must be scalar.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> ops_;
    GradientTape* prev_ = nullptr;
};

enum class Activation { identity, relu, tanh, gelu };
Activation activation_from_string(const std::string& name);
std::string to_string(Activation act);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);  // b may be a trailing-shape broadcast
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor reciprocal(const Tensor& a);
Tensor activate(const Tensor& a, Activation act);

// ---- linear algebra ----
// a: [..., m, k]; b: [k, n] or [..., k, n] with matching leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // swaps the last two axes

// ---- structure ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t lo, std::size_t hi);
// [..., C, X] -> [..., p, C*(X/p)]: contiguous patches, each flattened
// channel-major. patch_merge is the exact inverse.
Tensor patch_split(const Tensor& x, std::size_t p);
Tensor patch_merge(const Tensor& e, std::size_t channels, std::size_t patch_len);

// ---- normalization / attention pieces ----
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor softmax_lastdim(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Adds -1e9 above the main diagonal of the last two (square) axes.
Tensor causal_mask(const Tensor& scores);

// ---- reductions / losses ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_offdiag(const Tensor& a);  // a: [N, N]
Tensor mse(const Tensor& a, const Tensor& b);
Tensor sum_sq(const Tensor& a);

// D[i][j] = ||a_i - b_j||_2^2 for row vectors of a: [N, d], b: [M, d].
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);

// activation(x W + b); pass an undefined bias tensor to skip the bias.
Tensor dense(const Tensor& x, const Tensor& W, const Tensor& b, Activation act);

}  // namespace dlspf::ad
