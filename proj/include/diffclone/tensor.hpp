#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "diffclone/errors.hpp"
#include "diffclone/rng.hpp"

namespace diffclone {

// Dense 64-bit float array with optional reverse-mode gradient. Copies are
// shallow: two Tensor values may share the same storage and gradient, which
// is what lets the tape refer back to the tensors an op consumed.
//
// Operations on tensors that require grad are recorded on a thread-local
// tape; backward(loss) replays the tape in reverse, accumulates gradients
// additively, and clears the tape. While a tensor participates in the live
// (uncleared) tape its storage is write-locked; data_mut() throws.
class Tensor {
public:
    Tensor();  // scalar zero

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_vector(std::vector<int> shape, std::vector<double> data,
                              bool requires_grad = false);
    // Entries drawn uniformly from [-bound, bound].
    static Tensor uniform(std::vector<int> shape, double bound, Rng& rng,
                          bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, bool requires_grad = false);

    const std::vector<int>& shape() const;
    std::int64_t size() const;
    int dim(int i) const;
    bool requires_grad() const;

    std::span<const double> data() const;
    std::span<double> data_mut();  // UsageError while part of the live graph
    double at(std::int64_t flat_index) const;
    double item() const;  // UsageError unless scalar

    bool has_grad() const;
    std::span<const double> grad() const;  // UsageError when no grad present
    void zero_grad();

    // Deep copy of data (never shares storage; grad not copied).
    Tensor clone() const;
    // Copy of the data with no grad tracking (stop-gradient).
    Tensor detached() const;

    bool all_finite() const;

    struct Impl;
    const std::shared_ptr<Impl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<Impl> impl_;
    friend struct TensorAccess;
};

// --- autodiff graph control ----------------------------------------------

// Runs reverse-mode accumulation from a scalar loss over the recorded tape,
// then clears the tape. Gradients add onto any existing ones.
void backward(const Tensor& loss);

// Number of op records currently on this thread's tape.
std::int64_t graph_size();

// Drops all recorded operations without running backward.
void clear_graph();

// Disables recording (and grad propagation) for the guard's lifetime.
// Used by inference paths so forward passes stay side-effect free.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// --- differentiable ops ---------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// a: [m, k], b: [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

// input: [c_in, l], kernel: [c_out, c_in, k] -> [c_out, l_out]
// Cross-correlation with zero padding; stride 1 or 2, odd k.
Tensor conv1d(const Tensor& input, const Tensor& kernel, int stride, int padding);

// input: [c, l]; per-group standardization (eps inside the sqrt), then
// per-channel affine scale/shift.
Tensor group_norm(const Tensor& input, int groups, const Tensor& scale,
                  const Tensor& shift, double eps = 1e-5);

// h: [c, l], gamma/beta: [c] -> gamma[c] * h[c,l] + beta[c]
Tensor film(const Tensor& h, const Tensor& gamma, const Tensor& beta);

// h: [c, l], bias: [c]
Tensor channel_bias(const Tensor& h, const Tensor& bias);

// x: [n] or [b, n]; w: [m, n]; bias: [m] -> [m] or [b, m]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor mish(const Tensor& x);  // x * tanh(softplus(x))
Tensor relu(const Tensor& x);

// a: [c1, l], b: [c2, l] -> [c1+c2, l]
Tensor concat_channels(const Tensor& a, const Tensor& b);

// x: [m, n] -> [n, m]
Tensor transpose2d(const Tensor& x);

// x: [c, l] -> [c, 2l], each entry repeated
Tensor upsample_nearest2(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// x / ||x||_2 for a vector; UsageError on zero norm.
Tensor l2_normalize(const Tensor& x);

}  // namespace diffclone
