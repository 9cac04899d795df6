#include "diffclone/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "diffclone/kernels.hpp"
#include "tape.hpp"

namespace diffclone {

namespace detail {

Tape& tape() {
    thread_local Tape t;
    return t;
}

bool should_record(bool any_requires_grad) {
    return any_requires_grad && tape().grad_enabled;
}

void mark_in_graph(const std::shared_ptr<Tensor::Impl>& impl) {
    auto& t = tape();
    if (impl->graph_epoch == t.epoch) return;
    impl->graph_epoch = t.epoch;
    if (impl->requires_grad) t.participants.push_back(impl);
}

void push_record(const char* op, std::function<void()> backward) {
    tape().records.push_back({op, std::move(backward)});
}

std::vector<double>& grad_buf(Tensor::Impl& impl) {
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
    return impl.grad;
}

Tensor make_tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    auto impl = std::make_shared<Tensor::Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return TensorAccess::wrap(std::move(impl));
}

}  // namespace detail

Tensor TensorAccess::wrap(std::shared_ptr<Tensor::Impl> impl) { return Tensor(std::move(impl)); }

namespace {

using detail::grad_buf;
using detail::make_tensor;
using detail::mark_in_graph;
using detail::push_record;
using detail::should_record;
using detail::tape;

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

// Registers a record when needed and returns the output with the proper
// requires_grad flag. `impls` are every tensor the closure touches.
template <typename Fn>
Tensor finish_op(const char* name, Tensor out, bool any_rg,
                 std::initializer_list<std::shared_ptr<Tensor::Impl>> impls, Fn&& backward) {
    if (should_record(any_rg)) {
        out.impl()->requires_grad = true;
        for (const auto& impl : impls) mark_in_graph(impl);
        mark_in_graph(out.impl());
        push_record(name, std::forward<Fn>(backward));
    }
    return out;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

}  // namespace

// --- Tensor basics ---------------------------------------------------------

Tensor::Tensor() : impl_(std::make_shared<Impl>()) {
    impl_->shape = {1};
    impl_->data = {0.0};
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::int64_t n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                       requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    std::int64_t n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                       requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return make_tensor({1}, {value}, requires_grad);
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("from_vector: data length does not match shape " + shape_str(shape));
    }
    return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::uniform(std::vector<int> shape, double bound, Rng& rng, bool requires_grad) {
    std::int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, bool requires_grad) {
    std::int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = rng.normal();
    return make_tensor(std::move(shape), std::move(data), requires_grad);
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::size() const { return impl_->size(); }

int Tensor::dim(int i) const {
    if (i < 0 || i >= static_cast<int>(impl_->shape.size())) {
        throw UsageError("dim index out of range");
    }
    return impl_->shape[static_cast<std::size_t>(i)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::data_mut() {
    if (impl_->graph_epoch == tape().epoch && !tape().records.empty()) {
        throw UsageError("cannot mutate a tensor participating in the live graph");
    }
    return impl_->data;
}

double Tensor::at(std::int64_t flat_index) const {
    if (flat_index < 0 || flat_index >= size()) throw UsageError("flat index out of range");
    return impl_->data[static_cast<std::size_t>(flat_index)];
}

double Tensor::item() const {
    if (size() != 1) throw UsageError("item(): tensor is not scalar");
    return impl_->data[0];
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (impl_->grad.empty()) throw UsageError("tensor has no gradient");
    return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
    return make_tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

Tensor Tensor::detached() const {
    auto impl = std::make_shared<Impl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = false;
    return TensorAccess::wrap(std::move(impl));
}

bool Tensor::all_finite() const {
    for (double v : impl_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// --- graph control ---------------------------------------------------------

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw UsageError("backward: loss must be scalar");
    auto& t = tape();
    if (!loss.requires_grad() || loss.impl()->graph_epoch != t.epoch || t.records.empty()) {
        throw UsageError("backward: loss is not part of a recorded graph");
    }
    grad_buf(*loss.impl())[0] += 1.0;
    for (auto it = t.records.rbegin(); it != t.records.rend(); ++it) {
        it->backward();
    }
    // Anything recorded but unreachable from the loss still gets a (zero)
    // gradient, so grad() is well-defined on every participant.
    for (const auto& impl : t.participants) grad_buf(*impl);
    t.records.clear();
    t.participants.clear();
    ++t.epoch;
}

std::int64_t graph_size() { return static_cast<std::int64_t>(tape().records.size()); }

void clear_graph() {
    auto& t = tape();
    t.records.clear();
    t.participants.clear();
    ++t.epoch;
}

NoGradGuard::NoGradGuard() : prev_(tape().grad_enabled) { tape().grad_enabled = false; }

NoGradGuard::~NoGradGuard() { tape().grad_enabled = prev_; }

bool grad_enabled() { return tape().grad_enabled; }

// --- elementwise ops -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::int64_t i = 0; i < b.size(); ++i) out[static_cast<std::size_t>(i)] += b.at(i);
    Tensor y = make_tensor(a.shape(), std::move(out), false);
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    return finish_op("add", y, a.requires_grad() || b.requires_grad(), {ai, bi, yi}, [ai, bi, yi] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty()) return;
        if (ai->requires_grad) {
            auto& ga = grad_buf(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
            auto& gb = grad_buf(*bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::int64_t i = 0; i < b.size(); ++i) out[static_cast<std::size_t>(i)] -= b.at(i);
    Tensor y = make_tensor(a.shape(), std::move(out), false);
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    return finish_op("sub", y, a.requires_grad() || b.requires_grad(), {ai, bi, yi}, [ai, bi, yi] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty()) return;
        if (ai->requires_grad) {
            auto& ga = grad_buf(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
            auto& gb = grad_buf(*bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(static_cast<std::size_t>(a.size()));
    for (std::int64_t i = 0; i < a.size(); ++i) {
        out[static_cast<std::size_t>(i)] = a.at(i) * b.at(i);
    }
    Tensor y = make_tensor(a.shape(), std::move(out), false);
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    return finish_op("mul", y, a.requires_grad() || b.requires_grad(), {ai, bi, yi}, [ai, bi, yi] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty()) return;
        if (ai->requires_grad) {
            auto& ga = grad_buf(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            auto& gb = grad_buf(*bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(static_cast<std::size_t>(a.size()));
    for (std::int64_t i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] = a.at(i) * c;
    Tensor y = make_tensor(a.shape(), std::move(out), false);
    auto ai = a.impl(), yi = y.impl();
    return finish_op("scale", y, a.requires_grad(), {ai, yi}, [ai, yi, c] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty() || !ai->requires_grad) return;
        auto& ga = grad_buf(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
}

// --- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2) {
        throw ShapeError("matmul: operands must be 2-D");
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(static_cast<std::size_t>(m * n));
    kernels::gemm(a.data().data(), false, b.data().data(), false, out.data(), m, k, n, false);
    Tensor y = make_tensor({static_cast<int>(m), static_cast<int>(n)}, std::move(out), false);
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    return finish_op("matmul", y, a.requires_grad() || b.requires_grad(), {ai, bi, yi},
                     [ai, bi, yi, m, k, n] {
                         const auto& g = detail::out_grad(*yi);
                         if (g.empty()) return;
                         if (ai->requires_grad) {
                             // dA = G * B^T
                             kernels::gemm(g.data(), false, bi->data.data(), true,
                                           grad_buf(*ai).data(), m, n, k, true);
                         }
                         if (bi->requires_grad) {
                             // dB = A^T * G
                             kernels::gemm(ai->data.data(), true, g.data(), false,
                                           grad_buf(*bi).data(), k, m, n, true);
                         }
                     });
}

// --- conv1d -----------------------------------------------------------------

Tensor conv1d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    if (input.shape().size() != 2) throw ShapeError("conv1d: input must be [c_in, l]");
    if (kernel.shape().size() != 3) throw ShapeError("conv1d: kernel must be [c_out, c_in, k]");
    const std::int64_t c_in = input.dim(0), l_in = input.dim(1);
    const std::int64_t c_out = kernel.dim(0), kc_in = kernel.dim(1), ksz = kernel.dim(2);
    if (kc_in != c_in) {
        throw ShapeError("conv1d: kernel expects " + std::to_string(kc_in) +
                         " input channels, input has " + std::to_string(c_in));
    }
    if (ksz % 2 == 0) throw ConfigError("conv1d: kernel size must be odd");
    if (stride != 1 && stride != 2) throw ConfigError("conv1d: stride must be 1 or 2");
    if (padding < 0) throw ConfigError("conv1d: padding must be non-negative");
    const std::int64_t l_out = kernels::conv1d_output_length(l_in, ksz, stride, padding);
    if (l_out < 1) throw ShapeError("conv1d: output length would be empty");

    std::vector<double> out(static_cast<std::size_t>(c_out * l_out));
    kernels::conv1d(input.data().data(), kernel.data().data(), out.data(), c_in, l_in, c_out, ksz,
                    stride, padding);
    Tensor y = make_tensor({static_cast<int>(c_out), static_cast<int>(l_out)}, std::move(out), false);
    auto xi = input.impl(), wi = kernel.impl(), yi = y.impl();
    return finish_op("conv1d", y, input.requires_grad() || kernel.requires_grad(), {xi, wi, yi},
                     [xi, wi, yi, c_in, l_in, c_out, ksz, stride, padding] {
                         const auto& g = detail::out_grad(*yi);
                         if (g.empty()) return;
                         if (xi->requires_grad) {
                             kernels::conv1d_grad_input(g.data(), wi->data.data(),
                                                        grad_buf(*xi).data(), c_in, l_in, c_out,
                                                        ksz, stride, padding);
                         }
                         if (wi->requires_grad) {
                             kernels::conv1d_grad_kernel(g.data(), xi->data.data(),
                                                         grad_buf(*wi).data(), c_in, l_in, c_out,
                                                         ksz, stride, padding);
                         }
                     });
}

// --- group norm --------------------------------------------------------------

Tensor group_norm(const Tensor& input, int groups, const Tensor& scale_t, const Tensor& shift_t,
                  double eps) {
    if (input.shape().size() != 2) throw ShapeError("group_norm: input must be [c, l]");
    const std::int64_t c = input.dim(0), l = input.dim(1);
    if (groups < 1 || c % groups != 0) {
        throw ConfigError("group_norm: channel count " + std::to_string(c) +
                          " not divisible by groups " + std::to_string(groups));
    }
    if (scale_t.size() != c || shift_t.size() != c) {
        throw ShapeError("group_norm: scale/shift must have one entry per channel");
    }
    const std::int64_t cg = c / groups;  // channels per group
    const std::int64_t m = cg * l;       // elements per group

    // Save the standardized values and inverse stddevs for backward.
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c * l));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups));
    std::vector<double> out(static_cast<std::size_t>(c * l));

    const auto x = input.data();
    const auto sc = scale_t.data();
    const auto sh = shift_t.data();
    for (std::int64_t g = 0; g < groups; ++g) {
        const std::int64_t base = g * cg * l;
        double mean = 0.0;
        for (std::int64_t i = 0; i < m; ++i) mean += x[static_cast<std::size_t>(base + i)];
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
            double d = x[static_cast<std::size_t>(base + i)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(g)] = inv;
        for (std::int64_t cc = 0; cc < cg; ++cc) {
            const std::int64_t ch = g * cg + cc;
            for (std::int64_t j = 0; j < l; ++j) {
                const std::size_t idx = static_cast<std::size_t>(ch * l + j);
                const double xh = (x[idx] - mean) * inv;
                (*xhat)[idx] = xh;
                out[idx] = sc[static_cast<std::size_t>(ch)] * xh + sh[static_cast<std::size_t>(ch)];
            }
        }
    }

    Tensor y = make_tensor(input.shape(), std::move(out), false);
    auto xi = input.impl(), sci = scale_t.impl(), shi = shift_t.impl(), yi = y.impl();
    bool rg = input.requires_grad() || scale_t.requires_grad() || shift_t.requires_grad();
    return finish_op("group_norm", y, rg, {xi, sci, shi, yi},
                     [xi, sci, shi, yi, xhat, inv_std, groups, cg, l, m] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty()) return;
        if (sci->requires_grad) {
            auto& gs = grad_buf(*sci);
            const std::int64_t c = groups * cg;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < l; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(ch * l + j);
                    acc += g[idx] * (*xhat)[idx];
                }
                gs[static_cast<std::size_t>(ch)] += acc;
            }
        }
        if (shi->requires_grad) {
            auto& gb = grad_buf(*shi);
            const std::int64_t c = groups * cg;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < l; ++j) acc += g[static_cast<std::size_t>(ch * l + j)];
                gb[static_cast<std::size_t>(ch)] += acc;
            }
        }
        if (xi->requires_grad) {
            auto& gx = grad_buf(*xi);
            for (std::int64_t grp = 0; grp < groups; ++grp) {
                const double inv = (*inv_std)[static_cast<std::size_t>(grp)];
                // dxhat = g * scale; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (std::int64_t cc = 0; cc < cg; ++cc) {
                    const std::int64_t ch = grp * cg + cc;
                    const double s = sci->data[static_cast<std::size_t>(ch)];
                    for (std::int64_t j = 0; j < l; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(ch * l + j);
                        const double dxh = g[idx] * s;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * (*xhat)[idx];
                    }
                }
                const double mean_dxh = sum_dxh / static_cast<double>(m);
                const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(m);
                for (std::int64_t cc = 0; cc < cg; ++cc) {
                    const std::int64_t ch = grp * cg + cc;
                    const double s = sci->data[static_cast<std::size_t>(ch)];
                    for (std::int64_t j = 0; j < l; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(ch * l + j);
                        const double dxh = g[idx] * s;
                        gx[idx] += inv * (dxh - mean_dxh - (*xhat)[idx] * mean_dxh_xh);
                    }
                }
            }
        }
    });
}

// --- FiLM and channel bias ----------------------------------------------------

Tensor film(const Tensor& h, const Tensor& gamma, const Tensor& beta) {
    if (h.shape().size() != 2) throw ShapeError("film: feature map must be [c, l]");
    const std::int64_t c = h.dim(0), l = h.dim(1);
    if (gamma.size() != c || beta.size() != c) {
        throw ShapeError("film: gamma/beta must have one entry per channel");
    }
    std::vector<double> out(static_cast<std::size_t>(c * l));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const double gm = gamma.at(ch), bt = beta.at(ch);
        for (std::int64_t j = 0; j < l; ++j) {
            out[static_cast<std::size_t>(ch * l + j)] = gm * h.at(ch * l + j) + bt;
        }
    }
    Tensor y = make_tensor(h.shape(), std::move(out), false);
    auto hi = h.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
    bool rg = h.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    return finish_op("film", y, rg, {hi, gi, bi, yi}, [hi, gi, bi, yi, c, l] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty()) return;
        if (hi->requires_grad) {
            auto& gh = grad_buf(*hi);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double gm = gi->data[static_cast<std::size_t>(ch)];
                for (std::int64_t j = 0; j < l; ++j) {
                    gh[static_cast<std::size_t>(ch * l + j)] += gm * g[static_cast<std::size_t>(ch * l + j)];
                }
            }
        }
        if (gi->requires_grad) {
            auto& gg = grad_buf(*gi);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < l; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(ch * l + j);
                    acc += g[idx] * hi->data[idx];
                }
                gg[static_cast<std::size_t>(ch)] += acc;
            }
        }
        if (bi->requires_grad) {
            auto& gb = grad_buf(*bi);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < l; ++j) acc += g[static_cast<std::size_t>(ch * l + j)];
                gb[static_cast<std::size_t>(ch)] += acc;
            }
        }
    });
}

Tensor channel_bias(const Tensor& h, const Tensor& bias) {
    if (h.shape().size() != 2) throw ShapeError("channel_bias: feature map must be [c, l]");
    const std::int64_t c = h.dim(0), l = h.dim(1);
    if (bias.size() != c) throw ShapeError("channel_bias: bias must have one entry per channel");
    std::vector<double> out(static_cast<std::size_t>(c * l));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const double b = bias.at(ch);
        for (std::int64_t j = 0; j < l; ++j) {
            out[static_cast<std::size_t>(ch * l + j)] = h.at(ch * l + j) + b;
        }
    }
    Tensor y = make_tensor(h.shape(), std::move(out), false);
    auto hi = h.impl(), bi = bias.impl(), yi = y.impl();
    return finish_op("channel_bias", y, h.requires_grad() || bias.requires_grad(), {hi, bi, yi},
                     [hi, bi, yi, c, l] {
                         const auto& g = detail::out_grad(*yi);
                         if (g.empty()) return;
                         if (hi->requires_grad) {
                             auto& gh = grad_buf(*hi);
                             for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i];
                         }
                         if (bi->requires_grad) {
                             auto& gb = grad_buf(*bi);
                             for (std::int64_t ch = 0; ch < c; ++ch) {
                                 double acc = 0.0;
                                 for (std::int64_t j = 0; j < l; ++j) {
                                     acc += g[static_cast<std::size_t>(ch * l + j)];
                                 }
                                 gb[static_cast<std::size_t>(ch)] += acc;
                             }
                         }
                     });
}

// --- linear -------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (w.shape().size() != 2) throw ShapeError("linear: weight must be [out, in]");
    const std::int64_t m = w.dim(0), n = w.dim(1);
    if (bias.size() != m) throw ShapeError("linear: bias must match output dimension");
    const bool batched = x.shape().size() == 2;
    if (!batched && x.shape().size() != 1) throw ShapeError("linear: input must be [n] or [b, n]");
    const std::int64_t b = batched ? x.dim(0) : 1;
    const std::int64_t xn = batched ? x.dim(1) : x.dim(0);
    if (xn != n) {
        throw ShapeError("linear: input dimension " + std::to_string(xn) +
                         " does not match weight columns " + std::to_string(n));
    }

    std::vector<double> out(static_cast<std::size_t>(b * m));
    // out = x * w^T
    kernels::gemm(x.data().data(), false, w.data().data(), true, out.data(), b, n, m, false);
    for (std::int64_t r = 0; r < b; ++r) {
        for (std::int64_t j = 0; j < m; ++j) out[static_cast<std::size_t>(r * m + j)] += bias.at(j);
    }
    std::vector<int> out_shape = batched
                                     ? std::vector<int>{static_cast<int>(b), static_cast<int>(m)}
                                     : std::vector<int>{static_cast<int>(m)};
    Tensor y = make_tensor(std::move(out_shape), std::move(out), false);
    auto xi = x.impl(), wi = w.impl(), bi = bias.impl(), yi = y.impl();
    bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
    return finish_op("linear", y, rg, {xi, wi, bi, yi}, [xi, wi, bi, yi, b, m, n] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty()) return;
        if (xi->requires_grad) {
            // dX = G * W
            kernels::gemm(g.data(), false, wi->data.data(), false, grad_buf(*xi).data(), b, m, n,
                          true);
        }
        if (wi->requires_grad) {
            // dW = G^T * X
            kernels::gemm(g.data(), true, xi->data.data(), false, grad_buf(*wi).data(), m, b, n,
                          true);
        }
        if (bi->requires_grad) {
            auto& gb = grad_buf(*bi);
            for (std::int64_t r = 0; r < b; ++r) {
                for (std::int64_t j = 0; j < m; ++j) {
                    gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(r * m + j)];
                }
            }
        }
    });
}

// --- activations ----------------------------------------------------------------

Tensor mish(const Tensor& x) {
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double v = x.at(i);
        out[static_cast<std::size_t>(i)] = v * std::tanh(softplus(v));
    }
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    auto xi = x.impl(), yi = y.impl();
    return finish_op("mish", y, x.requires_grad(), {xi, yi}, [xi, yi] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buf(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xi->data[i];
            const double t = std::tanh(softplus(v));
            gx[i] += g[i] * (t + v * (1.0 - t * t) * sigmoid(v));
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) {
        out[static_cast<std::size_t>(i)] = std::max(0.0, x.at(i));
    }
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    auto xi = x.impl(), yi = y.impl();
    return finish_op("relu", y, x.requires_grad(), {xi, yi}, [xi, yi] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buf(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xi->data[i] > 0.0) gx[i] += g[i];
        }
    });
}

// --- structural ops ---------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2) {
        throw ShapeError("concat_channels: operands must be [c, l]");
    }
    if (a.dim(1) != b.dim(1)) throw ShapeError("concat_channels: lengths differ");
    const std::int64_t c1 = a.dim(0), c2 = b.dim(0), l = a.dim(1);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>((c1 + c2) * l));
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    Tensor y = make_tensor({static_cast<int>(c1 + c2), static_cast<int>(l)}, std::move(out), false);
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    return finish_op("concat_channels", y, a.requires_grad() || b.requires_grad(), {ai, bi, yi},
                     [ai, bi, yi, c1, c2, l] {
                         const auto& g = detail::out_grad(*yi);
                         if (g.empty()) return;
                         if (ai->requires_grad) {
                             auto& ga = grad_buf(*ai);
                             for (std::int64_t i = 0; i < c1 * l; ++i) {
                                 ga[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
                             }
                         }
                         if (bi->requires_grad) {
                             auto& gb = grad_buf(*bi);
                             for (std::int64_t i = 0; i < c2 * l; ++i) {
                                 gb[static_cast<std::size_t>(i)] +=
                                     g[static_cast<std::size_t>(c1 * l + i)];
                             }
                         }
                     });
}

Tensor transpose2d(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeError("transpose2d: input must be 2-D");
    const std::int64_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j * m + i)] = x.at(i * n + j);
    Tensor y = make_tensor({static_cast<int>(n), static_cast<int>(m)}, std::move(out), false);
    auto xi = x.impl(), yi = y.impl();
    return finish_op("transpose2d", y, x.requires_grad(), {xi, yi}, [xi, yi, m, n] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buf(*xi);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                gx[static_cast<std::size_t>(i * n + j)] += g[static_cast<std::size_t>(j * m + i)];
    });
}

Tensor upsample_nearest2(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeError("upsample_nearest2: input must be [c, l]");
    const std::int64_t c = x.dim(0), l = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(c * 2 * l));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t j = 0; j < l; ++j) {
            const double v = x.at(ch * l + j);
            out[static_cast<std::size_t>(ch * 2 * l + 2 * j)] = v;
            out[static_cast<std::size_t>(ch * 2 * l + 2 * j + 1)] = v;
        }
    }
    Tensor y = make_tensor({static_cast<int>(c), static_cast<int>(2 * l)}, std::move(out), false);
    auto xi = x.impl(), yi = y.impl();
    return finish_op("upsample_nearest2", y, x.requires_grad(), {xi, yi}, [xi, yi, c, l] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buf(*xi);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::int64_t j = 0; j < l; ++j) {
                gx[static_cast<std::size_t>(ch * l + j)] +=
                    g[static_cast<std::size_t>(ch * 2 * l + 2 * j)] +
                    g[static_cast<std::size_t>(ch * 2 * l + 2 * j + 1)];
            }
        }
    });
}

// --- reductions --------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) acc += x.at(i);
    Tensor y = make_tensor({1}, {acc}, false);
    auto xi = x.impl(), yi = y.impl();
    return finish_op("sum", y, x.requires_grad(), {xi, yi}, [xi, yi] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buf(*xi);
        for (auto& v : gx) v += g[0];
    });
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) acc += x.at(i);
    const double inv_n = 1.0 / static_cast<double>(x.size());
    Tensor y = make_tensor({1}, {acc * inv_n}, false);
    auto xi = x.impl(), yi = y.impl();
    return finish_op("mean", y, x.requires_grad(), {xi, yi}, [xi, yi, inv_n] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty() || !xi->requires_grad) return;
        auto& gx = grad_buf(*xi);
        for (auto& v : gx) v += g[0] * inv_n;
    });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    double acc = 0.0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        const double d = pred.at(i) - target.at(i);
        acc += d * d;
    }
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    Tensor y = make_tensor({1}, {acc * inv_n}, false);
    auto pi = pred.impl(), ti = target.impl(), yi = y.impl();
    return finish_op("mse_loss", y, pred.requires_grad() || target.requires_grad(), {pi, ti, yi},
                     [pi, ti, yi, inv_n] {
                         const auto& g = detail::out_grad(*yi);
                         if (g.empty()) return;
                         const double c = 2.0 * inv_n * g[0];
                         if (pi->requires_grad) {
                             auto& gp = grad_buf(*pi);
                             for (std::size_t i = 0; i < gp.size(); ++i) {
                                 gp[i] += c * (pi->data[i] - ti->data[i]);
                             }
                         }
                         if (ti->requires_grad) {
                             auto& gt = grad_buf(*ti);
                             for (std::size_t i = 0; i < gt.size(); ++i) {
                                 gt[i] -= c * (pi->data[i] - ti->data[i]);
                             }
                         }
                     });
}

Tensor l2_normalize(const Tensor& x) {
    double norm_sq = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) norm_sq += x.at(i) * x.at(i);
    const double norm = std::sqrt(norm_sq);
    if (norm == 0.0) throw UsageError("l2_normalize: zero-norm input");
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = x.at(i) / norm;
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    auto xi = x.impl(), yi = y.impl();
    return finish_op("l2_normalize", y, x.requires_grad(), {xi, yi}, [xi, yi, norm] {
        const auto& g = detail::out_grad(*yi);
        if (g.empty() || !xi->requires_grad) return;
        double y_dot_g = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) y_dot_g += yi->data[i] * g[i];
        auto& gx = grad_buf(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += (g[i] - yi->data[i] * y_dot_g) / norm;
        }
    });
}

}  // namespace diffclone
