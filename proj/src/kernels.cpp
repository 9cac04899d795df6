#include "diffclone/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace diffclone::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Below this many multiply-adds the OpenMP fork/join overhead dominates.
constexpr std::int64_t kParallelWorkThreshold = 1 << 15;

inline bool use_parallel(std::int64_t work) {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed) && work >= kParallelWorkThreshold;
#else
    (void)work;
    return false;
#endif
}

inline double gemm_cell(const double* a, bool trans_a, const double* b, bool trans_b,
                        std::int64_t m, std::int64_t k, std::int64_t n,
                        std::int64_t i, std::int64_t j) {
    // A element (i,p): row-major [m,k] or transposed storage [k,m].
    double acc = 0.0;
    if (!trans_a && !trans_b) {
        const double* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
    } else if (!trans_a && trans_b) {
        const double* arow = a + i * k;
        const double* brow = b + j * k;
        for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    } else if (trans_a && !trans_b) {
        for (std::int64_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
    } else {
        for (std::int64_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
    }
    return acc;
}

}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

std::int64_t conv1d_output_length(std::int64_t l_in, std::int64_t kernel,
                                  std::int64_t stride, std::int64_t padding) {
    return (l_in + 2 * padding - kernel) / stride + 1;
}

void gemm_serial(const double* a, bool trans_a, const double* b, bool trans_b,
                 double* c, std::int64_t m, std::int64_t k, std::int64_t n,
                 bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = gemm_cell(a, trans_a, b, trans_b, m, k, n, i, j);
            if (accumulate) {
                c[i * n + j] += acc;
            } else {
                c[i * n + j] = acc;
            }
        }
    }
}

void gemm_parallel(const double* a, bool trans_a, const double* b, bool trans_b,
                   double* c, std::int64_t m, std::int64_t k, std::int64_t n,
                   bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = gemm_cell(a, trans_a, b, trans_b, m, k, n, i, j);
            if (accumulate) {
                c[i * n + j] += acc;
            } else {
                c[i * n + j] = acc;
            }
        }
    }
}

void gemm(const double* a, bool trans_a, const double* b, bool trans_b,
          double* c, std::int64_t m, std::int64_t k, std::int64_t n,
          bool accumulate) {
    if (use_parallel(m * k * n)) {
        gemm_parallel(a, trans_a, b, trans_b, c, m, k, n, accumulate);
    } else {
        gemm_serial(a, trans_a, b, trans_b, c, m, k, n, accumulate);
    }
}

namespace {

inline double conv_cell(const double* in, const double* w,
                        std::int64_t c_in, std::int64_t l_in, std::int64_t kernel,
                        std::int64_t stride, std::int64_t padding,
                        std::int64_t co, std::int64_t lo) {
    double acc = 0.0;
    const std::int64_t base = lo * stride - padding;
    const double* wc = w + co * c_in * kernel;
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
        const double* row = in + ci * l_in;
        const double* wk = wc + ci * kernel;
        for (std::int64_t kk = 0; kk < kernel; ++kk) {
            std::int64_t li = base + kk;
            if (li >= 0 && li < l_in) acc += row[li] * wk[kk];
        }
    }
    return acc;
}

inline double conv_grad_in_cell(const double* grad_out, const double* w,
                                std::int64_t c_in, std::int64_t c_out, std::int64_t l_out,
                                std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                                std::int64_t ci, std::int64_t li) {
    double acc = 0.0;
    for (std::int64_t kk = 0; kk < kernel; ++kk) {
        std::int64_t num = li + padding - kk;
        if (num < 0 || num % stride != 0) continue;
        std::int64_t lo = num / stride;
        if (lo >= l_out) continue;
        for (std::int64_t co = 0; co < c_out; ++co) {
            acc += grad_out[co * l_out + lo] * w[(co * c_in + ci) * kernel + kk];
        }
    }
    return acc;
}

inline double conv_grad_w_cell(const double* grad_out, const double* in,
                               std::int64_t l_in, std::int64_t l_out,
                               std::int64_t stride, std::int64_t padding,
                               std::int64_t co, std::int64_t ci, std::int64_t kk) {
    double acc = 0.0;
    const double* g = grad_out + co * l_out;
    const double* row = in;  // caller offsets by channel
    (void)row;
    for (std::int64_t lo = 0; lo < l_out; ++lo) {
        std::int64_t li = lo * stride - padding + kk;
        if (li >= 0 && li < l_in) acc += g[lo] * in[ci * l_in + li];
    }
    return acc;
}

}  // namespace

void conv1d_serial(const double* in, const double* w, double* out,
                   std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                   std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    const std::int64_t l_out = conv1d_output_length(l_in, kernel, stride, padding);
    for (std::int64_t co = 0; co < c_out; ++co) {
        for (std::int64_t lo = 0; lo < l_out; ++lo) {
            out[co * l_out + lo] = conv_cell(in, w, c_in, l_in, kernel, stride, padding, co, lo);
        }
    }
}

void conv1d_parallel(const double* in, const double* w, double* out,
                     std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                     std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    const std::int64_t l_out = conv1d_output_length(l_in, kernel, stride, padding);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t co = 0; co < c_out; ++co) {
        for (std::int64_t lo = 0; lo < l_out; ++lo) {
            out[co * l_out + lo] = conv_cell(in, w, c_in, l_in, kernel, stride, padding, co, lo);
        }
    }
}

void conv1d(const double* in, const double* w, double* out,
            std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
            std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    const std::int64_t l_out = conv1d_output_length(l_in, kernel, stride, padding);
    if (use_parallel(c_out * l_out * c_in * kernel)) {
        conv1d_parallel(in, w, out, c_in, l_in, c_out, kernel, stride, padding);
    } else {
        conv1d_serial(in, w, out, c_in, l_in, c_out, kernel, stride, padding);
    }
}

void conv1d_grad_input_serial(const double* grad_out, const double* w, double* grad_in,
                              std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                              std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    const std::int64_t l_out = conv1d_output_length(l_in, kernel, stride, padding);
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
        for (std::int64_t li = 0; li < l_in; ++li) {
            grad_in[ci * l_in + li] +=
                conv_grad_in_cell(grad_out, w, c_in, c_out, l_out, kernel, stride, padding, ci, li);
        }
    }
}

void conv1d_grad_input_parallel(const double* grad_out, const double* w, double* grad_in,
                                std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                                std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    const std::int64_t l_out = conv1d_output_length(l_in, kernel, stride, padding);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
        for (std::int64_t li = 0; li < l_in; ++li) {
            grad_in[ci * l_in + li] +=
                conv_grad_in_cell(grad_out, w, c_in, c_out, l_out, kernel, stride, padding, ci, li);
        }
    }
}

void conv1d_grad_input(const double* grad_out, const double* w, double* grad_in,
                       std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                       std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    if (use_parallel(c_in * l_in * c_out * kernel)) {
        conv1d_grad_input_parallel(grad_out, w, grad_in, c_in, l_in, c_out, kernel, stride, padding);
    } else {
        conv1d_grad_input_serial(grad_out, w, grad_in, c_in, l_in, c_out, kernel, stride, padding);
    }
}

void conv1d_grad_kernel_serial(const double* grad_out, const double* in, double* grad_w,
                               std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                               std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    const std::int64_t l_out = conv1d_output_length(l_in, kernel, stride, padding);
    for (std::int64_t co = 0; co < c_out; ++co) {
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
            for (std::int64_t kk = 0; kk < kernel; ++kk) {
                grad_w[(co * c_in + ci) * kernel + kk] +=
                    conv_grad_w_cell(grad_out, in, l_in, l_out, stride, padding, co, ci, kk);
            }
        }
    }
}

void conv1d_grad_kernel_parallel(const double* grad_out, const double* in, double* grad_w,
                                 std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                                 std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    const std::int64_t l_out = conv1d_output_length(l_in, kernel, stride, padding);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t co = 0; co < c_out; ++co) {
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
            for (std::int64_t kk = 0; kk < kernel; ++kk) {
                grad_w[(co * c_in + ci) * kernel + kk] +=
                    conv_grad_w_cell(grad_out, in, l_in, l_out, stride, padding, co, ci, kk);
            }
        }
    }
}

void conv1d_grad_kernel(const double* grad_out, const double* in, double* grad_w,
                        std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                        std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
    const std::int64_t l_out = conv1d_output_length(l_in, kernel, stride, padding);
    if (use_parallel(c_out * c_in * kernel * l_out)) {
        conv1d_grad_kernel_parallel(grad_out, in, grad_w, c_in, l_in, c_out, kernel, stride, padding);
    } else {
        conv1d_grad_kernel_serial(grad_out, in, grad_w, c_in, l_in, c_out, kernel, stride, padding);
    }
}

}  // namespace diffclone::kernels
