#pragma once

#include <cstdint>

// Dense compute kernels behind the tensor ops. Each kernel comes in a serial
// reference version and an OpenMP version; the unsuffixed entry point
// dispatches between them. Both variants accumulate every output element in
// the same order, so their results are bit-identical and the dispatch is
// free to pick either.
namespace diffclone::kernels {

// Process-wide switch for the OpenMP variants (on by default when compiled
// with OpenMP). Small problems stay serial regardless; see work thresholds
// in the dispatchers.
void set_parallel(bool enabled);
bool parallel_enabled();

// General matrix multiply: C = op(A) * op(B), with op controlled by the
// transpose flags. A is m x k after op, B is k x n after op, C is m x n.
// When accumulate is true the result is added onto C instead of overwriting.
void gemm_serial(const double* a, bool trans_a, const double* b, bool trans_b,
                 double* c, std::int64_t m, std::int64_t k, std::int64_t n,
                 bool accumulate);
void gemm_parallel(const double* a, bool trans_a, const double* b, bool trans_b,
                   double* c, std::int64_t m, std::int64_t k, std::int64_t n,
                   bool accumulate);
void gemm(const double* a, bool trans_a, const double* b, bool trans_b,
          double* c, std::int64_t m, std::int64_t k, std::int64_t n,
          bool accumulate = false);

// 1D cross-correlation with zero padding.
//   in:  [c_in, l_in]   w: [c_out, c_in, kernel]   out: [c_out, l_out]
//   l_out = (l_in + 2*padding - kernel) / stride + 1
void conv1d_serial(const double* in, const double* w, double* out,
                   std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                   std::int64_t kernel, std::int64_t stride, std::int64_t padding);
void conv1d_parallel(const double* in, const double* w, double* out,
                     std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                     std::int64_t kernel, std::int64_t stride, std::int64_t padding);
void conv1d(const double* in, const double* w, double* out,
            std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
            std::int64_t kernel, std::int64_t stride, std::int64_t padding);

// Gradient of conv1d w.r.t. its input, accumulated onto grad_in.
// Gather form: each grad_in element is produced by exactly one iteration,
// which keeps the parallel variant deterministic.
void conv1d_grad_input_serial(const double* grad_out, const double* w, double* grad_in,
                              std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                              std::int64_t kernel, std::int64_t stride, std::int64_t padding);
void conv1d_grad_input_parallel(const double* grad_out, const double* w, double* grad_in,
                                std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                                std::int64_t kernel, std::int64_t stride, std::int64_t padding);
void conv1d_grad_input(const double* grad_out, const double* w, double* grad_in,
                       std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                       std::int64_t kernel, std::int64_t stride, std::int64_t padding);

// Gradient of conv1d w.r.t. its kernel, accumulated onto grad_w.
void conv1d_grad_kernel_serial(const double* grad_out, const double* in, double* grad_w,
                               std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                               std::int64_t kernel, std::int64_t stride, std::int64_t padding);
void conv1d_grad_kernel_parallel(const double* grad_out, const double* in, double* grad_w,
                                 std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                                 std::int64_t kernel, std::int64_t stride, std::int64_t padding);
void conv1d_grad_kernel(const double* grad_out, const double* in, double* grad_w,
                        std::int64_t c_in, std::int64_t l_in, std::int64_t c_out,
                        std::int64_t kernel, std::int64_t stride, std::int64_t padding);

std::int64_t conv1d_output_length(std::int64_t l_in, std::int64_t kernel,
                                  std::int64_t stride, std::int64_t padding);

}  // namespace diffclone::kernels
