// Times the serial reference kernels against their OpenMP variants and
// verifies that both produce bit-identical results on the same inputs.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "diffclone/kernels.hpp"
#include "diffclone/rng.hpp"

using namespace diffclone;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

template <typename Fn>
double time_best_of(int repeats, Fn&& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        best = std::min(best, elapsed.count());
    }
    return best;
}

void print_row(const char* name, double serial_s, double parallel_s, bool identical) {
    std::printf("%-22s serial=%9.4f ms  parallel=%9.4f ms  speedup=%5.2fx  identical=%s\n", name,
                serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s, identical ? "yes" : "no");
}

}  // namespace

int main() {
    Rng rng(4242);
    const int repeats = 5;

    {
        const std::int64_t m = 256, k = 256, n = 256;
        const auto a = random_vec(static_cast<std::size_t>(m * k), rng);
        const auto b = random_vec(static_cast<std::size_t>(k * n), rng);
        std::vector<double> c_serial(static_cast<std::size_t>(m * n));
        std::vector<double> c_parallel(c_serial.size());
        const double ts = time_best_of(repeats, [&] {
            kernels::gemm_serial(a.data(), false, b.data(), false, c_serial.data(), m, k, n, false);
        });
        const double tp = time_best_of(repeats, [&] {
            kernels::gemm_parallel(a.data(), false, b.data(), false, c_parallel.data(), m, k, n,
                                   false);
        });
        const bool same =
            std::memcmp(c_serial.data(), c_parallel.data(), c_serial.size() * sizeof(double)) == 0;
        print_row("gemm 256x256x256", ts, tp, same);
    }

    const std::int64_t c_in = 64, l_in = 4096, c_out = 64, kernel = 3, stride = 1, padding = 1;
    const std::int64_t l_out = kernels::conv1d_output_length(l_in, kernel, stride, padding);
    const auto in = random_vec(static_cast<std::size_t>(c_in * l_in), rng);
    const auto w = random_vec(static_cast<std::size_t>(c_out * c_in * kernel), rng);
    const auto grad_out = random_vec(static_cast<std::size_t>(c_out * l_out), rng);

    {
        std::vector<double> out_serial(static_cast<std::size_t>(c_out * l_out));
        std::vector<double> out_parallel(out_serial.size());
        const double ts = time_best_of(repeats, [&] {
            kernels::conv1d_serial(in.data(), w.data(), out_serial.data(), c_in, l_in, c_out,
                                   kernel, stride, padding);
        });
        const double tp = time_best_of(repeats, [&] {
            kernels::conv1d_parallel(in.data(), w.data(), out_parallel.data(), c_in, l_in, c_out,
                                     kernel, stride, padding);
        });
        const bool same = std::memcmp(out_serial.data(), out_parallel.data(),
                                      out_serial.size() * sizeof(double)) == 0;
        print_row("conv1d forward", ts, tp, same);
    }

    {
        std::vector<double> gi_serial(static_cast<std::size_t>(c_in * l_in));
        std::vector<double> gi_parallel(gi_serial.size());
        const double ts = time_best_of(repeats, [&] {
            std::fill(gi_serial.begin(), gi_serial.end(), 0.0);
            kernels::conv1d_grad_input_serial(grad_out.data(), w.data(), gi_serial.data(), c_in,
                                              l_in, c_out, kernel, stride, padding);
        });
        const double tp = time_best_of(repeats, [&] {
            std::fill(gi_parallel.begin(), gi_parallel.end(), 0.0);
            kernels::conv1d_grad_input_parallel(grad_out.data(), w.data(), gi_parallel.data(), c_in,
                                                l_in, c_out, kernel, stride, padding);
        });
        const bool same = std::memcmp(gi_serial.data(), gi_parallel.data(),
                                      gi_serial.size() * sizeof(double)) == 0;
        print_row("conv1d grad input", ts, tp, same);
    }

    {
        std::vector<double> gw_serial(static_cast<std::size_t>(c_out * c_in * kernel));
        std::vector<double> gw_parallel(gw_serial.size());
        const double ts = time_best_of(repeats, [&] {
            std::fill(gw_serial.begin(), gw_serial.end(), 0.0);
            kernels::conv1d_grad_kernel_serial(grad_out.data(), in.data(), gw_serial.data(), c_in,
                                               l_in, c_out, kernel, stride, padding);
        });
        const double tp = time_best_of(repeats, [&] {
            std::fill(gw_parallel.begin(), gw_parallel.end(), 0.0);
            kernels::conv1d_grad_kernel_parallel(grad_out.data(), in.data(), gw_parallel.data(),
                                                 c_in, l_in, c_out, kernel, stride, padding);
        });
        const bool same = std::memcmp(gw_serial.data(), gw_parallel.data(),
                                      gw_serial.size() * sizeof(double)) == 0;
        print_row("conv1d grad kernel", ts, tp, same);
    }

    return 0;
}
