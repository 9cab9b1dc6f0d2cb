// Benchmark: OpenMP kernels vs the serial reference implementations.
// Prints GFLOP/s for each variant at sizes the nets actually use.

#include <chrono>
#include <cstdio>
#include <vector>

#include "dmi/core/kernels.hpp"
#include "dmi/core/rng.hpp"

namespace k = dmi::kernels;

namespace {

using clk = std::chrono::steady_clock;

double seconds_since(clk::time_point t0) {
    return std::chrono::duration<double>(clk::now() - t0).count();
}

template <class F>
double time_call(F&& f, int reps) {
    f();  // warm up
    const auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) f();
    return seconds_since(t0) / reps;
}

void bench_gemm(const char* name, int M, int N, int K, int reps) {
    dmi::Rng rng(1);
    std::vector<float> A(static_cast<size_t>(M) * K), B(static_cast<size_t>(K) * N), Bt(static_cast<size_t>(N) * K),
        At(static_cast<size_t>(K) * M), C(static_cast<size_t>(M) * N);
    rng.fill_normal(A.data(), static_cast<int64_t>(A.size()));
    rng.fill_normal(B.data(), static_cast<int64_t>(B.size()));
    rng.fill_normal(Bt.data(), static_cast<int64_t>(Bt.size()));
    rng.fill_normal(At.data(), static_cast<int64_t>(At.size()));
    const double flops = 2.0 * M * N * K;

    const double t_nn = time_call([&] { k::gemm_nn(M, N, K, A.data(), B.data(), C.data(), false); }, reps);
    const double t_nn_ref = time_call([&] { k::ref::gemm_nn(M, N, K, A.data(), B.data(), C.data(), false); }, 1);
    const double t_nt = time_call([&] { k::gemm_nt(M, N, K, A.data(), Bt.data(), C.data(), false); }, reps);
    const double t_nt_ref = time_call([&] { k::ref::gemm_nt(M, N, K, A.data(), Bt.data(), C.data(), false); }, 1);
    const double t_tn = time_call([&] { k::gemm_tn(M, N, K, At.data(), B.data(), C.data(), false); }, reps);
    const double t_tn_ref = time_call([&] { k::ref::gemm_tn(M, N, K, At.data(), B.data(), C.data(), false); }, 1);

    std::printf("%-22s M=%-5d N=%-6d K=%-6d | nn %7.2f (ref %6.2f) | nt %7.2f (ref %6.2f) | tn %7.2f (ref %6.2f) GFLOP/s\n",
                name, M, N, K, flops / t_nn * 1e-9, flops / t_nn_ref * 1e-9, flops / t_nt * 1e-9,
                flops / t_nt_ref * 1e-9, flops / t_tn * 1e-9, flops / t_tn_ref * 1e-9);
}

}  // namespace

int main() {
    std::printf("kernel benchmark (optimized vs serial reference)\n\n");
    // conv-as-gemm shapes from the denoiser at 32x32 and the classifiers
    bench_gemm("conv 16->16 @32x32", 16, 1024, 144, 20);
    bench_gemm("conv 32->32 @16x16", 32, 256, 288, 20);
    bench_gemm("conv 64->64 @8x8", 64, 64, 576, 20);
    bench_gemm("classifier fc", 128, 512, 2048, 10);
    bench_gemm("square 256", 256, 256, 256, 20);
    bench_gemm("square 512", 512, 512, 512, 5);
    return 0;
}
