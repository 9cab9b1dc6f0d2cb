#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dmi/core/tensor.hpp"

namespace dmi {

// Forward-diffusion variance schedule. Timesteps are 1..T; index 0 denotes
// the clean image, so beta[0] is unused and alpha_bar[0] == 1. Tables are
// double precision and immutable after construction.
struct NoiseSchedule {
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;       // beta[t], t = 1..T
    std::vector<double> alpha;      // 1 - beta[t]
    std::vector<double> alpha_bar;  // prod_{i<=t} alpha[i]
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

// alpha_bar[T]: how much signal survives at the terminal step. The harness
// warns when this is not << 1 (end state insufficiently noised).
double terminal_snr_report(const NoiseSchedule& s);

// x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps
template <class T>
Tensor<T> q_sample(const NoiseSchedule& s, const Tensor<T>& x0, int t, const Tensor<T>& eps) {
    if (t < 1 || t > s.T) throw std::out_of_range("q_sample: t out of range 1..T");
    check_same_shape(x0, eps, "q_sample");
    const T a = static_cast<T>(std::sqrt(s.alpha_bar[static_cast<size_t>(t)]));
    const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]));
    Tensor<T> out(x0.shape());
    const int64_t n = x0.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

}  // namespace dmi
