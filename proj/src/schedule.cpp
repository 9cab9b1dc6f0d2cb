#include "dmi/schedule.hpp"

namespace dmi {

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        const double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        s.beta[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t - 1)] * s.alpha[static_cast<size_t>(t)];
    }
    return s;
}

double terminal_snr_report(const NoiseSchedule& s) {
    return s.alpha_bar[static_cast<size_t>(s.T)];
}

}  // namespace dmi
