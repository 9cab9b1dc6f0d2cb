#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmi/core/rng.hpp"
#include "dmi/core/tensor.hpp"
#include "dmi/denoiser.hpp"
#include "dmi/nn/layers.hpp"
#include "dmi/schedule.hpp"

namespace dmi::diffusion {

struct TrainConfig {
    double label_dropout_p = 0.1;
    int batch_size = 16;
    double lr = 3e-4;
    double lr_late = 1e-4;  // used for the final sixth of the epochs
    int max_epochs = 300;
    uint64_t seed = 0;
    double weight_decay = 1e-4;
    double ema_decay = 0.995;
    int ema_warmup = 200;

    void validate() const {
        if (label_dropout_p < 0.0 || label_dropout_p > 1.0)
            throw std::invalid_argument("train config: label_dropout_p must be in [0,1]");
        if (batch_size < 1 || max_epochs < 1) throw std::invalid_argument("train config: batch/epochs must be positive");
    }
};

struct SamplerConfig {
    double omega = 4.0;
    int num_samples = 48;
    uint64_t seed = 0;

    void validate() const {
        if (!(omega >= 0.0) || !std::isfinite(omega)) throw std::invalid_argument("sampler config: omega must be finite and >= 0");
        if (num_samples < 1) throw std::invalid_argument("sampler config: num_samples must be >= 1");
    }
};

// Replace each label independently by the null label with probability p.
inline std::vector<int> apply_label_dropout(const std::vector<int>& labels, double p, Rng& rng) {
    std::vector<int> out(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) out[i] = rng.bernoulli(p) ? kNullLabel : labels[i];
    return out;
}

// eps_tilde = eps_cond + omega * (eps_cond - eps_uncond).
// Algebraically (1+omega)*eps_cond - omega*eps_uncond; this arrangement makes
// the equal-inputs fixpoint and the omega=0 identity hold bitwise.
template <class T>
Tensor<T> guided_noise(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double omega) {
    if (!(omega >= 0.0) || !std::isfinite(omega)) throw std::invalid_argument("guided_noise: omega must be finite and >= 0");
    const int64_t n = check_same_shape(eps_cond, eps_uncond, "guided_noise");
    Tensor<T> out(eps_cond.shape());
    const T w = static_cast<T>(omega);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = eps_cond[i] + w * (eps_cond[i] - eps_uncond[i]);
    return out;
}

// Range-checked conditional forward pass.
template <class T, class Net>
void predict_noise(Net& net, const NoiseSchedule& s, const Tensor<T>& x, const std::vector<int>& t,
                   const std::vector<int>& labels, Tensor<T>& out) {
    for (int ti : t)
        if (ti < 1 || ti > s.T) throw std::out_of_range("predict_noise: t out of range 1..T");
    net.forward(x, t, labels, out);
}

// Draws (t, eps) per item, corrupts x0, applies label dropout, and returns
// the mean squared noise-prediction error. With backprop=true the parameter
// gradients of the loss are accumulated into the net.
template <class T, class Net>
double training_loss(Net& net, const NoiseSchedule& s, const Tensor<T>& x0, const std::vector<int>& labels,
                     double p, Rng& rng, bool backprop = false) {
    const int N = x0.dim(0);
    if (static_cast<int>(labels.size()) != N) throw std::invalid_argument("training_loss: label count mismatch");
    const int64_t per = x0.numel() / N;

    std::vector<int> t(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n) t[static_cast<size_t>(n)] = 1 + rng.uniform_int(s.T);

    Tensor<T> eps(x0.shape());
    rng.fill_normal(eps.data(), eps.numel());

    const std::vector<int> used = apply_label_dropout(labels, p, rng);

    Tensor<T> xt(x0.shape());
    for (int n = 0; n < N; ++n) {
        const double ab = s.alpha_bar[static_cast<size_t>(t[static_cast<size_t>(n)])];
        const T a = static_cast<T>(std::sqrt(ab));
        const T b = static_cast<T>(std::sqrt(1.0 - ab));
        const T* x0p = x0.data() + static_cast<int64_t>(n) * per;
        const T* ep = eps.data() + static_cast<int64_t>(n) * per;
        T* xp = xt.data() + static_cast<int64_t>(n) * per;
        for (int64_t i = 0; i < per; ++i) xp[i] = a * x0p[i] + b * ep[i];
    }

    Tensor<T> pred;
    predict_noise(net, s, xt, t, used, pred);

    double loss = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(eps[i]);
        loss += d * d;
    }
    loss /= static_cast<double>(pred.numel());

    if (backprop) {
        Tensor<T> dout(pred.shape());
        const T scale = static_cast<T>(2.0 / static_cast<double>(pred.numel()));
        for (int64_t i = 0; i < pred.numel(); ++i) dout[i] = scale * (pred[i] - eps[i]);
        net.backward(dout);
    }
    return loss;
}

// One ancestral step: two guided forward passes, then
//   x_{t-1} = (x_t - beta_t/sqrt(1-alpha_bar_t) * eps_tilde) / sqrt(alpha_t)
//           + sqrt(beta_t) * z
// z must be all-zeros at t=1 (no noise into the returned image).
template <class T, class Net>
Tensor<T> reverse_step(Net& net, const NoiseSchedule& s, const Tensor<T>& x_t, int t, const std::vector<int>& labels,
                       double omega, const Tensor<T>& z) {
    if (t < 1 || t > s.T) throw std::out_of_range("reverse_step: t out of range 1..T");
    check_same_shape(x_t, z, "reverse_step");
    if (t == 1) {
        for (int64_t i = 0; i < z.numel(); ++i)
            if (z[i] != T(0)) throw std::invalid_argument("reverse_step: z must be all-zeros at t=1");
    }
    const int N = x_t.dim(0);
    const std::vector<int> ts(static_cast<size_t>(N), t);
    const std::vector<int> nulls(static_cast<size_t>(N), kNullLabel);

    Tensor<T> eps_cond, eps_uncond;
    predict_noise(net, s, x_t, ts, labels, eps_cond);
    predict_noise(net, s, x_t, ts, nulls, eps_uncond);
    const Tensor<T> eps = guided_noise(eps_cond, eps_uncond, omega);

    const double beta = s.beta[static_cast<size_t>(t)];
    const double ab = s.alpha_bar[static_cast<size_t>(t)];
    const T inv_sqrt_alpha = static_cast<T>(1.0 / std::sqrt(s.alpha[static_cast<size_t>(t)]));
    const T coef = static_cast<T>(beta / std::sqrt(1.0 - ab));
    const T sigma = static_cast<T>(std::sqrt(beta));

    Tensor<T> out(x_t.shape());
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = inv_sqrt_alpha * (x_t[i] - coef * eps[i]) + sigma * z[i];
    return out;
}

// Full ancestral sampling for one target label. Deterministic in cfg.seed;
// throws on any non-finite intermediate; clamps to [-1,1] only at the end.
template <class T, class Net>
Tensor<T> sample(Net& net, const NoiseSchedule& s, int label, const SamplerConfig& cfg, int channels, int image_size) {
    cfg.validate();
    Rng rng(cfg.seed);
    Tensor<T> x({cfg.num_samples, channels, image_size, image_size});
    rng.fill_normal(x.data(), x.numel());
    const std::vector<int> labels(static_cast<size_t>(cfg.num_samples), label);
    Tensor<T> z(x.shape());
    for (int t = s.T; t >= 1; --t) {
        if (t > 1)
            rng.fill_normal(z.data(), z.numel());
        else
            z.zero();
        x = reverse_step(net, s, x, t, labels, cfg.omega, z);
        for (int64_t i = 0; i < x.numel(); ++i)
            if (!std::isfinite(static_cast<double>(x[i])))
                throw std::runtime_error("sample: non-finite value at t=" + std::to_string(t) + " (divergence)");
    }
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], T(-1), T(1));
    return x;
}

// Epoch-driven training loop: shuffled minibatches, AdamW, EMA shadow,
// reduced learning rate for the final sixth. Returns per-epoch mean losses.
// Pass opt_out to receive the final optimizer state (for self-describing
// checkpoints).
template <class T>
std::vector<double> train_denoiser(Denoiser<T>& net, const NoiseSchedule& s, const Tensor<T>& images,
                                   const std::vector<int>& labels, const TrainConfig& cfg, nn::Ema<T>& ema,
                                   const std::function<void(int, double)>& on_epoch = {},
                                   nn::AdamW<T>* opt_out = nullptr) {
    cfg.validate();
    const int N = images.dim(0);
    if (static_cast<int>(labels.size()) != N) throw std::invalid_argument("train_denoiser: label count mismatch");
    const int64_t per = images.numel() / N;

    Rng rng(cfg.seed);
    nn::AdamW<T> opt(static_cast<T>(cfg.lr), T(0.9), T(0.999), T(1e-8), static_cast<T>(cfg.weight_decay));
    ema = nn::Ema<T>(static_cast<T>(cfg.ema_decay), cfg.ema_warmup);

    std::vector<int> order(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) order[static_cast<size_t>(i)] = i;

    std::vector<double> epoch_losses;
    const int late_start = cfg.max_epochs - cfg.max_epochs / 6;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        opt.lr_ = static_cast<T>(epoch > late_start ? cfg.lr_late : cfg.lr);
        rng.shuffle(order);
        double total = 0.0;
        int batches = 0;
        for (int start = 0; start + cfg.batch_size <= N; start += cfg.batch_size) {
            const int B = cfg.batch_size;
            Tensor<T> xb({B, images.dim(1), images.dim(2), images.dim(3)});
            std::vector<int> lb(static_cast<size_t>(B));
            for (int b = 0; b < B; ++b) {
                const int src = order[static_cast<size_t>(start + b)];
                std::copy(images.data() + src * per, images.data() + (src + 1) * per, xb.data() + b * per);
                lb[static_cast<size_t>(b)] = labels[static_cast<size_t>(src)];
            }
            nn::zero_grads(net.params());
            total += training_loss(net, s, xb, lb, cfg.label_dropout_p, rng, true);
            opt.step(net.params());
            ema.update(net.params());
            ++batches;
        }
        const double mean = batches ? total / batches : 0.0;
        epoch_losses.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    if (opt_out) *opt_out = opt;
    return epoch_losses;
}

}  // namespace dmi::diffusion
