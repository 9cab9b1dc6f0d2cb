#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmi/core/kernels.hpp"
#include "dmi/core/tensor.hpp"

// Layer zoo with hand-written backward passes. Layers cache whatever the
// backward pass needs; a training step is forward -> backward -> optimizer.
// Gradients accumulate, so callers zero them between steps.

namespace dmi::nn {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    void init_shape(std::vector<int> shape) {
        value.resize(shape);
        grad.resize(std::move(shape));
    }
    void zero_grad() { grad.zero(); }
};

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;

template <class T>
inline void zero_grads(ParamRefs<T>& params) {
    for (auto* p : params) p->zero_grad();
}

// ---------------------------------------------------------------------- conv

template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int k, int stride, int pad, bool bias = true)
        : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad), has_bias_(bias) {
        weight_.init_shape({out_ch, in_ch, k, k});
        if (has_bias_) bias_.init_shape({out_ch});
    }

    void collect(const std::string& prefix, ParamRefs<T>& out) {
        weight_.name = prefix + ".weight";
        out.push_back(&weight_);
        if (has_bias_) {
            bias_.name = prefix + ".bias";
            out.push_back(&bias_);
        }
    }

    void forward(const Tensor<T>& x, Tensor<T>& y) {
        const int N = x.dim(0);
        const int H = x.dim(2);
        const int W = x.dim(3);
        const int OH = (H + 2 * pad_ - k_) / stride_ + 1;
        const int OW = (W + 2 * pad_ - k_) / stride_ + 1;
        const int Kp = in_ch_ * k_ * k_;
        const int S = OH * OW;
        x_ = x;
        y.resize({N, out_ch_, OH, OW});
        col_.resize({Kp, S});
        for (int n = 0; n < N; ++n) {
            kernels::im2col(x.data() + x.offset(n, 0, 0, 0), in_ch_, H, W, k_, k_, stride_, pad_, col_.data());
            kernels::gemm_nn(out_ch_, S, Kp, weight_.value.data(), col_.data(), y.data() + y.offset(n, 0, 0, 0), false);
            if (has_bias_) kernels::add_row_bias(out_ch_, S, bias_.value.data(), y.data() + y.offset(n, 0, 0, 0));
        }
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        const int N = x_.dim(0);
        const int H = x_.dim(2);
        const int W = x_.dim(3);
        const int OH = dy.dim(2);
        const int OW = dy.dim(3);
        const int Kp = in_ch_ * k_ * k_;
        const int S = OH * OW;
        dx.resize(x_.shape());
        dcol_.resize({Kp, S});
        for (int n = 0; n < N; ++n) {
            const T* dyn = dy.data() + dy.offset(n, 0, 0, 0);
            kernels::im2col(x_.data() + x_.offset(n, 0, 0, 0), in_ch_, H, W, k_, k_, stride_, pad_, col_.data());
            kernels::gemm_nt(out_ch_, Kp, S, dyn, col_.data(), weight_.grad.data(), true);
            if (has_bias_) kernels::row_sums(out_ch_, S, dyn, bias_.grad.data(), true);
            kernels::gemm_tn(Kp, S, out_ch_, weight_.value.data(), dyn, dcol_.data(), false);
            kernels::col2im(dcol_.data(), in_ch_, H, W, k_, k_, stride_, pad_, dx.data() + dx.offset(n, 0, 0, 0));
        }
    }

    Parameter<T> weight_, bias_;
    int in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    bool has_bias_ = true;

private:
    Tensor<T> x_, col_, dcol_;
};

// ------------------------------------------------------------ transposed conv

// Kernel 2, stride 2 upsampler (the only transposed conv the nets use).
template <class T>
class ConvTranspose2x2 {
public:
    ConvTranspose2x2() = default;
    ConvTranspose2x2(int in_ch, int out_ch) : in_ch_(in_ch), out_ch_(out_ch) {
        weight_.init_shape({in_ch, out_ch, 2, 2});
        bias_.init_shape({out_ch});
    }

    void collect(const std::string& prefix, ParamRefs<T>& out) {
        weight_.name = prefix + ".weight";
        bias_.name = prefix + ".bias";
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

    void forward(const Tensor<T>& x, Tensor<T>& y) {
        const int N = x.dim(0);
        const int H = x.dim(2);
        const int W = x.dim(3);
        x_ = x;
        y.resize({N, out_ch_, H * 2, W * 2});
        kernels::convtranspose2x2(x.data(), weight_.value.data(), bias_.value.data(), N, in_ch_, out_ch_, H, W, y.data());
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        const int N = x_.dim(0);
        const int H = x_.dim(2);
        const int W = x_.dim(3);
        dx.resize(x_.shape());
        dw_scratch_.resize(weight_.value.shape());
        db_scratch_.resize(bias_.value.shape());
        kernels::convtranspose2x2_backward(x_.data(), weight_.value.data(), dy.data(), N, in_ch_, out_ch_, H, W,
                                           dx.data(), dw_scratch_.data(), db_scratch_.data());
        for (int64_t i = 0; i < weight_.grad.numel(); ++i) weight_.grad[i] += dw_scratch_[i];
        for (int64_t i = 0; i < bias_.grad.numel(); ++i) bias_.grad[i] += db_scratch_[i];
    }

    Parameter<T> weight_, bias_;
    int in_ch_ = 0, out_ch_ = 0;

private:
    Tensor<T> x_, dw_scratch_, db_scratch_;
};

// --------------------------------------------------------------------- linear

template <class T>
class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features, bool bias = true)
        : in_(in_features), out_(out_features), has_bias_(bias) {
        weight_.init_shape({out_features, in_features});
        if (has_bias_) bias_.init_shape({out_features});
    }

    void collect(const std::string& prefix, ParamRefs<T>& out) {
        weight_.name = prefix + ".weight";
        out.push_back(&weight_);
        if (has_bias_) {
            bias_.name = prefix + ".bias";
            out.push_back(&bias_);
        }
    }

    // x: (N, in) -> y: (N, out)
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        const int N = x.dim(0);
        x_ = x;
        y.resize({N, out_});
        kernels::gemm_nt(N, out_, in_, x.data(), weight_.value.data(), y.data(), false);
        if (has_bias_) {
            const T* b = bias_.value.data();
            for (int n = 0; n < N; ++n) {
                T* row = y.data() + static_cast<int64_t>(n) * out_;
                for (int j = 0; j < out_; ++j) row[j] += b[j];
            }
        }
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        const int N = x_.dim(0);
        dx.resize(x_.shape());
        kernels::gemm_nn(N, in_, out_, dy.data(), weight_.value.data(), dx.data(), false);
        kernels::gemm_tn(out_, in_, N, dy.data(), x_.data(), weight_.grad.data(), true);
        if (has_bias_) {
            T* db = bias_.grad.data();
            for (int n = 0; n < N; ++n) {
                const T* row = dy.data() + static_cast<int64_t>(n) * out_;
                for (int j = 0; j < out_; ++j) db[j] += row[j];
            }
        }
    }

    Parameter<T> weight_, bias_;
    int in_ = 0, out_ = 0;
    bool has_bias_ = true;

private:
    Tensor<T> x_;
};

// ------------------------------------------------------------------ embedding

template <class T>
class Embedding {
public:
    Embedding() = default;
    Embedding(int num_embeddings, int dim) : num_(num_embeddings), dim_(dim) {
        weight_.init_shape({num_embeddings, dim});
    }

    void collect(const std::string& prefix, ParamRefs<T>& out) {
        weight_.name = prefix + ".weight";
        out.push_back(&weight_);
    }

    void forward(const std::vector<int>& idx, Tensor<T>& y) {
        idx_ = idx;
        const int N = static_cast<int>(idx.size());
        y.resize({N, dim_});
        for (int n = 0; n < N; ++n) {
            if (idx[n] < 0 || idx[n] >= num_) throw std::out_of_range("embedding index out of range");
            const T* src = weight_.value.data() + static_cast<int64_t>(idx[n]) * dim_;
            std::copy(src, src + dim_, y.data() + static_cast<int64_t>(n) * dim_);
        }
    }

    void backward(const Tensor<T>& dy) {
        for (size_t n = 0; n < idx_.size(); ++n) {
            T* dst = weight_.grad.data() + static_cast<int64_t>(idx_[n]) * dim_;
            const T* src = dy.data() + static_cast<int64_t>(n) * dim_;
            for (int j = 0; j < dim_; ++j) dst[j] += src[j];
        }
    }

    Parameter<T> weight_;
    int num_ = 0, dim_ = 0;

private:
    std::vector<int> idx_;
};

// ----------------------------------------------------------------- group norm

template <class T>
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(int channels, int groups, T eps = T(1e-5)) : channels_(channels), groups_(groups), eps_(eps) {
        if (channels % groups != 0) throw std::invalid_argument("GroupNorm: channels % groups != 0");
        gamma_.init_shape({channels});
        beta_.init_shape({channels});
        gamma_.value.fill(T(1));
    }

    void collect(const std::string& prefix, ParamRefs<T>& out) {
        gamma_.name = prefix + ".gamma";
        beta_.name = prefix + ".beta";
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

    void forward(const Tensor<T>& x, Tensor<T>& y) {
        const int N = x.dim(0);
        const int S = static_cast<int>(x.numel() / (static_cast<int64_t>(N) * channels_));
        x_ = x;
        y.resize(x.shape());
        mean_.resize({N, groups_});
        rstd_.resize({N, groups_});
        kernels::groupnorm(x.data(), gamma_.value.data(), beta_.value.data(), N, channels_, S, groups_, eps_,
                           y.data(), mean_.data(), rstd_.data());
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        const int N = x_.dim(0);
        const int S = static_cast<int>(x_.numel() / (static_cast<int64_t>(N) * channels_));
        dx.resize(x_.shape());
        dgamma_scratch_.resize({channels_});
        dbeta_scratch_.resize({channels_});
        kernels::groupnorm_backward(x_.data(), gamma_.value.data(), mean_.data(), rstd_.data(), dy.data(),
                                    N, channels_, S, groups_, dx.data(), dgamma_scratch_.data(), dbeta_scratch_.data());
        for (int c = 0; c < channels_; ++c) {
            gamma_.grad[c] += dgamma_scratch_[c];
            beta_.grad[c] += dbeta_scratch_[c];
        }
    }

    Parameter<T> gamma_, beta_;
    int channels_ = 0, groups_ = 1;
    T eps_ = T(1e-5);

private:
    Tensor<T> x_, mean_, rstd_, dgamma_scratch_, dbeta_scratch_;
};

// ----------------------------------------------------------------- batch norm

template <class T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels, T eps = T(1e-5), T momentum = T(0.9)) : channels_(channels), eps_(eps), momentum_(momentum) {
        gamma_.init_shape({channels});
        beta_.init_shape({channels});
        gamma_.value.fill(T(1));
        running_mean_.resize({channels});
        running_var_ = Tensor<T>::full({channels}, T(1));
    }

    void collect(const std::string& prefix, ParamRefs<T>& out) {
        gamma_.name = prefix + ".gamma";
        beta_.name = prefix + ".beta";
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

    void forward(const Tensor<T>& x, Tensor<T>& y, bool train) {
        const int N = x.dim(0);
        const int S = static_cast<int>(x.numel() / (static_cast<int64_t>(N) * channels_));
        x_ = x;
        y.resize(x.shape());
        save_mean_.resize({channels_});
        save_rstd_.resize({channels_});
        kernels::batchnorm(x.data(), gamma_.value.data(), beta_.value.data(), N, channels_, S, eps_, train, momentum_,
                           running_mean_.data(), running_var_.data(), y.data(), save_mean_.data(), save_rstd_.data());
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        const int N = x_.dim(0);
        const int S = static_cast<int>(x_.numel() / (static_cast<int64_t>(N) * channels_));
        dx.resize(x_.shape());
        dgamma_scratch_.resize({channels_});
        dbeta_scratch_.resize({channels_});
        kernels::batchnorm_backward(x_.data(), gamma_.value.data(), save_mean_.data(), save_rstd_.data(), dy.data(),
                                    N, channels_, S, dx.data(), dgamma_scratch_.data(), dbeta_scratch_.data());
        for (int c = 0; c < channels_; ++c) {
            gamma_.grad[c] += dgamma_scratch_[c];
            beta_.grad[c] += dbeta_scratch_[c];
        }
    }

    Parameter<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;  // non-trainable state, checkpointed
    int channels_ = 0;
    T eps_ = T(1e-5), momentum_ = T(0.9);

private:
    Tensor<T> x_, save_mean_, save_rstd_, dgamma_scratch_, dbeta_scratch_;
};

// ------------------------------------------------------------------- max pool

template <class T>
class MaxPool2x2 {
public:
    void forward(const Tensor<T>& x, Tensor<T>& y) {
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        in_shape_ = x.shape();
        y.resize({N, C, H / 2, W / 2});
        argmax_.resize({N, C, H / 2, W / 2});
        kernels::maxpool2x2(x.data(), N, C, H, W, y.data(), argmax_.data());
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        dx.resize(in_shape_);
        kernels::maxpool2x2_backward(dy.data(), argmax_.data(), in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3],
                                     dx.data());
    }

private:
    std::vector<int> in_shape_;
    Tensor<uint8_t> argmax_;
};

// ---------------------------------------------------------------- activations

enum class Act { Relu, Silu, Gelu };

template <class T>
class Activation {
public:
    Activation() = default;
    explicit Activation(Act kind) : kind_(kind) {}

    void forward(const Tensor<T>& x, Tensor<T>& y) {
        x_ = x;
        y.resize(x.shape());
        switch (kind_) {
            case Act::Relu: kernels::relu(x.data(), x.numel(), y.data()); break;
            case Act::Silu: kernels::silu(x.data(), x.numel(), y.data()); break;
            case Act::Gelu: kernels::gelu(x.data(), x.numel(), y.data()); break;
        }
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        dx.resize(x_.shape());
        switch (kind_) {
            case Act::Relu: kernels::relu_backward(x_.data(), dy.data(), x_.numel(), dx.data()); break;
            case Act::Silu: kernels::silu_backward(x_.data(), dy.data(), x_.numel(), dx.data()); break;
            case Act::Gelu: kernels::gelu_backward(x_.data(), dy.data(), x_.numel(), dx.data()); break;
        }
    }

private:
    Act kind_ = Act::Relu;
    Tensor<T> x_;
};

// -------------------------------------------------------------- self-attention

// Pre-normed single-head attention over spatial positions with a residual:
//   h = GN(x); q,k,v = W_qkv h; attn = softmax(q^T k / sqrt(C));
//   y = x + W_o (v attn^T)
template <class T>
class SelfAttention2d {
public:
    SelfAttention2d() = default;
    SelfAttention2d(int channels, int gn_groups) : norm_(channels, gn_groups), C_(channels) {
        wqkv_.init_shape({3 * channels, channels});
        bqkv_.init_shape({3 * channels});
        wo_.init_shape({channels, channels});
        bo_.init_shape({channels});
    }

    void collect(const std::string& prefix, ParamRefs<T>& out) {
        norm_.collect(prefix + ".norm", out);
        wqkv_.name = prefix + ".wqkv";
        bqkv_.name = prefix + ".bqkv";
        wo_.name = prefix + ".wo";
        bo_.name = prefix + ".bo";
        out.push_back(&wqkv_);
        out.push_back(&bqkv_);
        out.push_back(&wo_);
        out.push_back(&bo_);
    }

    void forward(const Tensor<T>& x, Tensor<T>& y) {
        const int N = x.dim(0);
        const int S = x.dim(2) * x.dim(3);
        x_ = x;
        norm_.forward(x, h_);
        qkv_.resize({N, 3 * C_, S});
        p_.resize({N, S, S});
        attnout_.resize({N, C_, S});
        scores_.resize({S, S});
        y.resize(x.shape());
        const T scale = T(1) / std::sqrt(static_cast<T>(C_));
        for (int n = 0; n < N; ++n) {
            const T* hn = h_.data() + static_cast<int64_t>(n) * C_ * S;
            T* qkv = qkv_.data() + static_cast<int64_t>(n) * 3 * C_ * S;
            kernels::gemm_nn(3 * C_, S, C_, wqkv_.value.data(), hn, qkv, false);
            kernels::add_row_bias(3 * C_, S, bqkv_.value.data(), qkv);
            const T* q = qkv;
            const T* k = qkv + static_cast<int64_t>(C_) * S;
            const T* v = qkv + static_cast<int64_t>(2) * C_ * S;
            kernels::gemm_tn(S, S, C_, q, k, scores_.data(), false);
            for (int64_t i = 0; i < scores_.numel(); ++i) scores_[i] *= scale;
            T* p = p_.data() + static_cast<int64_t>(n) * S * S;
            kernels::softmax_rows(scores_.data(), S, S, p);
            T* att = attnout_.data() + static_cast<int64_t>(n) * C_ * S;
            kernels::gemm_nt(C_, S, S, v, p, att, false);
            T* yn = y.data() + static_cast<int64_t>(n) * C_ * S;
            kernels::gemm_nn(C_, S, C_, wo_.value.data(), att, yn, false);
            kernels::add_row_bias(C_, S, bo_.value.data(), yn);
            const T* xn = x.data() + static_cast<int64_t>(n) * C_ * S;
            for (int64_t i = 0; i < static_cast<int64_t>(C_) * S; ++i) yn[i] += xn[i];
        }
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        const int N = x_.dim(0);
        const int S = x_.dim(2) * x_.dim(3);
        const T scale = T(1) / std::sqrt(static_cast<T>(C_));
        dh_.resize(h_.shape());
        Tensor<T> dout({C_, S}), dqkv({3 * C_, S}), dp({S, S}), dscores({S, S});
        for (int n = 0; n < N; ++n) {
            const T* dyn = dy.data() + static_cast<int64_t>(n) * C_ * S;
            const T* att = attnout_.data() + static_cast<int64_t>(n) * C_ * S;
            const T* p = p_.data() + static_cast<int64_t>(n) * S * S;
            const T* qkv = qkv_.data() + static_cast<int64_t>(n) * 3 * C_ * S;
            const T* q = qkv;
            const T* k = qkv + static_cast<int64_t>(C_) * S;
            const T* v = qkv + static_cast<int64_t>(2) * C_ * S;
            const T* hn = h_.data() + static_cast<int64_t>(n) * C_ * S;
            // output projection
            kernels::gemm_nt(C_, C_, S, dyn, att, wo_.grad.data(), true);
            kernels::row_sums(C_, S, dyn, bo_.grad.data(), true);
            kernels::gemm_tn(C_, S, C_, wo_.value.data(), dyn, dout.data(), false);
            // attention application: att = v * p^T
            T* dq = dqkv.data();
            T* dk = dqkv.data() + static_cast<int64_t>(C_) * S;
            T* dv = dqkv.data() + static_cast<int64_t>(2) * C_ * S;
            kernels::gemm_nn(C_, S, S, dout.data(), p, dv, false);
            kernels::gemm_tn(S, S, C_, dout.data(), v, dp.data(), false);
            kernels::softmax_backward_rows(p, dp.data(), S, S, dscores.data());
            for (int64_t i = 0; i < dscores.numel(); ++i) dscores[i] *= scale;
            kernels::gemm_nt(C_, S, S, k, dscores.data(), dq, false);
            kernels::gemm_nn(C_, S, S, q, dscores.data(), dk, false);
            // qkv projection
            kernels::gemm_nt(3 * C_, C_, S, dqkv.data(), hn, wqkv_.grad.data(), true);
            kernels::row_sums(3 * C_, S, dqkv.data(), bqkv_.grad.data(), true);
            T* dhn = dh_.data() + static_cast<int64_t>(n) * C_ * S;
            kernels::gemm_tn(C_, S, 3 * C_, wqkv_.value.data(), dqkv.data(), dhn, false);
        }
        norm_.backward(dh_, dx);
        // residual path
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
    }

    Parameter<T> wqkv_, bqkv_, wo_, bo_;
    GroupNorm<T> norm_;
    int C_ = 0;

private:
    Tensor<T> x_, h_, qkv_, p_, attnout_, scores_, dh_;
};

// ------------------------------------------------------------------ optimizer

template <class T>
class AdamW {
public:
    AdamW() = default;
    AdamW(T lr, T beta1, T beta2, T eps, T weight_decay)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    void step(ParamRefs<T>& params) {
        if (m_.size() != params.size()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].resize(params[i]->value.shape());
                v_[i].resize(params[i]->value.shape());
            }
        }
        ++t_;
        for (size_t i = 0; i < params.size(); ++i) {
            if (!params[i]->trainable) continue;
            kernels::adamw_step(params[i]->value.data(), params[i]->grad.data(), m_[i].data(), v_[i].data(),
                                params[i]->value.numel(), lr_, beta1_, beta2_, eps_, wd_, t_);
        }
    }

    T lr_ = T(3e-4);
    T beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8), wd_ = T(1e-4);
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

// Shadow-weight tracker: copies live weights for the first `warmup` steps,
// then decays toward them.
template <class T>
class Ema {
public:
    Ema() = default;
    Ema(T decay, int64_t warmup) : decay_(decay), warmup_(warmup) {}

    void update(const ParamRefs<T>& params) {
        if (shadow_.size() != params.size()) {
            shadow_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) shadow_[i] = params[i]->value;
            step_ = 0;
        }
        ++step_;
        if (step_ <= warmup_) {
            for (size_t i = 0; i < params.size(); ++i) shadow_[i] = params[i]->value;
            return;
        }
        for (size_t i = 0; i < params.size(); ++i)
            kernels::ema_update(shadow_[i].data(), params[i]->value.data(), shadow_[i].numel(), decay_);
    }

    T decay_ = T(0.995);
    int64_t warmup_ = 200;
    int64_t step_ = 0;
    std::vector<Tensor<T>> shadow_;
};

}  // namespace dmi::nn
