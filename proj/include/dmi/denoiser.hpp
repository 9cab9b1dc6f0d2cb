#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmi/core/rng.hpp"
#include "dmi/core/tensor.hpp"
#include "dmi/nn/layers.hpp"

namespace dmi {

// Class index passed to the denoiser to request the unconditional path.
// Internally it selects the reserved extra row of the label-embedding table.
inline constexpr int kNullLabel = -1;

struct DenoiserConfig {
    int image_size = 32;
    int channels = 3;
    int base_width = 32;
    int depth = 3;
    int num_classes = 10;
    int time_embed_dim = 128;

    void validate() const {
        if (image_size <= 0 || channels <= 0 || base_width <= 0 || depth <= 0 || time_embed_dim <= 0)
            throw std::invalid_argument("denoiser config: all dimensions must be positive");
        if (time_embed_dim % 2 != 0) throw std::invalid_argument("denoiser config: time_embed_dim must be even");
        if (num_classes < 2) throw std::invalid_argument("denoiser config: num_classes must be >= 2");
        const int down = 1 << depth;
        if (image_size % down != 0)
            throw std::invalid_argument("denoiser config: image_size must be divisible by 2^depth");
    }

    // channel width of the feature map entering stage i (0 = stem output)
    int width(int i) const { return base_width * std::min(1 << i, 4); }
};

namespace detail {

inline int gn_groups(int channels) {
    for (int g : {8, 4, 2}) {
        if (channels % g == 0) return g;
    }
    return 1;
}

// conv3x3 -> GN -> GELU -> conv3x3 -> GN -> GELU
template <class T>
struct DoubleConv {
    nn::Conv2d<T> conv1, conv2;
    nn::GroupNorm<T> gn1, gn2;
    nn::Activation<T> act1{nn::Act::Gelu}, act2{nn::Act::Gelu};
    Tensor<T> t1, t2, t3, t4;  // forward intermediates

    DoubleConv() = default;
    DoubleConv(int in_ch, int out_ch)
        : conv1(in_ch, out_ch, 3, 1, 1),
          conv2(out_ch, out_ch, 3, 1, 1),
          gn1(out_ch, gn_groups(out_ch)),
          gn2(out_ch, gn_groups(out_ch)) {}

    void collect(const std::string& p, nn::ParamRefs<T>& out) {
        conv1.collect(p + ".conv1", out);
        gn1.collect(p + ".gn1", out);
        conv2.collect(p + ".conv2", out);
        gn2.collect(p + ".gn2", out);
    }

    void forward(const Tensor<T>& x, Tensor<T>& y) {
        conv1.forward(x, t1);
        gn1.forward(t1, t2);
        act1.forward(t2, t3);
        conv2.forward(t3, t4);
        gn2.forward(t4, t1);
        act2.forward(t1, y);
    }

    void backward(const Tensor<T>& dy, Tensor<T>& dx) {
        Tensor<T> d1, d2;
        act2.backward(dy, d1);
        gn2.backward(d1, d2);
        conv2.backward(d2, d1);
        act1.backward(d1, d2);
        gn1.backward(d2, d1);
        conv1.backward(d1, dx);
    }
};

// SiLU -> Linear on the shared embedding, broadcast-added over space.
template <class T>
struct TimeInject {
    nn::Activation<T> act{nn::Act::Silu};
    nn::Linear<T> lin;
    Tensor<T> t1, e;

    TimeInject() = default;
    TimeInject(int embed_dim, int out_ch) : lin(embed_dim, out_ch) {}

    void collect(const std::string& p, nn::ParamRefs<T>& out) { lin.collect(p + ".lin", out); }

    // y[n,c,s] += proj(emb)[n,c]
    void forward(const Tensor<T>& emb, Tensor<T>& y) {
        act.forward(emb, t1);
        lin.forward(t1, e);
        const int N = y.dim(0), C = y.dim(1);
        const int S = y.dim(2) * y.dim(3);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T v = e[static_cast<int64_t>(n) * C + c];
                T* row = y.data() + (static_cast<int64_t>(n) * C + c) * S;
                for (int s = 0; s < S; ++s) row[s] += v;
            }
    }

    // accumulates d(emb) from the spatial sums of dy; dy itself continues
    // unchanged to the preceding layer
    void backward(const Tensor<T>& dy, Tensor<T>& demb_accum) {
        const int N = dy.dim(0), C = dy.dim(1);
        const int S = dy.dim(2) * dy.dim(3);
        Tensor<T> de({N, C});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* row = dy.data() + (static_cast<int64_t>(n) * C + c) * S;
                T acc = T(0);
                for (int s = 0; s < S; ++s) acc += row[s];
                de[static_cast<int64_t>(n) * C + c] = acc;
            }
        Tensor<T> d1, d2;
        lin.backward(de, d1);
        act.backward(d1, d2);
        for (int64_t i = 0; i < demb_accum.numel(); ++i) demb_accum[i] += d2[i];
    }
};

}  // namespace detail

// Conditional noise predictor: U-Net over (N, C, H, W) with sinusoidal
// timestep embedding, an additive label embedding (num_classes real rows
// plus one reserved null row), per-stage embedding injection, and
// self-attention at resolutions <= 16.
template <class T>
class Denoiser {
public:
    Denoiser() = default;

    explicit Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        const int E = cfg.time_embed_dim;
        label_emb_ = nn::Embedding<T>(cfg.num_classes + 1, E);
        stem_ = detail::DoubleConv<T>(cfg.channels, cfg.width(0));
        for (int i = 0; i < cfg.depth; ++i) {
            const int win = cfg.width(i), wout = cfg.width(i + 1);
            const int res = cfg.image_size >> (i + 1);
            down_dc_.emplace_back(win, wout);
            down_inject_.emplace_back(E, wout);
            down_sa_.emplace_back();
            if (use_attention(res)) down_sa_.back() = nn::SelfAttention2d<T>(wout, detail::gn_groups(wout));
            down_has_sa_.push_back(use_attention(res));
        }
        const int wb = cfg.width(cfg.depth);
        bot1_ = detail::DoubleConv<T>(wb, wb);
        bot2_ = detail::DoubleConv<T>(wb, wb);
        for (int i = cfg.depth - 1; i >= 0; --i) {
            const int wskip = cfg.width(i);
            const int win = (i == cfg.depth - 1) ? wb : cfg.width(i + 1);
            const int res = cfg.image_size >> i;
            up_tconv_.emplace_back(win, wskip);
            up_dc_.emplace_back(2 * wskip, wskip);
            up_inject_.emplace_back(E, wskip);
            up_sa_.emplace_back();
            if (use_attention(res)) up_sa_.back() = nn::SelfAttention2d<T>(wskip, detail::gn_groups(wskip));
            up_has_sa_.push_back(use_attention(res));
        }
        head_ = nn::Conv2d<T>(cfg.width(0), cfg.channels, 1, 1, 0);
        pools_.resize(static_cast<size_t>(cfg.depth));
        collect_params();
    }

    // the parameter registry points into this object; pinning it is simpler
    // than re-collecting after every move
    Denoiser(const Denoiser&) = delete;
    Denoiser& operator=(const Denoiser&) = delete;
    Denoiser(Denoiser&&) = delete;
    Denoiser& operator=(Denoiser&&) = delete;

    static bool use_attention(int resolution) { return resolution <= 16; }

    const DenoiserConfig& config() const { return cfg_; }

    nn::ParamRefs<T>& params() { return params_; }

    // He-style initialization, deterministic in (cfg, seed)
    void init_params(uint64_t seed) {
        Rng rng(seed);
        for (auto* p : params_) {
            Rng stream = rng.stream(p->name);
            const auto& shape = p->value.shape();
            const bool is_bias = shape.size() == 1 && p->name.find(".gn") == std::string::npos &&
                                 p->name.find("label_emb") == std::string::npos;
            if (p->name.find(".gamma") != std::string::npos) {
                p->value.fill(T(1));
            } else if (p->name.find(".beta") != std::string::npos || is_bias) {
                p->value.zero();
            } else if (p->name.find("label_emb") != std::string::npos) {
                stream.fill_normal(p->value.data(), p->value.numel(), 0.0, 0.02);
            } else {
                int64_t fan_in = 1;
                for (size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
                const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
                stream.fill_normal(p->value.data(), p->value.numel(), 0.0, std);
            }
        }
    }

    // eps_hat = f(x_t, t, label); label kNullLabel selects the null row
    void forward(const Tensor<T>& x, const std::vector<int>& t, const std::vector<int>& labels, Tensor<T>& out) {
        const int N = x.dim(0);
        if (static_cast<int>(t.size()) != N || static_cast<int>(labels.size()) != N)
            throw std::invalid_argument("denoiser: batch size mismatch between x, t, labels");
        if (x.dim(1) != cfg_.channels || x.dim(2) != cfg_.image_size || x.dim(3) != cfg_.image_size)
            throw std::invalid_argument("denoiser: input shape does not match config");
        std::vector<int> rows(t.size());
        for (int n = 0; n < N; ++n) {
            if (t[static_cast<size_t>(n)] < 1) throw std::out_of_range("denoiser: timestep must be >= 1");
            const int l = labels[static_cast<size_t>(n)];
            if (l != kNullLabel && (l < 0 || l >= cfg_.num_classes))
                throw std::out_of_range("denoiser: label index out of range");
            rows[static_cast<size_t>(n)] = (l == kNullLabel) ? cfg_.num_classes : l;
        }

        sinusoidal_embed(t, emb_t_);
        label_emb_.forward(rows, emb_l_);
        emb_.resize(emb_t_.shape());
        for (int64_t i = 0; i < emb_.numel(); ++i) emb_[i] = emb_t_[i] + emb_l_[i];

        const int D = cfg_.depth;
        skips_.resize(static_cast<size_t>(D));
        stem_.forward(x, skips_[0]);
        const Tensor<T>* cur = &skips_[0];
        Tensor<T> tmp;
        for (int i = 0; i < D; ++i) {
            pools_[static_cast<size_t>(i)].forward(*cur, pooled_);
            Tensor<T>& stage_out = (i + 1 < D) ? skips_[static_cast<size_t>(i + 1)] : bot_in_;
            down_dc_[static_cast<size_t>(i)].forward(pooled_, down_pre_sa_);
            down_inject_[static_cast<size_t>(i)].forward(emb_, down_pre_sa_);
            if (down_has_sa_[static_cast<size_t>(i)])
                down_sa_[static_cast<size_t>(i)].forward(down_pre_sa_, stage_out);
            else
                stage_out = down_pre_sa_;
            cur = &stage_out;
        }
        bot1_.forward(*cur, bot_mid_);
        bot2_.forward(bot_mid_, up_cur_);
        for (int u = 0; u < D; ++u) {
            const int skip_idx = D - 1 - u;
            up_tconv_[static_cast<size_t>(u)].forward(up_cur_, up_t_);
            concat_channels(up_t_, skips_[static_cast<size_t>(skip_idx)], up_cat_);
            up_dc_[static_cast<size_t>(u)].forward(up_cat_, tmp);
            up_inject_[static_cast<size_t>(u)].forward(emb_, tmp);
            if (up_has_sa_[static_cast<size_t>(u)])
                up_sa_[static_cast<size_t>(u)].forward(tmp, up_cur_);
            else
                up_cur_ = tmp;
        }
        head_.forward(up_cur_, out);
    }

    // accumulates parameter gradients; input-image gradients are discarded
    void backward(const Tensor<T>& dout) {
        const int D = cfg_.depth;
        demb_.resize(emb_.shape());
        demb_.zero();
        Tensor<T> dcur, d1, d2, dskip_part;
        dskips_.assign(static_cast<size_t>(D), Tensor<T>());

        head_.backward(dout, dcur);
        for (int u = D - 1; u >= 0; --u) {
            const int skip_idx = D - 1 - u;
            if (up_has_sa_[static_cast<size_t>(u)]) {
                up_sa_[static_cast<size_t>(u)].backward(dcur, d1);
                dcur = d1;
            }
            up_inject_[static_cast<size_t>(u)].backward(dcur, demb_);
            up_dc_[static_cast<size_t>(u)].backward(dcur, d1);
            split_channels(d1, d2, dskip_part);
            accumulate(dskips_[static_cast<size_t>(skip_idx)], dskip_part);
            up_tconv_[static_cast<size_t>(u)].backward(d2, dcur);
        }
        bot2_.backward(dcur, d1);
        bot1_.backward(d1, dcur);
        for (int i = D - 1; i >= 0; --i) {
            if (i + 1 < D) accumulate(dcur, dskips_[static_cast<size_t>(i + 1)]);
            if (down_has_sa_[static_cast<size_t>(i)]) {
                down_sa_[static_cast<size_t>(i)].backward(dcur, d1);
                dcur = d1;
            }
            down_inject_[static_cast<size_t>(i)].backward(dcur, demb_);
            down_dc_[static_cast<size_t>(i)].backward(dcur, d1);
            pools_[static_cast<size_t>(i)].backward(d1, dcur);
        }
        accumulate(dcur, dskips_[0]);
        stem_.backward(dcur, d1);
        label_emb_.backward(demb_);
    }

    // flat weight access for EMA swaps and checkpointing
    std::vector<Tensor<T>> weights() const {
        std::vector<Tensor<T>> w;
        w.reserve(params_.size());
        for (const auto* p : params_) w.push_back(p->value);
        return w;
    }
    void set_weights(const std::vector<Tensor<T>>& w) {
        if (w.size() != params_.size()) throw std::invalid_argument("denoiser: weight count mismatch");
        for (size_t i = 0; i < w.size(); ++i) {
            if (!w[i].same_shape(params_[i]->value)) throw std::invalid_argument("denoiser: weight shape mismatch");
            params_[i]->value = w[i];
        }
    }

    nn::Embedding<T>& label_embedding() { return label_emb_; }

    void sinusoidal_embed(const std::vector<int>& t, Tensor<T>& out) const {
        const int N = static_cast<int>(t.size());
        const int E = cfg_.time_embed_dim;
        out.resize({N, E});
        const int half = E / 2;
        for (int n = 0; n < N; ++n) {
            for (int i = 0; i < half; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
                const double a = static_cast<double>(t[static_cast<size_t>(n)]) * freq;
                out[static_cast<int64_t>(n) * E + 2 * i] = static_cast<T>(std::sin(a));
                out[static_cast<int64_t>(n) * E + 2 * i + 1] = static_cast<T>(std::cos(a));
            }
        }
    }

private:
    void collect_params() {
        params_.clear();
        label_emb_.collect("label_emb", params_);
        stem_.collect("stem", params_);
        for (int i = 0; i < cfg_.depth; ++i) {
            const std::string p = "down" + std::to_string(i);
            down_dc_[static_cast<size_t>(i)].collect(p + ".dc", params_);
            down_inject_[static_cast<size_t>(i)].collect(p + ".inject", params_);
            if (down_has_sa_[static_cast<size_t>(i)]) down_sa_[static_cast<size_t>(i)].collect(p + ".sa", params_);
        }
        bot1_.collect("bot1", params_);
        bot2_.collect("bot2", params_);
        for (int u = 0; u < cfg_.depth; ++u) {
            const std::string p = "up" + std::to_string(u);
            up_tconv_[static_cast<size_t>(u)].collect(p + ".tconv", params_);
            up_dc_[static_cast<size_t>(u)].collect(p + ".dc", params_);
            up_inject_[static_cast<size_t>(u)].collect(p + ".inject", params_);
            if (up_has_sa_[static_cast<size_t>(u)]) up_sa_[static_cast<size_t>(u)].collect(p + ".sa", params_);
        }
        head_.collect("head", params_);
    }

    static void concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
        const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
        out.resize({N, Ca + Cb, H, W});
        const int64_t sa = static_cast<int64_t>(Ca) * H * W;
        const int64_t sb = static_cast<int64_t>(Cb) * H * W;
        for (int n = 0; n < N; ++n) {
            std::copy(a.data() + n * sa, a.data() + (n + 1) * sa, out.data() + n * (sa + sb));
            std::copy(b.data() + n * sb, b.data() + (n + 1) * sb, out.data() + n * (sa + sb) + sa);
        }
    }

    void split_channels(const Tensor<T>& dcat, Tensor<T>& da, Tensor<T>& db) const {
        const int N = dcat.dim(0), C = dcat.dim(1), H = dcat.dim(2), W = dcat.dim(3);
        const int Ca = C / 2, Cb = C - Ca;
        da.resize({N, Ca, H, W});
        db.resize({N, Cb, H, W});
        const int64_t sa = static_cast<int64_t>(Ca) * H * W;
        const int64_t sb = static_cast<int64_t>(Cb) * H * W;
        for (int n = 0; n < N; ++n) {
            std::copy(dcat.data() + n * (sa + sb), dcat.data() + n * (sa + sb) + sa, da.data() + n * sa);
            std::copy(dcat.data() + n * (sa + sb) + sa, dcat.data() + (n + 1) * (sa + sb), db.data() + n * sb);
        }
    }

    static void accumulate(Tensor<T>& into, const Tensor<T>& from) {
        if (from.empty()) return;
        if (into.empty()) {
            into = from;
            return;
        }
        for (int64_t i = 0; i < into.numel(); ++i) into[i] += from[i];
    }

    DenoiserConfig cfg_;
    nn::Embedding<T> label_emb_;
    detail::DoubleConv<T> stem_, bot1_, bot2_;
    std::vector<nn::MaxPool2x2<T>> pools_;
    std::vector<detail::DoubleConv<T>> down_dc_, up_dc_;
    std::vector<detail::TimeInject<T>> down_inject_, up_inject_;
    std::vector<nn::SelfAttention2d<T>> down_sa_, up_sa_;
    std::vector<bool> down_has_sa_, up_has_sa_;
    std::vector<nn::ConvTranspose2x2<T>> up_tconv_;
    nn::Conv2d<T> head_;
    nn::ParamRefs<T> params_;

    // forward caches
    Tensor<T> emb_t_, emb_l_, emb_, demb_;
    std::vector<Tensor<T>> skips_, dskips_;
    Tensor<T> pooled_, down_pre_sa_, bot_in_, bot_mid_, up_cur_, up_t_, up_cat_;
};

using Denoiserf = Denoiser<float>;
using Denoiserd = Denoiser<double>;

}  // namespace dmi
