#include "dmi/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmi/core/rng.hpp"
#include "dmi/nn/layers.hpp"

namespace dmi {
namespace {

void validate_input_images(const Tensorf& x, int channels, int image_size, const char* who) {
    if (x.rank() != 4 || x.dim(1) != channels || x.dim(2) != image_size || x.dim(3) != image_size)
        throw std::invalid_argument(std::string(who) + ": expected (N, " + std::to_string(channels) + ", " +
                                    std::to_string(image_size) + ", " + std::to_string(image_size) + "), got " +
                                    x.shape_str());
    if (x.dim(0) < 1) throw std::invalid_argument(std::string(who) + ": empty batch");
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float v = x[i];
        if (!std::isfinite(v) || v < -1e-5f || v > 1.0f + 1e-5f)
            throw std::invalid_argument(std::string(who) + ": pixel values must lie in [0, 1]");
    }
}

// (x - mean_c) / std_c, the only preprocessing either network applies.
void normalize_images(const Tensorf& x, const Tensorf& mean, const Tensorf& stdev, Tensorf& out) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t S = x.numel() / (static_cast<int64_t>(N) * C);
    out.resize(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float m = mean[c], inv = 1.0f / stdev[c];
            const float* src = x.data() + (static_cast<int64_t>(n) * C + c) * S;
            float* dst = out.data() + (static_cast<int64_t>(n) * C + c) * S;
            for (int64_t i = 0; i < S; ++i) dst[i] = (src[i] - m) * inv;
        }
}

void channel_stats(const Tensorf& images, Tensorf& mean, Tensorf& stdev) {
    const int N = images.dim(0), C = images.dim(1);
    const int64_t S = images.numel() / (static_cast<int64_t>(N) * C);
    mean.resize({C});
    stdev.resize({C});
    for (int c = 0; c < C; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int n = 0; n < N; ++n) {
            const float* p = images.data() + (static_cast<int64_t>(n) * C + c) * S;
            for (int64_t i = 0; i < S; ++i) {
                sum += p[i];
                sq += static_cast<double>(p[i]) * p[i];
            }
        }
        const double cnt = static_cast<double>(N) * S;
        const double m = sum / cnt;
        const double var = std::max(sq / cnt - m * m, 0.0);
        mean[c] = static_cast<float>(m);
        stdev[c] = static_cast<float>(std::max(std::sqrt(var), 1e-3));
    }
}

void init_params_by_name(nn::ParamRefs<float>& params, uint64_t seed) {
    Rng rng(seed);
    for (auto* p : params) {
        auto stream = rng.stream(p->name);
        const auto& shape = p->value.shape();
        const bool is_gamma = p->name.find(".gamma") != std::string::npos;
        const bool is_bias = p->name.find(".bias") != std::string::npos || p->name.find(".beta") != std::string::npos;
        if (is_gamma) {
            p->value.fill(1.0f);
        } else if (is_bias) {
            p->value.zero();
        } else {
            int64_t fan_in = 1;
            for (size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
            stream.fill_normal(p->value.data(), p->value.numel(), 0.0f,
                               std::sqrt(2.0f / static_cast<float>(fan_in)));
        }
        p->zero_grad();
    }
}

// Mean negative log-likelihood; writes d(loss)/d(logits) for the batch.
float softmax_cross_entropy(const Tensorf& logits, const std::vector<int>& labels, Tensorf& dlogits) {
    const int N = logits.dim(0), K = logits.dim(1);
    dlogits.resize(logits.shape());
    kernels::softmax_rows(logits.data(), N, K, dlogits.data());
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const float p = dlogits[static_cast<int64_t>(n) * K + labels[static_cast<size_t>(n)]];
        loss -= std::log(std::max(p, 1e-12f));
    }
    const float inv = 1.0f / static_cast<float>(N);
    for (int n = 0; n < N; ++n) {
        dlogits[static_cast<int64_t>(n) * K + labels[static_cast<size_t>(n)]] -= 1.0f;
    }
    for (int64_t i = 0; i < dlogits.numel(); ++i) dlogits[i] *= inv;
    return static_cast<float>(loss / N);
}

void gather_batch(const Tensorf& images, const std::vector<int>& labels, const std::vector<int>& order, int begin,
                  int count, Tensorf& xb, std::vector<int>& yb) {
    const int C = images.dim(1), H = images.dim(2), W = images.dim(3);
    const int64_t per = static_cast<int64_t>(C) * H * W;
    xb.resize({count, C, H, W});
    yb.resize(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int src = order[static_cast<size_t>(begin + i)];
        std::copy(images.data() + src * per, images.data() + (src + 1) * per, xb.data() + i * per);
        yb[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
    }
}

std::vector<int> argmax_rows(const Tensorf& logits) {
    const int N = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n) {
        const float* row = logits.data() + static_cast<int64_t>(n) * K;
        out[static_cast<size_t>(n)] = static_cast<int>(std::max_element(row, row + K) - row);
    }
    return out;
}

constexpr int kInferChunk = 128;

// Runs net.forward over row chunks in eval mode and concatenates the logits.
template <class Net>
Tensorf batched_logits(Net& net, const Tensorf& images) {
    const int N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
    Tensorf all({N, net.K});
    Tensorf chunk, out;
    const int64_t per = static_cast<int64_t>(C) * H * W;
    for (int at = 0; at < N; at += kInferChunk) {
        const int n = std::min(kInferChunk, N - at);
        chunk.resize({n, C, H, W});
        std::copy(images.data() + at * per, images.data() + (at + n) * per, chunk.data());
        net.forward(chunk, out, /*train=*/false);
        std::copy(out.data(), out.data() + static_cast<int64_t>(n) * net.K,
                  all.data() + static_cast<int64_t>(at) * net.K);
    }
    return all;
}

// Shared optimization loop; Net must provide forward(x, logits, train),
// backward(dlogits), and a filled `params` list.
template <class Net>
double fit_classifier(Net& net, const LabeledDataset& train_set, const LabeledDataset& test_set,
                      const ClassifierTrainConfig& cfg, const char* tag) {
    cfg.validate();
    train_set.validate();
    test_set.validate();
    if (train_set.num_classes() < 2) throw std::invalid_argument(std::string(tag) + ": need at least 2 classes");
    if (train_set.class_names != test_set.class_names)
        throw std::invalid_argument(std::string(tag) + ": train/test class lists differ");
    if (train_set.size() < cfg.batch_size)
        throw std::invalid_argument(std::string(tag) + ": training set smaller than one batch");
    if (test_set.size() < 1) throw std::invalid_argument(std::string(tag) + ": empty test set");

    channel_stats(train_set.images, net.norm_mean, net.norm_std);
    init_params_by_name(net.params, cfg.seed);

    nn::AdamW<float> opt(static_cast<float>(cfg.lr), 0.9f, 0.999f, 1e-8f, static_cast<float>(cfg.weight_decay));
    Rng rng(cfg.seed);
    auto order_rng = rng.stream("batch-order");

    std::vector<int> order(static_cast<size_t>(train_set.size()));
    std::iota(order.begin(), order.end(), 0);
    Tensorf xb, logits, dlogits;
    std::vector<int> yb;
    const int B = cfg.batch_size;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (int at = 0; at + B <= train_set.size(); at += B) {
            gather_batch(train_set.images, train_set.labels, order, at, B, xb, yb);
            net.forward(xb, logits, /*train=*/true);
            softmax_cross_entropy(logits, yb, dlogits);
            nn::zero_grads(net.params);
            net.backward(dlogits);
            opt.step(net.params);
        }
        if (cfg.on_epoch) cfg.on_epoch(epoch + 1, net.state_refs());
    }

    const Tensorf test_logits = batched_logits(net, test_set.images);
    const double acc = classification_accuracy(argmax_rows(test_logits), test_set.labels);
    const double chance = 1.0 / train_set.num_classes();
    if (acc <= 1.5 * chance)
        throw std::runtime_error(std::string(tag) + ": test accuracy " + std::to_string(acc) +
                                 " failed to beat 1.5x chance (" + std::to_string(1.5 * chance) +
                                 "); model unusable");
    return acc;
}

}  // namespace

double classification_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size() || truth.empty())
        throw std::invalid_argument("accuracy: size mismatch or empty");
    int hit = 0;
    for (size_t i = 0; i < truth.size(); ++i) hit += (predicted[i] == truth[i]) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// ------------------------------------------------------------------ TargetModel

struct TargetModel::Impl {
    int image_size = 0, channels = 0, K = 0;
    std::vector<std::string> class_names;

    nn::Conv2d<float> c1, c2, c3, c4;
    nn::BatchNorm2d<float> bn1, bn2, bn3, bn4;
    nn::MaxPool2x2<float> p1, p2, p3, p4;
    nn::Activation<float> r1{nn::Act::Relu}, r2{nn::Act::Relu}, r3{nn::Act::Relu}, r4{nn::Act::Relu},
        rf{nn::Act::Relu};
    nn::Linear<float> fc1, fc2;

    nn::ParamRefs<float> params;
    Tensorf norm_mean, norm_std;
    Tensorf test_acc{std::vector<int>{1}};

    Tensorf xn, a, b;      // forward scratch
    Tensorf g1, g2;        // backward scratch
    int flat_dim = 0;

    Impl(int s, int c, std::vector<std::string> names)
        : image_size(s), channels(c), K(static_cast<int>(names.size())), class_names(std::move(names)) {
        if (s < 16 || s % 16 != 0)
            throw std::invalid_argument("target model: image size must be a positive multiple of 16");
        if (K < 2) throw std::invalid_argument("target model: need at least 2 classes");
        c1 = nn::Conv2d<float>(channels, 16, 3, 1, 1);
        c2 = nn::Conv2d<float>(16, 32, 3, 1, 1);
        c3 = nn::Conv2d<float>(32, 64, 3, 1, 1);
        c4 = nn::Conv2d<float>(64, 128, 3, 1, 1);
        bn1 = nn::BatchNorm2d<float>(16);
        bn2 = nn::BatchNorm2d<float>(32);
        bn3 = nn::BatchNorm2d<float>(64);
        bn4 = nn::BatchNorm2d<float>(128);
        const int side = s / 16;
        flat_dim = 128 * side * side;
        fc1 = nn::Linear<float>(flat_dim, 128);
        fc2 = nn::Linear<float>(128, K);
        c1.collect("c1", params);
        bn1.collect("bn1", params);
        c2.collect("c2", params);
        bn2.collect("bn2", params);
        c3.collect("c3", params);
        bn3.collect("bn3", params);
        c4.collect("c4", params);
        bn4.collect("bn4", params);
        fc1.collect("fc1", params);
        fc2.collect("fc2", params);
        norm_mean = Tensorf::zeros({channels});
        norm_std = Tensorf::full({channels}, 1.0f);
        test_acc.zero();
    }

    void forward(const Tensorf& x01, Tensorf& logits, bool train) {
        normalize_images(x01, norm_mean, norm_std, xn);
        c1.forward(xn, a);
        bn1.forward(a, b, train);
        p1.forward(b, a);
        r1.forward(a, b);
        c2.forward(b, a);
        bn2.forward(a, b, train);
        p2.forward(b, a);
        r2.forward(a, b);
        c3.forward(b, a);
        bn3.forward(a, b, train);
        p3.forward(b, a);
        r3.forward(a, b);
        c4.forward(b, a);
        bn4.forward(a, b, train);
        p4.forward(b, a);
        r4.forward(a, b);
        b.reshape_view({x01.dim(0), flat_dim});
        fc1.forward(b, a);
        rf.forward(a, b);
        fc2.forward(b, logits);
    }

    void backward(const Tensorf& dlogits) {
        const int N = dlogits.dim(0);
        const int side = image_size / 16;
        fc2.backward(dlogits, g1);
        rf.backward(g1, g2);
        fc1.backward(g2, g1);
        g1.reshape_view({N, 128, side, side});
        r4.backward(g1, g2);
        p4.backward(g2, g1);
        bn4.backward(g1, g2);
        c4.backward(g2, g1);
        r3.backward(g1, g2);
        p3.backward(g2, g1);
        bn3.backward(g1, g2);
        c3.backward(g2, g1);
        r2.backward(g1, g2);
        p2.backward(g2, g1);
        bn2.backward(g1, g2);
        c2.backward(g2, g1);
        r1.backward(g1, g2);
        p1.backward(g2, g1);
        bn1.backward(g1, g2);
        c1.backward(g2, g1);
    }

    StateRefs state_refs() {
        StateRefs s;
        for (auto* p : params) s.emplace_back(p->name, &p->value);
        s.emplace_back("bn1.running_mean", &bn1.running_mean_);
        s.emplace_back("bn1.running_var", &bn1.running_var_);
        s.emplace_back("bn2.running_mean", &bn2.running_mean_);
        s.emplace_back("bn2.running_var", &bn2.running_var_);
        s.emplace_back("bn3.running_mean", &bn3.running_mean_);
        s.emplace_back("bn3.running_var", &bn3.running_var_);
        s.emplace_back("bn4.running_mean", &bn4.running_mean_);
        s.emplace_back("bn4.running_var", &bn4.running_var_);
        s.emplace_back("norm.mean", &norm_mean);
        s.emplace_back("norm.std", &norm_std);
        s.emplace_back("meta.test_accuracy", &test_acc);
        return s;
    }
};

TargetModel::TargetModel(int image_size, int channels, std::vector<std::string> class_names)
    : impl_(std::make_unique<Impl>(image_size, channels, std::move(class_names))) {}
TargetModel::~TargetModel() = default;
TargetModel::TargetModel(TargetModel&&) noexcept = default;
TargetModel& TargetModel::operator=(TargetModel&&) noexcept = default;

TargetModel TargetModel::train(const LabeledDataset& train_set, const LabeledDataset& test_set,
                               const ClassifierTrainConfig& cfg) {
    TargetModel m(train_set.images.dim(2), train_set.images.dim(1), train_set.class_names);
    const double acc = fit_classifier(*m.impl_, train_set, test_set, cfg, "target model");
    m.impl_->test_acc[0] = static_cast<float>(acc);
    return m;
}

int TargetModel::num_classes() const { return impl_->K; }

std::vector<int> TargetModel::predict_label(const Tensorf& images) const {
    validate_input_images(images, impl_->channels, impl_->image_size, "target predict_label");
    return argmax_rows(batched_logits(*impl_, images));
}

double TargetModel::test_accuracy() const { return impl_->test_acc[0]; }
const std::vector<std::string>& TargetModel::class_names() const { return impl_->class_names; }
int TargetModel::image_size() const { return impl_->image_size; }
int TargetModel::channels() const { return impl_->channels; }

std::string TargetModel::arch_id() const {
    return "plain-cnn4(16,32,64,128)+fc" + std::to_string(impl_->flat_dim) + "-128-" + std::to_string(impl_->K);
}

StateRefs TargetModel::state() { return impl_->state_refs(); }

// -------------------------------------------------------------------- EvalModel

namespace {

// conv-bn-relu-conv-bn plus identity (or strided 1x1 projection), then relu.
struct ResBlock {
    nn::Conv2d<float> conv1, conv2, proj;
    nn::BatchNorm2d<float> bn1, bn2, bnp;
    nn::Activation<float> relu1{nn::Act::Relu}, relu_out{nn::Act::Relu};
    bool has_proj = false;

    Tensorf t1, t2, t3, t4, t5, skip, sum;
    Tensorf d1, d2, d3, d4, d5, dskip, dmain;

    void init(int cin, int cout, int stride) {
        conv1 = nn::Conv2d<float>(cin, cout, 3, stride, 1);
        conv2 = nn::Conv2d<float>(cout, cout, 3, 1, 1);
        bn1 = nn::BatchNorm2d<float>(cout);
        bn2 = nn::BatchNorm2d<float>(cout);
        has_proj = (stride != 1 || cin != cout);
        if (has_proj) {
            proj = nn::Conv2d<float>(cin, cout, 1, stride, 0, /*bias=*/false);
            bnp = nn::BatchNorm2d<float>(cout);
        }
    }

    void collect(const std::string& prefix, nn::ParamRefs<float>& out) {
        conv1.collect(prefix + ".conv1", out);
        bn1.collect(prefix + ".bn1", out);
        conv2.collect(prefix + ".conv2", out);
        bn2.collect(prefix + ".bn2", out);
        if (has_proj) {
            proj.collect(prefix + ".proj", out);
            bnp.collect(prefix + ".bnp", out);
        }
    }

    void running_stats(const std::string& prefix, StateRefs& out) {
        out.emplace_back(prefix + ".bn1.running_mean", &bn1.running_mean_);
        out.emplace_back(prefix + ".bn1.running_var", &bn1.running_var_);
        out.emplace_back(prefix + ".bn2.running_mean", &bn2.running_mean_);
        out.emplace_back(prefix + ".bn2.running_var", &bn2.running_var_);
        if (has_proj) {
            out.emplace_back(prefix + ".bnp.running_mean", &bnp.running_mean_);
            out.emplace_back(prefix + ".bnp.running_var", &bnp.running_var_);
        }
    }

    void forward(const Tensorf& x, Tensorf& y, bool train) {
        conv1.forward(x, t1);
        bn1.forward(t1, t2, train);
        relu1.forward(t2, t3);
        conv2.forward(t3, t4);
        bn2.forward(t4, t5, train);
        if (has_proj) {
            proj.forward(x, t1);
            bnp.forward(t1, skip, train);
        } else {
            skip = x;
        }
        sum.resize(t5.shape());
        for (int64_t i = 0; i < t5.numel(); ++i) sum[i] = t5[i] + skip[i];
        relu_out.forward(sum, y);
    }

    void backward(const Tensorf& dy, Tensorf& dx) {
        relu_out.backward(dy, d5);
        bn2.backward(d5, d4);
        conv2.backward(d4, d3);
        relu1.backward(d3, d2);
        bn1.backward(d2, d1);
        conv1.backward(d1, dmain);
        if (has_proj) {
            bnp.backward(d5, d1);
            proj.backward(d1, dskip);
        } else {
            dskip = d5;
        }
        dx.resize(dmain.shape());
        for (int64_t i = 0; i < dmain.numel(); ++i) dx[i] = dmain[i] + dskip[i];
    }
};

}  // namespace

struct EvalModel::Impl {
    int image_size = 0, channels = 0, K = 0;
    std::vector<std::string> class_names;

    nn::Conv2d<float> stem;
    nn::BatchNorm2d<float> bn0;
    nn::Activation<float> r0{nn::Act::Relu};
    ResBlock blk[6];
    nn::Linear<float> fc;

    nn::ParamRefs<float> params;
    Tensorf norm_mean, norm_std;
    Tensorf test_acc{std::vector<int>{1}};

    Tensorf xn, a, b, feat, dfeat, g1, g2;
    Tensorf stage_out[3];

    Impl(int s, int c, std::vector<std::string> names)
        : image_size(s), channels(c), K(static_cast<int>(names.size())), class_names(std::move(names)) {
        if (s < 4 || s % 4 != 0)
            throw std::invalid_argument("eval model: image size must be a positive multiple of 4");
        if (K < 2) throw std::invalid_argument("eval model: need at least 2 classes");
        stem = nn::Conv2d<float>(channels, 16, 3, 1, 1);
        bn0 = nn::BatchNorm2d<float>(16);
        blk[0].init(16, 16, 1);
        blk[1].init(16, 16, 1);
        blk[2].init(16, 32, 2);
        blk[3].init(32, 32, 1);
        blk[4].init(32, 64, 2);
        blk[5].init(64, 64, 1);
        fc = nn::Linear<float>(64, K);
        stem.collect("stem", params);
        bn0.collect("bn0", params);
        for (int i = 0; i < 6; ++i) blk[i].collect("blk" + std::to_string(i), params);
        fc.collect("fc", params);
        norm_mean = Tensorf::zeros({channels});
        norm_std = Tensorf::full({channels}, 1.0f);
        test_acc.zero();
    }

    // stack, if non-null, receives the three stage outputs (16@s, 32@s/2, 64@s/4).
    void forward(const Tensorf& x01, Tensorf& logits, bool train, std::vector<Tensorf>* stack = nullptr) {
        normalize_images(x01, norm_mean, norm_std, xn);
        stem.forward(xn, a);
        bn0.forward(a, b, train);
        r0.forward(b, a);
        blk[0].forward(a, b, train);
        blk[1].forward(b, stage_out[0], train);
        blk[2].forward(stage_out[0], a, train);
        blk[3].forward(a, stage_out[1], train);
        blk[4].forward(stage_out[1], a, train);
        blk[5].forward(a, stage_out[2], train);
        global_average_pool(stage_out[2], feat);
        fc.forward(feat, logits);
        if (stack) *stack = {stage_out[0], stage_out[1], stage_out[2]};
    }

    void backward(const Tensorf& dlogits) {
        fc.backward(dlogits, dfeat);
        unpool_gradient(dfeat, stage_out[2].shape(), g1);
        blk[5].backward(g1, g2);
        blk[4].backward(g2, g1);
        blk[3].backward(g1, g2);
        blk[2].backward(g2, g1);
        blk[1].backward(g1, g2);
        blk[0].backward(g2, g1);
        r0.backward(g1, g2);
        bn0.backward(g2, g1);
        stem.backward(g1, g2);
    }

    static void global_average_pool(const Tensorf& x, Tensorf& y) {
        const int N = x.dim(0), C = x.dim(1);
        const int64_t S = x.numel() / (static_cast<int64_t>(N) * C);
        y.resize({N, C});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const float* p = x.data() + (static_cast<int64_t>(n) * C + c) * S;
                double sum = 0.0;
                for (int64_t i = 0; i < S; ++i) sum += p[i];
                y[static_cast<int64_t>(n) * C + c] = static_cast<float>(sum / static_cast<double>(S));
            }
    }

    static void unpool_gradient(const Tensorf& dy, const std::vector<int>& shape, Tensorf& dx) {
        const int N = shape[0], C = shape[1];
        const int64_t S = static_cast<int64_t>(shape[2]) * shape[3];
        dx.resize(shape);
        const float inv = 1.0f / static_cast<float>(S);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const float g = dy[static_cast<int64_t>(n) * C + c] * inv;
                float* p = dx.data() + (static_cast<int64_t>(n) * C + c) * S;
                for (int64_t i = 0; i < S; ++i) p[i] = g;
            }
    }

    StateRefs state_refs() {
        StateRefs s;
        for (auto* p : params) s.emplace_back(p->name, &p->value);
        s.emplace_back("bn0.running_mean", &bn0.running_mean_);
        s.emplace_back("bn0.running_var", &bn0.running_var_);
        for (int i = 0; i < 6; ++i) blk[i].running_stats("blk" + std::to_string(i), s);
        s.emplace_back("norm.mean", &norm_mean);
        s.emplace_back("norm.std", &norm_std);
        s.emplace_back("meta.test_accuracy", &test_acc);
        return s;
    }
};

EvalModel::EvalModel(int image_size, int channels, std::vector<std::string> class_names)
    : impl_(std::make_unique<Impl>(image_size, channels, std::move(class_names))) {}
EvalModel::~EvalModel() = default;
EvalModel::EvalModel(EvalModel&&) noexcept = default;
EvalModel& EvalModel::operator=(EvalModel&&) noexcept = default;

EvalModel EvalModel::train(const LabeledDataset& train_set, const LabeledDataset& test_set,
                           const ClassifierTrainConfig& cfg) {
    EvalModel m(train_set.images.dim(2), train_set.images.dim(1), train_set.class_names);
    const double acc = fit_classifier(*m.impl_, train_set, test_set, cfg, "eval model");
    m.impl_->test_acc[0] = static_cast<float>(acc);
    return m;
}

int EvalModel::num_classes() const { return impl_->K; }

Tensorf EvalModel::logits(const Tensorf& images) const {
    validate_input_images(images, impl_->channels, impl_->image_size, "eval logits");
    return batched_logits(*impl_, images);
}

std::vector<std::vector<int>> EvalModel::predict_topn(const Tensorf& images, int n) const {
    if (n < 1 || n > impl_->K) throw std::invalid_argument("eval predict_topn: n out of range");
    const Tensorf lg = logits(images);
    const int N = lg.dim(0), K = lg.dim(1);
    std::vector<std::vector<int>> out(static_cast<size_t>(N));
    std::vector<int> idx(static_cast<size_t>(K));
    for (int r = 0; r < N; ++r) {
        const float* row = lg.data() + static_cast<int64_t>(r) * K;
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) { return row[i] > row[j]; });
        out[static_cast<size_t>(r)].assign(idx.begin(), idx.begin() + n);
    }
    return out;
}

Tensorf EvalModel::penultimate_features(const Tensorf& images) const {
    validate_input_images(images, impl_->channels, impl_->image_size, "eval features");
    const int N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
    Tensorf all({N, 64});
    Tensorf chunk, logits_unused;
    const int64_t per = static_cast<int64_t>(C) * H * W;
    for (int at = 0; at < N; at += kInferChunk) {
        const int n = std::min(kInferChunk, N - at);
        chunk.resize({n, C, H, W});
        std::copy(images.data() + at * per, images.data() + (at + n) * per, chunk.data());
        impl_->forward(chunk, logits_unused, /*train=*/false);
        std::copy(impl_->feat.data(), impl_->feat.data() + static_cast<int64_t>(n) * 64,
                  all.data() + static_cast<int64_t>(at) * 64);
    }
    return all;
}

int EvalModel::feature_dim() const { return 64; }

std::vector<Tensorf> EvalModel::feature_stack(const Tensorf& images) const {
    validate_input_images(images, impl_->channels, impl_->image_size, "eval feature_stack");
    const int N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
    const int chs[3] = {16, 32, 64};
    std::vector<Tensorf> all(3);
    for (int l = 0; l < 3; ++l) all[static_cast<size_t>(l)].resize({N, chs[l], H >> l, W >> l});
    Tensorf chunk, logits_unused;
    std::vector<Tensorf> stack;
    const int64_t per = static_cast<int64_t>(C) * H * W;
    for (int at = 0; at < N; at += kInferChunk) {
        const int n = std::min(kInferChunk, N - at);
        chunk.resize({n, C, H, W});
        std::copy(images.data() + at * per, images.data() + (at + n) * per, chunk.data());
        impl_->forward(chunk, logits_unused, /*train=*/false, &stack);
        for (int l = 0; l < 3; ++l) {
            Tensorf& dst = all[static_cast<size_t>(l)];
            const int64_t lper = dst.numel() / dst.dim(0);
            std::copy(stack[static_cast<size_t>(l)].data(), stack[static_cast<size_t>(l)].data() + n * lper,
                      dst.data() + static_cast<int64_t>(at) * lper);
        }
    }
    return all;
}

double EvalModel::test_accuracy() const { return impl_->test_acc[0]; }
const std::vector<std::string>& EvalModel::class_names() const { return impl_->class_names; }
int EvalModel::image_size() const { return impl_->image_size; }
int EvalModel::channels() const { return impl_->channels; }

std::string EvalModel::arch_id() const {
    return "resnet-stem16+2x16+2x32+2x64+gap+fc64-" + std::to_string(impl_->K);
}

StateRefs EvalModel::state() { return impl_->state_refs(); }

}  // namespace dmi
