#include "dmi/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dmi::attack {
namespace {

void check_unit_range(const Tensorf& x, const char* who) {
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float v = x[i];
        if (!std::isfinite(v) || v < -1e-5f || v > 1.0f + 1e-5f)
            throw std::invalid_argument(std::string(who) + ": pixel values must lie in [0, 1]");
    }
}

int crop_side(int side, double crop_fraction) {
    const int c = static_cast<int>(std::llround(crop_fraction * side));
    return std::clamp(c, 1, side);
}

// Bilinear resize of the crop window [oy, oy+crop) x [ox, ox+crop) back to
// (side, side). Sampling positions use half-pixel centers, so crop == side
// with zero offset reproduces the input exactly.
void crop_resize(const Tensorf& img, int oy, int ox, int crop, Tensorf& out) {
    const int C = img.dim(0), S = img.dim(1);
    out.resize(img.shape());
    const double scale = static_cast<double>(crop) / S;
    for (int i = 0; i < S; ++i) {
        double sy = (i + 0.5) * scale - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(crop - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, crop - 1);
        const float fy = static_cast<float>(sy - y0);
        for (int j = 0; j < S; ++j) {
            double sx = (j + 0.5) * scale - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(crop - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, crop - 1);
            const float fx = static_cast<float>(sx - x0);
            for (int c = 0; c < C; ++c) {
                const float* p = img.data() + (static_cast<int64_t>(c) * S + oy) * S + ox;
                const float a = p[static_cast<int64_t>(y0) * S + x0];
                const float b = p[static_cast<int64_t>(y0) * S + x1];
                const float d = p[static_cast<int64_t>(y1) * S + x0];
                const float e = p[static_cast<int64_t>(y1) * S + x1];
                const float top = a + fx * (b - a);
                const float bot = d + fx * (e - d);
                out.data()[(static_cast<int64_t>(c) * S + i) * S + j] = top + fy * (bot - top);
            }
        }
    }
}

void flip_h(Tensorf& img) {
    const int C = img.dim(0), S = img.dim(1);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < S; ++y) {
            float* row = img.data() + (static_cast<int64_t>(c) * S + y) * S;
            std::reverse(row, row + S);
        }
}

void flip_v(Tensorf& img) {
    const int C = img.dim(0), S = img.dim(1);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < S / 2; ++y) {
            float* a = img.data() + (static_cast<int64_t>(c) * S + y) * S;
            float* b = img.data() + (static_cast<int64_t>(c) * S + (S - 1 - y)) * S;
            std::swap_ranges(a, a + S, b);
        }
}

Tensorf slice_image(const Tensorf& batch, int i) {
    const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    Tensorf img({C, H, W});
    const int64_t per = img.numel();
    std::copy(batch.data() + i * per, batch.data() + (i + 1) * per, img.data());
    return img;
}

}  // namespace

std::vector<int> label_auxiliary(const LabelOracle& oracle, const Tensorf& images) {
    if (images.rank() != 4 || images.dim(0) < 1)
        throw std::invalid_argument("label_auxiliary: expected a non-empty (N, C, H, W) batch");
    return oracle.predict_label(images);
}

Tensorf gamma_correct(const Tensorf& images, double gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma_correct: gamma must be positive and finite");
    check_unit_range(images, "gamma_correct");
    Tensorf out(images.shape());
    const float g = static_cast<float>(gamma);
    for (int64_t i = 0; i < images.numel(); ++i) {
        const float v = std::clamp(images[i], 0.0f, 1.0f);
        out[i] = std::pow(v, g);
    }
    return out;
}

Tensorf random_transform(const Tensorf& img, const TransformSpec& spec, Rng& rng) {
    spec.validate();
    if (img.rank() != 3 || img.dim(1) != img.dim(2))
        throw std::invalid_argument("random_transform: expected a square (C, H, W) image");
    const int S = img.dim(1);
    const int crop = crop_side(S, spec.crop_fraction);
    const int oy = rng.uniform_int(S - crop + 1);
    const int ox = rng.uniform_int(S - crop + 1);
    const bool h = rng.bernoulli(spec.p_hflip);
    const bool v = rng.bernoulli(spec.p_vflip);
    Tensorf out;
    crop_resize(img, oy, ox, crop, out);
    if (h) flip_h(out);
    if (v) flip_v(out);
    return out;
}

double representative_weight(const LabelOracle& oracle, const Tensorf& img, int label, int queries,
                             const TransformSpec& spec, Rng& rng) {
    if (queries < 1) throw std::invalid_argument("representative_weight: queries must be >= 1");
    if (label < 0 || label >= oracle.num_classes())
        throw std::invalid_argument("representative_weight: label out of range");
    int hits = 0;
    Tensorf batch({1, img.dim(0), img.dim(1), img.dim(2)});
    for (int m = 0; m < queries; ++m) {
        const Tensorf view = random_transform(img, spec, rng);
        std::copy(view.data(), view.data() + view.numel(), batch.data());
        if (oracle.predict_label(batch)[0] == label) ++hits;
    }
    return static_cast<double>(hits) / queries;
}

std::vector<double> representative_weights(const LabelOracle& oracle, const Tensorf& candidates, int label,
                                           int queries, const TransformSpec& spec, uint64_t seed) {
    if (candidates.rank() != 4 || candidates.dim(0) < 1)
        throw std::invalid_argument("representative_weights: expected a non-empty (N, C, H, W) batch");
    if (queries < 1) throw std::invalid_argument("representative_weights: queries must be >= 1");
    if (label < 0 || label >= oracle.num_classes())
        throw std::invalid_argument("representative_weights: label out of range");
    const int N = candidates.dim(0);
    const Rng base(seed);
    std::vector<Rng> streams;
    streams.reserve(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) streams.push_back(base.stream("cand/" + std::to_string(i)));

    std::vector<int> hits(static_cast<size_t>(N), 0);
    Tensorf views(candidates.shape());
    const int64_t per = views.numel() / N;
    for (int m = 0; m < queries; ++m) {
        for (int i = 0; i < N; ++i) {
            const Tensorf img = slice_image(candidates, i);
            const Tensorf view = random_transform(img, spec, streams[static_cast<size_t>(i)]);
            std::copy(view.data(), view.data() + per, views.data() + i * per);
        }
        const std::vector<int> pred = oracle.predict_label(views);
        for (int i = 0; i < N; ++i)
            if (pred[static_cast<size_t>(i)] == label) ++hits[static_cast<size_t>(i)];
    }
    std::vector<double> w(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) w[static_cast<size_t>(i)] = static_cast<double>(hits[static_cast<size_t>(i)]) / queries;
    return w;
}

std::vector<int> select_top_k(const std::vector<double>& weights, int k) {
    if (k < 1 || k > static_cast<int>(weights.size()))
        throw std::invalid_argument("select_top_k: k must be in [1, weights.size()]");
    std::vector<int> idx(weights.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return weights[static_cast<size_t>(a)] > weights[static_cast<size_t>(b)];
    });
    idx.resize(static_cast<size_t>(k));
    return idx;
}

RecoveredLabel recover_label(const LabelOracle& oracle, const Tensorf& raw_samples, int label,
                             const RecoverConfig& cfg) {
    cfg.validate();
    if (raw_samples.rank() != 4)
        throw std::invalid_argument("recover_label: expected (N, C, H, W) sampler output");
    if (raw_samples.dim(0) != cfg.candidates_per_label)
        throw std::invalid_argument("recover_label: sample count does not match candidates_per_label");
    if (label < 0 || label >= oracle.num_classes())
        throw std::invalid_argument("recover_label: label out of range");

    // Sampler emits [-1, 1]; the oracle and gamma correction live in [0, 1].
    Tensorf unit(raw_samples.shape());
    for (int64_t i = 0; i < raw_samples.numel(); ++i)
        unit[i] = std::clamp(0.5f * (raw_samples[i] + 1.0f), 0.0f, 1.0f);
    const Tensorf corrected = gamma_correct(unit, cfg.gamma);

    RecoveredLabel out;
    out.label = label;
    const uint64_t wseed = Rng(cfg.seed).stream("weights/label/" + std::to_string(label)).next();
    out.all_weights =
        representative_weights(oracle, corrected, label, cfg.weight_queries, cfg.transform, wseed);
    out.selected = select_top_k(out.all_weights, cfg.top_k);
    out.all_zero = std::all_of(out.all_weights.begin(), out.all_weights.end(), [](double w) { return w == 0.0; });

    const int C = corrected.dim(1), H = corrected.dim(2), W = corrected.dim(3);
    const int64_t per = static_cast<int64_t>(C) * H * W;
    out.images.resize({cfg.top_k, C, H, W});
    out.weights.resize(static_cast<size_t>(cfg.top_k));
    for (int r = 0; r < cfg.top_k; ++r) {
        const int src = out.selected[static_cast<size_t>(r)];
        std::copy(corrected.data() + src * per, corrected.data() + (src + 1) * per, out.images.data() + r * per);
        out.weights[static_cast<size_t>(r)] = out.all_weights[static_cast<size_t>(src)];
    }
    return out;
}

}  // namespace dmi::attack
