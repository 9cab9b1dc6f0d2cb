#include "dmi/harness/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <stdexcept>

#include "dmi/core/rng.hpp"
#include "dmi/io.hpp"

namespace dmi::harness {
namespace {

namespace fs = std::filesystem;

struct GlyphClass {
    const char* shape;    // bar | disc | cross | ring | square
    const char* palette;  // warm | cool
};

// Confusable pairs: consecutive classes share a shape and differ in palette.
constexpr GlyphClass kGlyphClasses[10] = {
    {"bar", "warm"},   {"bar", "cool"},   {"disc", "warm"}, {"disc", "cool"},   {"cross", "warm"},
    {"cross", "cool"}, {"ring", "warm"},  {"ring", "cool"}, {"square", "warm"}, {"square", "cool"},
};

void palette_rgb(const char* name, double hue_shift, float rgb[3]) {
    const float warm[3] = {1.00f, 0.62f, 0.18f};
    const float cool[3] = {0.25f, 0.55f, 1.00f};
    const bool is_warm = std::string(name) == "warm";
    const float* a = is_warm ? warm : cool;
    const float* b = is_warm ? cool : warm;
    for (int c = 0; c < 3; ++c)
        rgb[c] = static_cast<float>((1.0 - hue_shift) * a[c] + hue_shift * b[c]);
}

// Signed distance to the glyph boundary, in pixels; negative = inside.
double glyph_distance(const char* shape, double x, double y, double r, double t) {
    const double ax = std::abs(x), ay = std::abs(y);
    const std::string s(shape);
    if (s == "bar") return std::max(ax - t, ay - r);
    if (s == "disc") return std::sqrt(x * x + y * y) - 0.8 * r;
    if (s == "cross") {
        const double v = std::max(ax - t, ay - r);
        const double h = std::max(ay - t, ax - r);
        return std::min(v, h);
    }
    if (s == "ring") return std::abs(std::sqrt(x * x + y * y) - 0.8 * r) - 0.6 * t;
    // hollow square
    return std::abs(std::max(ax, ay) - 0.75 * r) - 0.6 * t;
}

}  // namespace

LabeledDataset make_glyph_corpus(const GlyphCorpusSpec& spec) {
    if (spec.num_classes < 2 || spec.num_classes > 10)
        throw std::invalid_argument("glyph corpus: num_classes must be in [2, 10]");
    if (spec.per_class < 1) throw std::invalid_argument("glyph corpus: per_class must be >= 1");
    if (spec.image_size < 8) throw std::invalid_argument("glyph corpus: image_size must be >= 8");
    if (spec.channels != 1 && spec.channels != 3)
        throw std::invalid_argument("glyph corpus: channels must be 1 or 3");
    if (!(spec.hue_shift >= 0.0 && spec.hue_shift <= 1.0))
        throw std::invalid_argument("glyph corpus: hue_shift must be in [0, 1]");
    if (!(spec.hue_jitter >= 0.0 && spec.hue_jitter <= 1.0))
        throw std::invalid_argument("glyph corpus: hue_jitter must be in [0, 1]");

    const int K = spec.num_classes, S = spec.image_size, C = spec.channels;
    LabeledDataset ds;
    for (int k = 0; k < K; ++k) {
        std::string name = std::string(kGlyphClasses[k].shape) + "_" + kGlyphClasses[k].palette;
        if (!spec.name_suffix.empty()) name += "_" + spec.name_suffix;
        ds.class_names.push_back(name);
    }
    ds.images.resize({K * spec.per_class, C, S, S});
    ds.labels.resize(static_cast<size_t>(K) * spec.per_class);

    const Rng base(spec.seed);
    for (int k = 0; k < K; ++k) {
        float rgb[3], rgb_other[3];
        palette_rgb(kGlyphClasses[k].palette, spec.hue_shift, rgb);
        const char* other = std::string(kGlyphClasses[k].palette) == "warm" ? "cool" : "warm";
        palette_rgb(other, spec.hue_shift, rgb_other);
        for (int i = 0; i < spec.per_class; ++i) {
            const int row = k * spec.per_class + i;
            ds.labels[static_cast<size_t>(row)] = k;
            Rng rng = base.stream("glyph/" + std::to_string(k) + "/" + std::to_string(i));
            // Separate stream so hue_jitter = 0 reproduces the un-jittered corpus bitwise.
            Rng hue_rng = base.stream("glyph-hue/" + std::to_string(k) + "/" + std::to_string(i));
            const double u = spec.hue_jitter * hue_rng.uniform();
            float prgb[3];
            for (int c = 0; c < 3; ++c)
                prgb[c] = static_cast<float>((1.0 - u) * rgb[c] + u * rgb_other[c]);

            // per-image draws, fixed order
            const double cx = 0.5 * S + (rng.uniform() - 0.5) * 0.18 * S;
            const double cy = 0.5 * S + (rng.uniform() - 0.5) * 0.18 * S;
            const double r = 0.30 * S * (1.0 + (rng.uniform() - 0.5) * 0.30 + spec.scale_shift);
            const double t = 0.10 * S * (1.0 + (rng.uniform() - 0.5) * 0.60);
            const double amp = 0.62 + 0.28 * rng.uniform();
            const double bg = 0.06 + 0.07 * rng.uniform();
            const double grad = (rng.uniform() - 0.5) * 0.06;
            float chan_jit[3];
            for (float& cj : chan_jit) cj = static_cast<float>(1.0 + (rng.uniform() - 0.5) * 0.10);

            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const double d = glyph_distance(kGlyphClasses[k].shape, x + 0.5 - cx, y + 0.5 - cy, r, t);
                    const double mask = std::clamp(0.5 - d, 0.0, 1.0);  // 1px soft edge
                    const double noise = rng.normal() * 0.015;
                    const double back = bg + grad * (static_cast<double>(y) / S - 0.5) + noise;
                    for (int c = 0; c < C; ++c) {
                        const double ink =
                            C == 3 ? amp * prgb[c] * chan_jit[c]
                                   : amp * (0.299 * prgb[0] + 0.587 * prgb[1] + 0.114 * prgb[2]);
                        const double v = back + mask * (ink - back);
                        ds.images.at(row, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
                }
        }
    }
    return ds;
}

Tensorf resize_bilinear(const Tensorf& img, int out_h, int out_w) {
    if (img.rank() != 3) throw std::invalid_argument("resize: expected (C, H, W)");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensorf out({C, out_h, out_w});
    const double sy = static_cast<double>(H) / out_h, sx = static_cast<double>(W) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, H - 1);
        const float wy = static_cast<float>(fy - y0);
        for (int j = 0; j < out_w; ++j) {
            double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, W - 1);
            const float wx = static_cast<float>(fx - x0);
            for (int c = 0; c < C; ++c) {
                const float* p = img.data() + static_cast<int64_t>(c) * H * W;
                const float a = p[y0 * W + x0], b = p[y0 * W + x1];
                const float d = p[y1 * W + x0], e = p[y1 * W + x1];
                const float top = a + wx * (b - a), bot = d + wx * (e - d);
                out.data()[(static_cast<int64_t>(c) * out_h + i) * out_w + j] = top + wy * (bot - top);
            }
        }
    }
    return out;
}

LabeledDataset load_dataset(const std::string& dir, int image_size, int channels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("load_dataset: channels must be 1 or 3");
    if (image_size < 1) throw std::invalid_argument("load_dataset: image_size must be >= 1");
    if (!fs::is_directory(dir)) throw std::runtime_error("load_dataset: not a directory: " + dir);

    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw std::runtime_error("load_dataset: no class subdirectories in " + dir);

    std::vector<std::pair<int, std::string>> files;  // (label, path)
    for (size_t k = 0; k < class_dirs.size(); ++k) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(fs::path(dir) / class_dirs[k]))
            if (e.is_regular_file()) names.push_back(e.path().string());
        std::sort(names.begin(), names.end());
        if (names.empty())
            throw std::runtime_error("load_dataset: class directory has no images: " + class_dirs[k]);
        for (auto& n : names) files.emplace_back(static_cast<int>(k), std::move(n));
    }

    LabeledDataset ds;
    ds.class_names = class_dirs;
    ds.images.resize({static_cast<int>(files.size()), channels, image_size, image_size});
    ds.labels.resize(files.size());
    const int64_t per = static_cast<int64_t>(channels) * image_size * image_size;

    for (size_t i = 0; i < files.size(); ++i) {
        ds.labels[i] = files[i].first;
        Tensorf img = io::read_png(files[i].second);  // throws with path on decode failure

        // center-crop to square
        const int H = img.dim(1), W = img.dim(2), side = std::min(H, W);
        if (H != W) {
            const int oy = (H - side) / 2, ox = (W - side) / 2;
            Tensorf sq({img.dim(0), side, side});
            for (int c = 0; c < img.dim(0); ++c)
                for (int y = 0; y < side; ++y)
                    std::copy(img.data() + (static_cast<int64_t>(c) * H + oy + y) * W + ox,
                              img.data() + (static_cast<int64_t>(c) * H + oy + y) * W + ox + side,
                              sq.data() + (static_cast<int64_t>(c) * side + y) * side);
            img = std::move(sq);
        }
        if (img.dim(1) != image_size) img = resize_bilinear(img, image_size, image_size);

        // channel adaptation
        Tensorf adapted({channels, image_size, image_size});
        const int64_t plane = static_cast<int64_t>(image_size) * image_size;
        if (img.dim(0) == channels) {
            adapted = img;
        } else if (img.dim(0) == 1 && channels == 3) {
            for (int c = 0; c < 3; ++c) std::copy(img.data(), img.data() + plane, adapted.data() + c * plane);
        } else {  // 3 -> 1: plain average
            for (int64_t p = 0; p < plane; ++p)
                adapted[p] = (img[p] + img[plane + p] + img[2 * plane + p]) / 3.0f;
        }
        std::copy(adapted.data(), adapted.data() + per, ds.images.data() + static_cast<int64_t>(i) * per);
    }
    ds.validate();
    return ds;
}

SplitResult make_splits(const LabeledDataset& private_corpus, const LabeledDataset& aux_corpus,
                        const std::string& mode, int train_per_class, int test_per_class, uint64_t seed) {
    if (mode != "overlap" && mode != "nonoverlap")
        throw std::invalid_argument("make_splits: mode must be overlap or nonoverlap");
    if (train_per_class < 1 || test_per_class < 1)
        throw std::invalid_argument("make_splits: split sizes must be >= 1");
    private_corpus.validate();
    const int K = private_corpus.num_classes();

    std::vector<std::vector<int>> by_class(static_cast<size_t>(K));
    for (int i = 0; i < private_corpus.size(); ++i)
        by_class[static_cast<size_t>(private_corpus.labels[static_cast<size_t>(i)])].push_back(i);

    const Rng base(seed);
    SplitResult out;
    std::vector<int> heldout;
    for (int k = 0; k < K; ++k) {
        auto& idx = by_class[static_cast<size_t>(k)];
        const int need = train_per_class + test_per_class;
        if (static_cast<int>(idx.size()) < need)
            throw std::invalid_argument("make_splits: class '" + private_corpus.class_names[static_cast<size_t>(k)] +
                                        "' has " + std::to_string(idx.size()) + " samples, needs " +
                                        std::to_string(need));
        Rng rng = base.stream("split/class/" + std::to_string(k));
        rng.shuffle(idx);
        out.train_indices.insert(out.train_indices.end(), idx.begin(), idx.begin() + train_per_class);
        out.test_indices.insert(out.test_indices.end(), idx.begin() + train_per_class, idx.begin() + need);
        heldout.insert(heldout.end(), idx.begin() + need, idx.end());
    }
    std::sort(out.train_indices.begin(), out.train_indices.end());
    std::sort(out.test_indices.begin(), out.test_indices.end());
    out.target_train = private_corpus.subset(out.train_indices);
    out.target_test = private_corpus.subset(out.test_indices);

    if (mode == "overlap") {
        std::sort(heldout.begin(), heldout.end());
        if (heldout.empty())
            throw std::invalid_argument("make_splits: overlap mode needs held-out samples for the auxiliary set");
        out.aux_indices = heldout;
        out.aux = private_corpus.subset(heldout);
        return out;
    }

    // nonoverlap: separate corpus, minus any class whose name matches a
    // private class (zero shared identities by construction).
    aux_corpus.validate();
    if (aux_corpus.size() == 0) throw std::invalid_argument("make_splits: nonoverlap mode needs an aux corpus");
    std::set<std::string> private_names(private_corpus.class_names.begin(), private_corpus.class_names.end());
    std::vector<int> keep_label(static_cast<size_t>(aux_corpus.num_classes()), -1);
    LabeledDataset aux;
    for (int k = 0; k < aux_corpus.num_classes(); ++k) {
        const std::string& name = aux_corpus.class_names[static_cast<size_t>(k)];
        if (private_names.count(name)) {
            ++out.aux_classes_removed;
        } else {
            keep_label[static_cast<size_t>(k)] = static_cast<int>(aux.class_names.size());
            aux.class_names.push_back(name);
        }
    }
    for (int i = 0; i < aux_corpus.size(); ++i)
        if (keep_label[static_cast<size_t>(aux_corpus.labels[static_cast<size_t>(i)])] >= 0)
            out.aux_indices.push_back(i);
    if (out.aux_indices.empty())
        throw std::invalid_argument("make_splits: every auxiliary class name matches a private class");
    LabeledDataset picked = aux_corpus.subset(out.aux_indices);
    aux.images = std::move(picked.images);
    aux.labels.resize(picked.labels.size());
    for (size_t i = 0; i < picked.labels.size(); ++i)
        aux.labels[i] = keep_label[static_cast<size_t>(picked.labels[i])];
    out.aux = std::move(aux);
    return out;
}

}  // namespace dmi::harness
