#include <algorithm>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dmi/classifiers.hpp"
#include "dmi/harness/corpus.hpp"
#include "dmi/io.hpp"
#include "doctest.h"

using dmi::LabeledDataset;
using dmi::Tensorf;
using namespace dmi::harness;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const Tensorf& a, const Tensorf& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(float)) == 0;
}

double channel_mean(const LabeledDataset& ds, int label, int channel) {
    const int C = ds.images.dim(1), H = ds.images.dim(2), W = ds.images.dim(3);
    double sum = 0.0;
    int64_t count = 0;
    for (int n = 0; n < ds.size(); ++n) {
        if (ds.labels[static_cast<size_t>(n)] != label) continue;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) sum += ds.images.at(n, channel, y, x);
        count += static_cast<int64_t>(H) * W;
    }
    REQUIRE(count > 0);
    (void)C;
    return sum / static_cast<double>(count);
}

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string& name) : root(fs::temp_directory_path() / name) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

Tensorf quantized_image(int C, int H, int W, unsigned seed_byte) {
    Tensorf img({C, H, W});
    for (int64_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<float>((seed_byte + i * 7) % 256) / 255.0f;
    return img;
}

}  // namespace

TEST_CASE("glyph corpus shape, labels, range, and names") {
    GlyphCorpusSpec spec;
    spec.num_classes = 6;
    spec.per_class = 4;
    spec.image_size = 16;
    const LabeledDataset ds = make_glyph_corpus(spec);
    CHECK_NOTHROW(ds.validate());
    CHECK(ds.size() == 24);
    CHECK(ds.images.dim(1) == 3);
    CHECK(ds.images.dim(2) == 16);
    CHECK(ds.images.dim(3) == 16);
    CHECK(ds.class_names == std::vector<std::string>{"bar_warm", "bar_cool", "disc_warm", "disc_cool",
                                                     "cross_warm", "cross_cool"});
    for (int k = 0; k < 6; ++k)
        CHECK(std::count(ds.labels.begin(), ds.labels.end(), k) == 4);
    for (int64_t i = 0; i < ds.images.numel(); ++i) {
        CHECK(ds.images[i] >= 0.0f);
        CHECK(ds.images[i] <= 1.0f);
    }

    spec.name_suffix = "aux";
    CHECK(make_glyph_corpus(spec).class_names[0] == "bar_warm_aux");
}

TEST_CASE("glyph corpus is deterministic in the seed") {
    GlyphCorpusSpec spec;
    spec.num_classes = 4;
    spec.per_class = 3;
    spec.image_size = 16;
    const LabeledDataset a = make_glyph_corpus(spec);
    const LabeledDataset b = make_glyph_corpus(spec);
    CHECK(bitwise_equal(a.images, b.images));
    CHECK(a.labels == b.labels);

    spec.seed = 1;
    const LabeledDataset c = make_glyph_corpus(spec);
    CHECK_FALSE(bitwise_equal(a.images, c.images));
}

TEST_CASE("glyph palettes are confusable pairs with dark backgrounds") {
    GlyphCorpusSpec spec;
    spec.num_classes = 4;
    spec.per_class = 16;
    spec.image_size = 16;
    const LabeledDataset ds = make_glyph_corpus(spec);

    // warm classes are red-dominant, cool classes blue-dominant
    CHECK(channel_mean(ds, 0, 0) > channel_mean(ds, 0, 2));  // bar_warm
    CHECK(channel_mean(ds, 1, 0) < channel_mean(ds, 1, 2));  // bar_cool
    CHECK(channel_mean(ds, 2, 0) > channel_mean(ds, 2, 2));  // disc_warm
    CHECK(channel_mean(ds, 3, 0) < channel_mean(ds, 3, 2));  // disc_cool

    // hue_shift = 1 swaps the dominance
    GlyphCorpusSpec shifted = spec;
    shifted.hue_shift = 1.0;
    const LabeledDataset sw = make_glyph_corpus(shifted);
    CHECK(channel_mean(sw, 0, 0) < channel_mean(sw, 0, 2));

    // backgrounds are dark: the per-image median pixel sits well below 0.3
    const int H = ds.images.dim(2), W = ds.images.dim(3);
    for (int n = 0; n < 4; ++n) {
        std::vector<float> green(static_cast<size_t>(H) * W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) green[static_cast<size_t>(y) * W + x] = ds.images.at(n, 1, y, x);
        std::nth_element(green.begin(), green.begin() + green.size() / 2, green.end());
        CHECK(green[green.size() / 2] < 0.3f);
    }
}

TEST_CASE("glyph corpus single-channel and validation") {
    GlyphCorpusSpec spec;
    spec.num_classes = 2;
    spec.per_class = 2;
    spec.image_size = 16;
    spec.channels = 1;
    const LabeledDataset ds = make_glyph_corpus(spec);
    CHECK(ds.images.dim(1) == 1);

    GlyphCorpusSpec bad = spec;
    bad.num_classes = 11;
    CHECK_THROWS_AS(make_glyph_corpus(bad), std::invalid_argument);
    bad = spec;
    bad.num_classes = 1;
    CHECK_THROWS_AS(make_glyph_corpus(bad), std::invalid_argument);
    bad = spec;
    bad.channels = 2;
    CHECK_THROWS_AS(make_glyph_corpus(bad), std::invalid_argument);
    bad = spec;
    bad.hue_shift = 1.5;
    CHECK_THROWS_AS(make_glyph_corpus(bad), std::invalid_argument);
    bad = spec;
    bad.hue_jitter = -0.1;
    CHECK_THROWS_AS(make_glyph_corpus(bad), std::invalid_argument);
}

TEST_CASE("glyph hue_jitter blurs pair palettes without touching other draws") {
    GlyphCorpusSpec spec;
    spec.num_classes = 4;
    spec.per_class = 24;
    spec.image_size = 16;
    const LabeledDataset plain = make_glyph_corpus(spec);

    GlyphCorpusSpec jit = spec;
    jit.hue_jitter = 1.0;
    const LabeledDataset jd = make_glyph_corpus(jit);

    // identical structure: labels, names, geometry come from the same streams
    CHECK(jd.labels == plain.labels);
    CHECK(jd.class_names == plain.class_names);
    CHECK(jd.images.shape() == plain.images.shape());

    // hue_jitter = 0 reproduces the plain corpus bitwise
    GlyphCorpusSpec zero = spec;
    zero.hue_jitter = 0.0;
    const LabeledDataset zd = make_glyph_corpus(zero);
    const size_t numel = plain.images.numel();
    CHECK(std::equal(zd.images.data(), zd.images.data() + numel, plain.images.data()));

    // with full jitter some warm-class images become blue-dominant
    // (red-vs-blue mean flips sign on a nontrivial fraction of class 0)
    int flipped = 0;
    const int H = jd.images.dim(2), W = jd.images.dim(3);
    for (int i = 0; i < spec.per_class; ++i) {
        double red = 0.0, blue = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                red += jd.images.at(i, 0, y, x);
                blue += jd.images.at(i, 2, y, x);
            }
        if (blue > red) ++flipped;
    }
    CHECK(flipped > 0);
    CHECK(flipped < spec.per_class);

    // per-image blend amounts differ within a class: the pixel diff from the
    // plain corpus is not a single global recoloring
    CHECK(jd.images.at(0, 0, H / 2, W / 2) != jd.images.at(1, 0, H / 2, W / 2));
}

TEST_CASE("glyph classes separate under the target classifier") {
    GlyphCorpusSpec spec;
    spec.num_classes = 4;
    spec.per_class = 50;
    spec.image_size = 16;
    const LabeledDataset corpus = make_glyph_corpus(spec);
    const SplitResult split = make_splits(corpus, LabeledDataset{}, "overlap", 30, 15, 0);

    dmi::ClassifierTrainConfig cfg;
    cfg.epochs = 8;
    const dmi::TargetModel model = dmi::TargetModel::train(split.target_train, split.target_test, cfg);
    CHECK(model.test_accuracy() > 0.7);
}

TEST_CASE("resize_bilinear identity, constants, and hand values") {
    Tensorf img({1, 2, 2});
    img[0] = 0.0f;
    img[1] = 1.0f;
    img[2] = 0.0f;
    img[3] = 1.0f;  // columns 0 / 1

    const Tensorf same = resize_bilinear(img, 2, 2);
    CHECK(bitwise_equal(img, same));

    const Tensorf up = resize_bilinear(img, 4, 4);
    REQUIRE(up.shape() == std::vector<int>{1, 4, 4});
    // half-pixel-center bilinear along x: 0, 0.25, 0.75, 1
    for (int y = 0; y < 4; ++y) {
        CHECK(up.data()[y * 4 + 0] == doctest::Approx(0.0));
        CHECK(up.data()[y * 4 + 1] == doctest::Approx(0.25));
        CHECK(up.data()[y * 4 + 2] == doctest::Approx(0.75));
        CHECK(up.data()[y * 4 + 3] == doctest::Approx(1.0));
    }

    Tensorf flat({2, 3, 3});
    for (int64_t i = 0; i < flat.numel(); ++i) flat[i] = 0.625f;
    const Tensorf down = resize_bilinear(flat, 2, 5);
    for (int64_t i = 0; i < down.numel(); ++i) CHECK(down[i] == 0.625f);

    CHECK_THROWS_AS(resize_bilinear(Tensorf({1, 2, 2, 2}), 2, 2), std::invalid_argument);
}

TEST_CASE("load_dataset reads class directories in sorted order") {
    TempTree tmp("dmi_corpus_load");
    fs::create_directories(tmp.root / "zebra");
    fs::create_directories(tmp.root / "aardvark");
    // write files out of lexical order to prove sorting
    const Tensorf i0 = quantized_image(3, 8, 8, 10);
    const Tensorf i1 = quantized_image(3, 8, 8, 60);
    const Tensorf i2 = quantized_image(3, 8, 8, 110);
    const Tensorf i3 = quantized_image(3, 8, 8, 160);
    dmi::io::write_png((tmp.root / "aardvark" / "b.png").string(), i1);
    dmi::io::write_png((tmp.root / "aardvark" / "a.png").string(), i0);
    dmi::io::write_png((tmp.root / "zebra" / "y.png").string(), i2);
    dmi::io::write_png((tmp.root / "zebra" / "x.png").string(), i3);

    const LabeledDataset ds = load_dataset(tmp.root.string(), 8, 3);
    CHECK(ds.class_names == std::vector<std::string>{"aardvark", "zebra"});
    CHECK(ds.labels == std::vector<int>{0, 0, 1, 1});
    REQUIRE(ds.size() == 4);
    // rows: aardvark/a, aardvark/b, zebra/x, zebra/y — PNG round-trip is exact
    const int64_t per = 3 * 8 * 8;
    CHECK(std::memcmp(ds.images.data() + 0 * per, i0.data(), per * sizeof(float)) == 0);
    CHECK(std::memcmp(ds.images.data() + 1 * per, i1.data(), per * sizeof(float)) == 0);
    CHECK(std::memcmp(ds.images.data() + 2 * per, i3.data(), per * sizeof(float)) == 0);
    CHECK(std::memcmp(ds.images.data() + 3 * per, i2.data(), per * sizeof(float)) == 0);
}

TEST_CASE("load_dataset crops, resizes, and adapts channels") {
    TempTree tmp("dmi_corpus_adapt");
    fs::create_directories(tmp.root / "c0");

    // wide image: center-crop keeps the middle 8x8 block
    Tensorf wide({3, 8, 12});
    for (int64_t i = 0; i < wide.numel(); ++i) wide[i] = static_cast<float>((i * 3) % 256) / 255.0f;
    dmi::io::write_png((tmp.root / "c0" / "wide.png").string(), wide);
    const LabeledDataset ds = load_dataset(tmp.root.string(), 8, 3);
    REQUIRE(ds.size() == 1);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(ds.images.at(0, c, y, x) == wide[(static_cast<int64_t>(c) * 8 + y) * 12 + x + 2]);

    // grayscale file loaded as RGB replicates the plane
    TempTree tmp2("dmi_corpus_gray");
    fs::create_directories(tmp2.root / "c0");
    dmi::io::write_png((tmp2.root / "c0" / "g.png").string(), quantized_image(1, 8, 8, 5));
    const LabeledDataset rgb = load_dataset(tmp2.root.string(), 8, 3);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(rgb.images.at(0, 0, y, x) == rgb.images.at(0, 1, y, x));
            CHECK(rgb.images.at(0, 1, y, x) == rgb.images.at(0, 2, y, x));
        }

    // RGB file loaded single-channel averages the planes
    TempTree tmp3("dmi_corpus_togray");
    fs::create_directories(tmp3.root / "c0");
    const Tensorf color = quantized_image(3, 8, 8, 33);
    dmi::io::write_png((tmp3.root / "c0" / "c.png").string(), color);
    const LabeledDataset gray = load_dataset(tmp3.root.string(), 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            CHECK(gray.images.at(0, 0, y, x) ==
                  doctest::Approx((color[static_cast<int64_t>(y) * 8 + x] + color[64 + y * 8 + x] +
                                   color[128 + y * 8 + x]) /
                                  3.0f));

    // constant image survives resize exactly
    TempTree tmp4("dmi_corpus_resize");
    fs::create_directories(tmp4.root / "c0");
    Tensorf flat({3, 16, 16});
    for (int64_t i = 0; i < flat.numel(); ++i) flat[i] = 128.0f / 255.0f;
    dmi::io::write_png((tmp4.root / "c0" / "f.png").string(), flat);
    const LabeledDataset rs = load_dataset(tmp4.root.string(), 8, 3);
    for (int64_t i = 0; i < rs.images.numel(); ++i) CHECK(rs.images[i] == 128.0f / 255.0f);
}

TEST_CASE("load_dataset failure modes") {
    CHECK_THROWS_AS(load_dataset("no-such-dir-anywhere", 8, 3), std::runtime_error);

    TempTree empty("dmi_corpus_empty");
    CHECK_THROWS_AS(load_dataset(empty.root.string(), 8, 3), std::runtime_error);

    TempTree hollow("dmi_corpus_hollow");
    fs::create_directories(hollow.root / "c0");
    CHECK_THROWS_WITH_AS(load_dataset(hollow.root.string(), 8, 3), doctest::Contains("c0"),
                         std::runtime_error);

    TempTree junk("dmi_corpus_junk");
    fs::create_directories(junk.root / "c0");
    dmi::io::write_text_file((junk.root / "c0" / "notes.txt").string(), "not an image");
    CHECK_THROWS_WITH_AS(load_dataset(junk.root.string(), 8, 3), doctest::Contains("notes.txt"),
                         std::runtime_error);
}

TEST_CASE("make_splits overlap partitions each class without leakage") {
    GlyphCorpusSpec spec;
    spec.num_classes = 3;
    spec.per_class = 10;
    spec.image_size = 16;
    const LabeledDataset corpus = make_glyph_corpus(spec);
    const SplitResult s = make_splits(corpus, LabeledDataset{}, "overlap", 4, 3, 5);

    CHECK(s.target_train.size() == 12);
    CHECK(s.target_test.size() == 9);
    CHECK(s.aux.size() == 9);
    CHECK(s.aux_classes_removed == 0);
    CHECK(s.target_train.class_names == corpus.class_names);
    CHECK(s.aux.class_names == corpus.class_names);

    // index sets are disjoint and cover the corpus
    std::set<int> all(s.train_indices.begin(), s.train_indices.end());
    all.insert(s.test_indices.begin(), s.test_indices.end());
    all.insert(s.aux_indices.begin(), s.aux_indices.end());
    CHECK(static_cast<int>(all.size()) == corpus.size());
    CHECK(s.train_indices.size() + s.test_indices.size() + s.aux_indices.size() ==
          static_cast<size_t>(corpus.size()));

    // per-class counts hold in every piece
    for (int k = 0; k < 3; ++k) {
        CHECK(std::count(s.target_train.labels.begin(), s.target_train.labels.end(), k) == 4);
        CHECK(std::count(s.target_test.labels.begin(), s.target_test.labels.end(), k) == 3);
        CHECK(std::count(s.aux.labels.begin(), s.aux.labels.end(), k) == 3);
    }

    // audit indices really point at the source rows
    for (size_t i = 0; i < s.train_indices.size(); ++i)
        CHECK(s.target_train.labels[i] == corpus.labels[static_cast<size_t>(s.train_indices[i])]);

    // deterministic in the seed, different across seeds
    const SplitResult s2 = make_splits(corpus, LabeledDataset{}, "overlap", 4, 3, 5);
    CHECK(s2.train_indices == s.train_indices);
    CHECK(s2.aux_indices == s.aux_indices);
    const SplitResult s3 = make_splits(corpus, LabeledDataset{}, "overlap", 4, 3, 6);
    CHECK(s3.train_indices != s.train_indices);

    // insufficient samples and missing aux remainder are rejected
    CHECK_THROWS_AS(make_splits(corpus, LabeledDataset{}, "overlap", 8, 3, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_splits(corpus, LabeledDataset{}, "overlap", 7, 3, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_splits(corpus, LabeledDataset{}, "sideways", 4, 3, 0), std::invalid_argument);
}

TEST_CASE("make_splits nonoverlap drops name-matching classes and compacts labels") {
    GlyphCorpusSpec ps;
    ps.num_classes = 4;
    ps.per_class = 8;
    ps.image_size = 16;
    const LabeledDataset priv = make_glyph_corpus(ps);

    GlyphCorpusSpec as = ps;
    as.num_classes = 6;  // adds cross_warm, cross_cool beyond the private 4
    as.per_class = 5;
    as.seed = 9;
    const LabeledDataset aux_corpus = make_glyph_corpus(as);

    const SplitResult s = make_splits(priv, aux_corpus, "nonoverlap", 4, 2, 0);
    CHECK(s.aux_classes_removed == 4);
    CHECK(s.aux.class_names == std::vector<std::string>{"cross_warm", "cross_cool"});
    CHECK(s.aux.size() == 10);
    for (int l : s.aux.labels) CHECK((l == 0 || l == 1));
    CHECK(std::count(s.aux.labels.begin(), s.aux.labels.end(), 0) == 5);
    // audit indices point into the aux corpus at the surviving classes
    for (size_t i = 0; i < s.aux_indices.size(); ++i) {
        const int orig = aux_corpus.labels[static_cast<size_t>(s.aux_indices[i])];
        CHECK(orig >= 4);
        CHECK(s.aux.labels[i] == orig - 4);
    }
    // aux images are carried over bitwise
    const int64_t per = static_cast<int64_t>(3) * 16 * 16;
    for (size_t i = 0; i < s.aux_indices.size(); ++i)
        CHECK(std::memcmp(s.aux.images.data() + static_cast<int64_t>(i) * per,
                          aux_corpus.images.data() + static_cast<int64_t>(s.aux_indices[i]) * per,
                          static_cast<size_t>(per) * sizeof(float)) == 0);

    // identical class lists leave nothing
    CHECK_THROWS_AS(make_splits(priv, priv, "nonoverlap", 4, 2, 0), std::invalid_argument);
    // suffix-distinguished cousin corpus keeps every class
    GlyphCorpusSpec cs = as;
    cs.name_suffix = "aux";
    const SplitResult s2 = make_splits(priv, make_glyph_corpus(cs), "nonoverlap", 4, 2, 0);
    CHECK(s2.aux_classes_removed == 0);
    CHECK(s2.aux.num_classes() == 6);
    // empty aux corpus is rejected
    CHECK_THROWS_AS(make_splits(priv, LabeledDataset{}, "nonoverlap", 4, 2, 0), std::invalid_argument);
}
