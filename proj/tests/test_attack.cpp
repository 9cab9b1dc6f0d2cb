#include <algorithm>
#include <cmath>
#include <vector>

#include "dmi/attack.hpp"
#include "dmi/core/rng.hpp"
#include "dmi/oracle.hpp"
#include "doctest.h"

using namespace dmi;
using namespace dmi::attack;

namespace {

// Deterministic stand-in oracles: label is a pure function of the pixels.

// Label = index of the channel with the largest mean (K = channels).
struct BrightestChannelOracle final : LabelOracle {
    int classes;
    explicit BrightestChannelOracle(int k) : classes(k) {}
    int num_classes() const override { return classes; }
    std::vector<int> predict_label(const Tensorf& images) const override {
        const int N = images.dim(0), C = images.dim(1);
        const int64_t S = images.numel() / (static_cast<int64_t>(N) * C);
        std::vector<int> out(static_cast<size_t>(N));
        for (int n = 0; n < N; ++n) {
            int best = 0;
            double best_sum = -1.0;
            for (int c = 0; c < std::min(C, classes); ++c) {
                double sum = 0.0;
                const float* p = images.data() + (static_cast<int64_t>(n) * C + c) * S;
                for (int64_t i = 0; i < S; ++i) sum += p[i];
                if (sum > best_sum) {
                    best_sum = sum;
                    best = c;
                }
            }
            out[static_cast<size_t>(n)] = best;
        }
        return out;
    }
};

// Label = quantized mean brightness of channel 0; sensitive to crops/gamma.
struct QuantizedMeanOracle final : LabelOracle {
    int classes;
    explicit QuantizedMeanOracle(int k) : classes(k) {}
    int num_classes() const override { return classes; }
    std::vector<int> predict_label(const Tensorf& images) const override {
        const int N = images.dim(0), C = images.dim(1);
        const int64_t S = images.numel() / (static_cast<int64_t>(N) * C);
        std::vector<int> out(static_cast<size_t>(N));
        for (int n = 0; n < N; ++n) {
            double sum = 0.0;
            const float* p = images.data() + static_cast<int64_t>(n) * C * S;
            for (int64_t i = 0; i < S; ++i) sum += p[i];
            const double mean = sum / static_cast<double>(S);
            int q = static_cast<int>(mean * classes);
            out[static_cast<size_t>(n)] = std::clamp(q, 0, classes - 1);
        }
        return out;
    }
};

struct ConstantOracle final : LabelOracle {
    int classes, value;
    ConstantOracle(int k, int v) : classes(k), value(v) {}
    int num_classes() const override { return classes; }
    std::vector<int> predict_label(const Tensorf& images) const override {
        return std::vector<int>(static_cast<size_t>(images.dim(0)), value);
    }
};

Tensorf random_unit_batch(int n, int c, int s, uint64_t seed) {
    Tensorf x({n, c, s, s});
    Rng rng(seed);
    auto st = rng.stream("pix");
    st.fill_uniform(x.data(), x.numel());
    return x;
}

Tensorf random_unit_image(int c, int s, uint64_t seed) {
    Tensorf x({c, s, s});
    Rng rng(seed);
    auto st = rng.stream("pix");
    st.fill_uniform(x.data(), x.numel());
    return x;
}

bool bitwise_equal(const Tensorf& a, const Tensorf& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("gamma_correct applies x^gamma and validates its inputs") {
    const Tensorf x = random_unit_batch(2, 3, 8, 1);

    const Tensorf id = gamma_correct(x, 1.0);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(id[i] == doctest::Approx(x[i]).epsilon(1e-7));

    const Tensorf sq = gamma_correct(x, 2.0);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(sq[i] == doctest::Approx(x[i] * x[i]).epsilon(1e-6));

    const Tensorf g = gamma_correct(x, 2.3);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(g[i] == doctest::Approx(std::pow(static_cast<double>(x[i]), 2.3)).epsilon(1e-5));

    Tensorf ends({1, 1, 1, 2});
    ends[0] = 0.0f;
    ends[1] = 1.0f;
    const Tensorf ge = gamma_correct(ends, 2.3);
    CHECK(ge[0] == 0.0f);
    CHECK(ge[1] == 1.0f);

    // gamma > 1 darkens interior values, gamma < 1 brightens them
    Tensorf mid({1, 1, 1, 1});
    mid[0] = 0.5f;
    CHECK(gamma_correct(mid, 2.3)[0] < 0.5f);
    CHECK(gamma_correct(mid, 0.5)[0] > 0.5f);

    CHECK_THROWS_AS(gamma_correct(x, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(gamma_correct(x, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(gamma_correct(x, std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
    Tensorf bad = x;
    bad[0] = 1.4f;
    CHECK_THROWS_AS(gamma_correct(bad, 2.0), std::invalid_argument);
    bad[0] = -0.4f;
    CHECK_THROWS_AS(gamma_correct(bad, 2.0), std::invalid_argument);
}

TEST_CASE("random_transform geometry") {
    const Tensorf img = random_unit_image(3, 16, 2);

    SUBCASE("identity when crop is full and flips are off") {
        TransformSpec spec{1.0, 0.0, 0.0};
        Rng rng(3);
        CHECK(bitwise_equal(random_transform(img, spec, rng), img));
    }
    SUBCASE("pure horizontal flip mirrors columns") {
        TransformSpec spec{1.0, 1.0, 0.0};
        Rng rng(3);
        const Tensorf t = random_transform(img, spec, rng);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    CHECK(t[(c * 16 + y) * 16 + x] == img[(c * 16 + y) * 16 + (15 - x)]);
    }
    SUBCASE("pure vertical flip mirrors rows") {
        TransformSpec spec{1.0, 0.0, 1.0};
        Rng rng(3);
        const Tensorf t = random_transform(img, spec, rng);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    CHECK(t[(c * 16 + y) * 16 + x] == img[(c * 16 + (15 - y)) * 16 + x]);
    }
    SUBCASE("output stays in [0,1] and preserves shape") {
        TransformSpec spec{0.875, 0.5, 0.5};
        Rng rng(4);
        for (int trial = 0; trial < 25; ++trial) {
            const Tensorf t = random_transform(img, spec, rng);
            REQUIRE(t.same_shape(img));
            for (int64_t i = 0; i < t.numel(); ++i) {
                CHECK(t[i] >= 0.0f);
                CHECK(t[i] <= 1.0f);
            }
        }
    }
    SUBCASE("constant image is invariant up to rounding") {
        Tensorf flat = Tensorf::full({3, 16, 16}, 0.375f);
        TransformSpec spec{0.8, 0.5, 0.5};
        Rng rng(5);
        const Tensorf t = random_transform(flat, spec, rng);
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == doctest::Approx(0.375f).epsilon(1e-6));
    }
    SUBCASE("same stream gives the same transform, advancing stream varies it") {
        TransformSpec spec{0.875, 0.5, 0.5};
        Rng a(9), b(9), c(9);
        const Tensorf t1 = random_transform(img, spec, a);
        const Tensorf t2 = random_transform(img, spec, b);
        CHECK(bitwise_equal(t1, t2));
        (void)random_transform(img, spec, c);
        const Tensorf t3 = random_transform(img, spec, c);  // second draw differs w.h.p.
        CHECK_FALSE(bitwise_equal(t1, t3));
    }
    SUBCASE("validation") {
        Rng rng(1);
        CHECK_THROWS_AS(random_transform(img, TransformSpec{0.0, 0.5, 0.5}, rng), std::invalid_argument);
        CHECK_THROWS_AS(random_transform(img, TransformSpec{1.2, 0.5, 0.5}, rng), std::invalid_argument);
        CHECK_THROWS_AS(random_transform(img, TransformSpec{0.9, -0.1, 0.5}, rng), std::invalid_argument);
        Tensorf rect({3, 8, 16});
        CHECK_THROWS_AS(random_transform(rect, TransformSpec{}, rng), std::invalid_argument);
    }
}

TEST_CASE("representative weights match a per-image brute-force recomputation") {
    // 200 scripted scenarios: 2 oracles x 4 labels x 5 batches x 5 candidates.
    const int S = 12, C = 3, M = 17;
    const TransformSpec spec{0.85, 0.5, 0.5};
    BrightestChannelOracle bright(4);
    QuantizedMeanOracle quant(4);
    int scenarios = 0;
    for (int oracle_id = 0; oracle_id < 2; ++oracle_id) {
        const LabelOracle& oracle = oracle_id == 0 ? static_cast<const LabelOracle&>(bright)
                                                   : static_cast<const LabelOracle&>(quant);
        for (int label = 0; label < 4; ++label)
            for (int batch_id = 0; batch_id < 5; ++batch_id) {
                const uint64_t seed = 1000 + 97 * static_cast<uint64_t>(oracle_id) + 13 * label + batch_id;
                const Tensorf cands = random_unit_batch(5, C, S, seed);
                const auto w = representative_weights(oracle, cands, label, M, spec, seed);
                REQUIRE(w.size() == 5);
                for (int i = 0; i < 5; ++i, ++scenarios) {
                    Tensorf img({C, S, S});
                    std::copy(cands.data() + i * img.numel(), cands.data() + (i + 1) * img.numel(), img.data());
                    Rng stream = Rng(seed).stream("cand/" + std::to_string(i));
                    const double brute = representative_weight(oracle, img, label, M, spec, stream);
                    CHECK(w[static_cast<size_t>(i)] == brute);  // exact: both are hit-counts / M
                    const double scaled = w[static_cast<size_t>(i)] * M;
                    CHECK(scaled == doctest::Approx(std::round(scaled)).epsilon(1e-12));
                }
            }
    }
    CHECK(scenarios == 200);
}

TEST_CASE("representative weight endpoints and validation") {
    const Tensorf img = random_unit_image(3, 12, 77);
    const TransformSpec spec{0.9, 0.5, 0.5};
    ConstantOracle always(4, 2), never(4, 3);
    Rng r1(1), r2(1);
    CHECK(representative_weight(always, img, 2, 25, spec, r1) == 1.0);
    CHECK(representative_weight(never, img, 2, 25, spec, r2) == 0.0);

    Rng r3(1);
    CHECK_THROWS_AS(representative_weight(always, img, 4, 5, spec, r3), std::invalid_argument);
    CHECK_THROWS_AS(representative_weight(always, img, -1, 5, spec, r3), std::invalid_argument);
    CHECK_THROWS_AS(representative_weight(always, img, 1, 0, spec, r3), std::invalid_argument);

    const Tensorf batch = random_unit_batch(3, 3, 12, 5);
    CHECK_THROWS_AS(representative_weights(always, batch, 9, 5, spec, 1), std::invalid_argument);
    Tensorf empty;
    CHECK_THROWS_AS(representative_weights(always, empty, 1, 5, spec, 1), std::invalid_argument);
}

TEST_CASE("select_top_k orders by weight then index") {
    CHECK(select_top_k({0.1, 0.9, 0.5}, 2) == std::vector<int>{1, 2});
    CHECK(select_top_k({0.5, 0.9, 0.5, 0.9}, 4) == std::vector<int>{1, 3, 0, 2});
    CHECK(select_top_k({0.2, 0.2, 0.2}, 2) == std::vector<int>{0, 1});  // ties -> ascending index
    CHECK(select_top_k({0.7}, 1) == std::vector<int>{0});
    CHECK_THROWS_AS(select_top_k({0.1, 0.2}, 0), std::invalid_argument);
    CHECK_THROWS_AS(select_top_k({0.1, 0.2}, 3), std::invalid_argument);
    CHECK_THROWS_AS(select_top_k({}, 1), std::invalid_argument);
}

TEST_CASE("label_auxiliary is a straight oracle pass") {
    BrightestChannelOracle oracle(3);
    const Tensorf batch = random_unit_batch(6, 3, 8, 123);
    CHECK(label_auxiliary(oracle, batch) == oracle.predict_label(batch));
    Tensorf empty;
    CHECK_THROWS_AS(label_auxiliary(oracle, empty), std::invalid_argument);
}

TEST_CASE("recover_label selects oracle-consistent candidates") {
    // Raw sampler output in [-1, 1]: candidate i has channel (i % 3) brightest,
    // so BrightestChannelOracle should pick exactly the matching thirds.
    const int N = 12, C = 3, S = 16;
    Tensorf raw({N, C, S, S});
    Rng rng(9);
    auto noise = rng.stream("noise");
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < S * S; ++i) {
                const float base = (c == n % 3) ? 0.6f : -0.6f;
                raw.data()[(static_cast<int64_t>(n) * C + c) * S * S + i] =
                    std::clamp(base + 0.05f * static_cast<float>(noise.normal()), -1.0f, 1.0f);
            }
    BrightestChannelOracle oracle(3);

    RecoverConfig cfg;
    cfg.candidates_per_label = N;
    cfg.top_k = 4;
    cfg.gamma = 2.3;
    cfg.weight_queries = 9;
    cfg.seed = 17;

    const RecoveredLabel rec = recover_label(oracle, raw, 1, cfg);
    CHECK(rec.label == 1);
    CHECK(rec.images.shape() == std::vector<int>{4, C, S, S});
    REQUIRE(rec.selected.size() == 4);
    REQUIRE(rec.weights.size() == 4);
    REQUIRE(rec.all_weights.size() == static_cast<size_t>(N));
    CHECK_FALSE(rec.all_zero);
    for (int r = 0; r < 4; ++r) {
        CHECK(rec.selected[static_cast<size_t>(r)] % 3 == 1);  // channel-1 candidates
        CHECK(rec.weights[static_cast<size_t>(r)] == 1.0);
    }
    // returned images are the gamma-corrected [0,1] versions of the selected raws
    for (int64_t i = 0; i < rec.images.numel(); ++i) {
        CHECK(rec.images[i] >= 0.0f);
        CHECK(rec.images[i] <= 1.0f);
    }
    // weights listed in selection order are non-increasing
    for (size_t r = 1; r < rec.weights.size(); ++r) CHECK(rec.weights[r - 1] >= rec.weights[r]);

    SUBCASE("deterministic in the seed") {
        const RecoveredLabel again = recover_label(oracle, raw, 1, cfg);
        CHECK(bitwise_equal(again.images, rec.images));
        CHECK(again.selected == rec.selected);
        CHECK(again.all_weights == rec.all_weights);
    }
    SUBCASE("all-zero flag when the oracle never emits the label") {
        ConstantOracle never(3, 0);
        const RecoveredLabel rz = recover_label(never, raw, 1, cfg);
        CHECK(rz.all_zero);
        for (double w : rz.all_weights) CHECK(w == 0.0);
        CHECK(rz.selected == std::vector<int>{0, 1, 2, 3});  // tie rule: ascending indices
    }
    SUBCASE("validation") {
        CHECK_THROWS_AS(recover_label(oracle, raw, 3, cfg), std::invalid_argument);
        RecoverConfig bad = cfg;
        bad.candidates_per_label = N + 1;
        CHECK_THROWS_AS(recover_label(oracle, raw, 1, bad), std::invalid_argument);
        bad = cfg;
        bad.top_k = N + 1;
        CHECK_THROWS_AS(recover_label(oracle, raw, 1, bad), std::invalid_argument);
        bad = cfg;
        bad.gamma = 0.0;
        CHECK_THROWS_AS(recover_label(oracle, raw, 1, bad), std::invalid_argument);
    }
}

TEST_CASE("gamma correction changes which candidates an intensity oracle accepts") {
    // QuantizedMeanOracle buckets by brightness; raising gamma darkens
    // images, so the accepted bucket shifts. This is the mechanism the
    // gamma sweep exercises end to end.
    const int S = 16;
    Tensorf raw({1, 1, S, S});
    raw.fill(0.2f);  // unit-range value 0.6; 0.6^1 = 0.6 vs 0.6^2.3 ~= 0.31
    QuantizedMeanOracle oracle(4);

    Tensorf unit(raw.shape());
    for (int64_t i = 0; i < raw.numel(); ++i) unit[i] = 0.5f * (raw[i] + 1.0f);
    const int label_g1 = oracle.predict_label(gamma_correct(unit, 1.0))[0];
    const int label_g23 = oracle.predict_label(gamma_correct(unit, 2.3))[0];
    CHECK(label_g1 == 2);
    CHECK(label_g23 == 1);
}
