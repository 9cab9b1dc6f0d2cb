#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "dmi/attack.hpp"
#include "dmi/core/rng.hpp"
#include "dmi/metrics.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace dmi;
using namespace dmi::metrics;

namespace {

Tensorf batch_of(const std::vector<std::vector<float>>& rows, int c, int h, int w) {
    Tensorf t({static_cast<int>(rows.size()), c, h, w});
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < rows[i].size(); ++j) t[static_cast<int64_t>(i) * rows[i].size() + j] = rows[i][j];
    return t;
}

// Feature stub: the first F pixels of each image, verbatim.
FeatureFn pixel_features(int f) {
    return [f](const Tensorf& images) {
        const int N = images.dim(0);
        const int64_t per = images.numel() / N;
        Tensorf out({N, f});
        for (int n = 0; n < N; ++n)
            for (int j = 0; j < f; ++j) out[static_cast<int64_t>(n) * f + j] = images[n * per + j];
        return out;
    };
}

}  // namespace

TEST_CASE("attack_accuracy counts top-n containment") {
    // topn stub: image i "predicts" [i % 3, (i+1) % 3, ...] truncated to n
    TopnFn topn = [](const Tensorf& images, int n) {
        std::vector<std::vector<int>> out;
        for (int i = 0; i < images.dim(0); ++i) {
            std::vector<int> row;
            for (int j = 0; j < n; ++j) row.push_back((i + j) % 3);
            out.push_back(row);
        }
        return out;
    };
    Tensorf imgs({6, 1, 2, 2});
    CHECK(attack_accuracy(topn, imgs, 1, 1) == doctest::Approx(2.0 / 6.0));  // i = 1, 4
    CHECK(attack_accuracy(topn, imgs, 1, 2) == doctest::Approx(4.0 / 6.0));  // i = 0, 1, 3, 4
    CHECK(attack_accuracy(topn, imgs, 1, 3) == 1.0);                         // saturation at n = K
    CHECK(attack_accuracy(topn, imgs, 0, 1) == doctest::Approx(2.0 / 6.0));

    Tensorf empty;
    CHECK_THROWS_AS(attack_accuracy(topn, empty, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(attack_accuracy(topn, imgs, 0, 0), std::invalid_argument);
}

TEST_CASE("knn_distance hand oracle") {
    // features = first two pixels; recovered {(0,0),(1,0)}, private {(0,0),(0,2)}
    const Tensorf recovered = batch_of({{0, 0, 9, 9}, {1, 0, 9, 9}}, 1, 2, 2);
    const Tensorf privates = batch_of({{0, 0, 5, 5}, {0, 2, 5, 5}}, 1, 2, 2);
    const FeatureFn f = pixel_features(2);
    CHECK(knn_distance(f, recovered, privates) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(nearest_private_indices(f, recovered, privates) == std::vector<int>{0, 0});

    Tensorf empty;
    CHECK_THROWS_AS(knn_distance(f, recovered, empty), std::invalid_argument);
    CHECK_THROWS_AS(knn_distance(f, empty, privates), std::invalid_argument);
}

TEST_CASE("knn_distance equals an independent brute force on 50 random instances") {
    Rng rng(42);
    auto dims = rng.stream("dims");
    auto pix = rng.stream("pix");
    for (int inst = 0; inst < 50; ++inst) {
        const int R = 1 + dims.uniform_int(6), P = 1 + dims.uniform_int(7), F = 1 + dims.uniform_int(5);
        Tensorf rec({R, 1, 3, 3}), priv({P, 1, 3, 3});
        pix.fill_uniform(rec.data(), rec.numel(), -2.0, 2.0);
        pix.fill_uniform(priv.data(), priv.numel(), -2.0, 2.0);
        const FeatureFn f = pixel_features(F);
        const double got = knn_distance(f, rec, priv);

        const Tensorf fr = f(rec), fp = f(priv);
        double expect = 0.0;
        for (int r = 0; r < R; ++r) {
            double best = std::numeric_limits<double>::infinity();
            for (int p = 0; p < P; ++p) {
                double acc = 0.0;
                for (int j = 0; j < F; ++j) {
                    const double d = static_cast<double>(fr[static_cast<int64_t>(r) * F + j]) -
                                     fp[static_cast<int64_t>(p) * F + j];
                    acc += d * d;
                }
                best = std::min(best, std::sqrt(acc));
            }
            expect += best;
        }
        expect /= R;
        CHECK(got == expect);  // same arithmetic order -> bitwise equal
    }
}

TEST_CASE("perceptual_similarity identities") {
    // Stub stack: two layers; layer 0 = raw pixels, layer 1 = pixels * gain.
    auto make_stack = [](float gain0, float gain1) {
        return StackFn([gain0, gain1](const Tensorf& images) {
            Tensorf l0 = images, l1 = images;
            for (int64_t i = 0; i < images.numel(); ++i) {
                l0[i] *= gain0;
                l1[i] *= gain1;
            }
            return std::vector<Tensorf>{l0, l1};
        });
    };
    const StackFn stack = make_stack(1.0f, 1.0f);

    Tensorf a({2, 4, 4}), b({2, 4, 4});
    Rng rng(7);
    auto s = rng.stream("img");
    s.fill_uniform(a.data(), a.numel());
    s.fill_uniform(b.data(), b.numel());

    SUBCASE("identity is zero and symmetry is exact") {
        CHECK(perceptual_similarity(stack, a, a) == 0.0);
        const double ab = perceptual_similarity(stack, a, b);
        const double ba = perceptual_similarity(stack, b, a);
        CHECK(ab > 0.0);
        CHECK(std::abs(ab - ba) <= 1e-6);
    }
    SUBCASE("uniform positive scaling of one layer's activations is invisible") {
        const double base = perceptual_similarity(make_stack(1.0f, 1.0f), a, b);
        const double scaled0 = perceptual_similarity(make_stack(7.25f, 1.0f), a, b);
        const double scaled1 = perceptual_similarity(make_stack(1.0f, 0.035f), a, b);
        CHECK(std::abs(base - scaled0) <= 1e-6);
        CHECK(std::abs(base - scaled1) <= 1e-6);
    }
    SUBCASE("hand example: parallel channel vectors normalize to the same direction") {
        // one layer, constant 2-channel activations [3,4] vs [6,8]
        StackFn one_layer = [](const Tensorf&) {
            Tensorf l({2, 2, 2, 2});
            for (int n = 0; n < 2; ++n) {
                const float c0 = n == 0 ? 3.0f : 6.0f, c1 = n == 0 ? 4.0f : 8.0f;
                for (int64_t s2 = 0; s2 < 4; ++s2) {
                    l[(static_cast<int64_t>(n) * 2 + 0) * 4 + s2] = c0;
                    l[(static_cast<int64_t>(n) * 2 + 1) * 4 + s2] = c1;
                }
            }
            return std::vector<Tensorf>{l};
        };
        Tensorf x({1, 2, 2}), y({1, 2, 2});
        x.fill(0.1f);
        y.fill(0.9f);
        CHECK(perceptual_similarity(one_layer, x, y) <= 1e-6);
    }
    SUBCASE("layer weights validated; mismatched shapes rejected") {
        CHECK_THROWS_AS(perceptual_similarity(stack, a, b, {0.5}), std::invalid_argument);
        CHECK_THROWS_AS(perceptual_similarity(stack, a, b, {0.5, -0.1}), std::invalid_argument);
        Tensorf c({2, 3, 3});
        CHECK_THROWS_AS(perceptual_similarity(stack, a, c), std::invalid_argument);
        // weighted form: doubling one layer weight scales its contribution
        const double w_only0 = perceptual_similarity(stack, a, b, {1.0, 0.0});
        const double w_only1 = perceptual_similarity(stack, a, b, {0.0, 1.0});
        const double w_mean = perceptual_similarity(stack, a, b);
        CHECK(w_mean == doctest::Approx(0.5 * (w_only0 + w_only1)).epsilon(1e-12));
    }
}

TEST_CASE("evaluate_recoveries assembles per-label and aggregate records") {
    // Two labels; topn stub classifies by mean brightness threshold.
    TopnFn topn = [](const Tensorf& images, int n) {
        std::vector<std::vector<int>> out;
        const int64_t per = images.numel() / images.dim(0);
        for (int i = 0; i < images.dim(0); ++i) {
            double m = 0.0;
            for (int64_t j = 0; j < per; ++j) m += images[i * per + j];
            m /= static_cast<double>(per);
            const int first = m > 0.5 ? 1 : 0;
            std::vector<int> row{first};
            if (n > 1) row.push_back(1 - first);
            out.push_back(row);
        }
        return out;
    };
    const FeatureFn feats = pixel_features(3);
    const StackFn stack = [](const Tensorf& images) { return std::vector<Tensorf>{images}; };

    attack::RecoveredLabel r0, r1;
    r0.label = 0;
    r0.images = Tensorf::full({2, 1, 2, 2}, 0.2f);  // both classified 0
    r1.label = 1;
    r1.images = Tensorf::full({2, 1, 2, 2}, 0.8f);
    r1.images[0] = 0.0f;  // push image 0's mean to 0.6: still label 1
    std::map<int, Tensorf> privates;
    privates[0] = Tensorf::full({3, 1, 2, 2}, 0.25f);
    privates[1] = Tensorf::full({2, 1, 2, 2}, 0.8f);

    const MetricReport rep =
        evaluate_recoveries(topn, feats, stack, {r0, r1}, privates, 2, "overlap", "stub-stack");
    REQUIRE(rep.per_label.size() == 2);
    CHECK(rep.topn == 2);
    CHECK(rep.top_k == 2);
    CHECK(rep.num_labels == 2);
    CHECK(rep.per_label[0].acc_top1 == 1.0);
    CHECK(rep.per_label[0].acc_top5 == 1.0);
    CHECK(rep.per_label[1].acc_top1 == 1.0);
    CHECK(rep.aggregate.acc_top1 == doctest::Approx(1.0));
    CHECK(rep.aggregate.images == 4);
    // label-0 knn: every pixel differs by 0.05 over 3 feature dims
    CHECK(rep.per_label[0].knn_dist == doctest::Approx(std::sqrt(3 * 0.05 * 0.05)).epsilon(1e-5));
    CHECK(rep.aggregate.knn_dist ==
          doctest::Approx(0.5 * (rep.per_label[0].knn_dist + rep.per_label[1].knn_dist)));
    CHECK(rep.aggregate.acc_top1 <= rep.aggregate.acc_top5);

    SUBCASE("records serialize one line per label plus an aggregate") {
        const std::string txt = to_records(rep);
        int lines = 0;
        size_t at = 0;
        while ((at = txt.find('\n', at)) != std::string::npos) {
            ++lines;
            ++at;
        }
        CHECK(lines == 3);
        const auto last = nlohmann::json::parse(txt.substr(txt.rfind("{\"record\":\"aggregate\"")));
        CHECK(last["record"] == "aggregate");
        CHECK(last["split_mode"] == "overlap");
        CHECK(last["acc_top1"] == doctest::Approx(1.0));
        CHECK(last["pairing_rule"] == "nearest-private-by-feature-distance");

        const std::string table = to_table(rep);
        CHECK(table.find("acc_top1") != std::string::npos);
        CHECK(table.find("aggregate") != std::string::npos);
    }
    SUBCASE("missing private images for a label throws") {
        privates.erase(1);
        CHECK_THROWS_AS(evaluate_recoveries(topn, feats, stack, {r0, r1}, privates, 2, "overlap", "s"),
                        std::invalid_argument);
    }
}
