#include "dmi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace dmi::metrics {
namespace {

// (R x P) Euclidean distances between rows of two feature matrices.
std::vector<std::vector<double>> feature_distances(const FeatureFn& features, const Tensorf& recovered,
                                                   const Tensorf& private_images, const char* who) {
    if (recovered.rank() != 4 || recovered.dim(0) < 1)
        throw std::invalid_argument(std::string(who) + ": empty recovered image set");
    if (private_images.rank() != 4 || private_images.dim(0) < 1)
        throw std::invalid_argument(std::string(who) + ": no private images for this label");
    const Tensorf fr = features(recovered);
    const Tensorf fp = features(private_images);
    if (fr.rank() != 2 || fp.rank() != 2 || fr.dim(1) != fp.dim(1))
        throw std::invalid_argument(std::string(who) + ": feature function returned mismatched widths");
    const int R = fr.dim(0), P = fp.dim(0), F = fr.dim(1);
    std::vector<std::vector<double>> d(static_cast<size_t>(R), std::vector<double>(static_cast<size_t>(P)));
    for (int r = 0; r < R; ++r)
        for (int p = 0; p < P; ++p) {
            double acc = 0.0;
            const float* a = fr.data() + static_cast<int64_t>(r) * F;
            const float* b = fp.data() + static_cast<int64_t>(p) * F;
            for (int f = 0; f < F; ++f) {
                const double diff = static_cast<double>(a[f]) - b[f];
                acc += diff * diff;
            }
            d[static_cast<size_t>(r)][static_cast<size_t>(p)] = std::sqrt(acc);
        }
    return d;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double attack_accuracy(const TopnFn& topn, const Tensorf& images, int label, int n) {
    if (images.rank() != 4 || images.dim(0) < 1) throw std::invalid_argument("attack_accuracy: empty image set");
    if (n < 1) throw std::invalid_argument("attack_accuracy: n must be >= 1");
    const auto preds = topn(images, n);
    if (preds.size() != static_cast<size_t>(images.dim(0)))
        throw std::invalid_argument("attack_accuracy: prediction count mismatch");
    int hit = 0;
    for (const auto& row : preds)
        if (std::find(row.begin(), row.end(), label) != row.end()) ++hit;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

std::vector<int> nearest_private_indices(const FeatureFn& features, const Tensorf& recovered,
                                         const Tensorf& private_images) {
    const auto d = feature_distances(features, recovered, private_images, "nearest_private_indices");
    std::vector<int> idx(d.size());
    for (size_t r = 0; r < d.size(); ++r)
        idx[r] = static_cast<int>(std::min_element(d[r].begin(), d[r].end()) - d[r].begin());
    return idx;
}

double knn_distance(const FeatureFn& features, const Tensorf& recovered, const Tensorf& private_images) {
    const auto d = feature_distances(features, recovered, private_images, "knn_distance");
    std::vector<double> mins(d.size());
    for (size_t r = 0; r < d.size(); ++r) mins[r] = *std::min_element(d[r].begin(), d[r].end());
    return mean(mins);
}

double perceptual_similarity(const StackFn& stack, const Tensorf& a, const Tensorf& b,
                             const std::vector<double>& layer_weights) {
    if (a.rank() != 3 || !a.same_shape(b))
        throw std::invalid_argument("perceptual_similarity: images must be matching (C, H, W)");
    Tensorf pair({2, a.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.data(), a.data() + a.numel(), pair.data());
    std::copy(b.data(), b.data() + b.numel(), pair.data() + a.numel());
    const std::vector<Tensorf> layers = stack(pair);
    if (layers.empty()) throw std::invalid_argument("perceptual_similarity: feature stack returned no layers");
    if (!layer_weights.empty() && layer_weights.size() != layers.size())
        throw std::invalid_argument("perceptual_similarity: layer weight count mismatch");
    for (double w : layer_weights)
        if (!(w >= 0.0)) throw std::invalid_argument("perceptual_similarity: layer weights must be >= 0");

    const double uniform = 1.0 / static_cast<double>(layers.size());
    double total = 0.0;
    for (size_t l = 0; l < layers.size(); ++l) {
        const Tensorf& act = layers[l];
        if (act.rank() != 4 || act.dim(0) != 2)
            throw std::invalid_argument("perceptual_similarity: stack layers must be (2, C, H, W)");
        const int C = act.dim(1), H = act.dim(2), W = act.dim(3);
        const int64_t S = static_cast<int64_t>(H) * W;
        double layer_sum = 0.0;
        for (int64_t s = 0; s < S; ++s) {
            // unit-normalize each position's channel vector, then compare
            double na = 0.0, nb = 0.0;
            for (int c = 0; c < C; ++c) {
                const double va = act[(static_cast<int64_t>(0) * C + c) * S + s];
                const double vb = act[(static_cast<int64_t>(1) * C + c) * S + s];
                na += va * va;
                nb += vb * vb;
            }
            na = std::sqrt(na) + 1e-10;
            nb = std::sqrt(nb) + 1e-10;
            double pos = 0.0;
            for (int c = 0; c < C; ++c) {
                const double va = act[(static_cast<int64_t>(0) * C + c) * S + s] / na;
                const double vb = act[(static_cast<int64_t>(1) * C + c) * S + s] / nb;
                pos += (va - vb) * (va - vb);
            }
            layer_sum += pos / C;
        }
        const double w = layer_weights.empty() ? uniform : layer_weights[l];
        total += w * (layer_sum / static_cast<double>(S));
    }
    return total;
}

MetricReport evaluate_recoveries(const TopnFn& topn, const FeatureFn& features, const StackFn& stack,
                                 const std::vector<attack::RecoveredLabel>& recovered,
                                 const std::map<int, Tensorf>& private_by_label, int num_classes,
                                 const std::string& split_mode, const std::string& perceptual_tag) {
    if (recovered.empty()) throw std::invalid_argument("evaluate_recoveries: nothing recovered");
    MetricReport rep;
    rep.split_mode = split_mode;
    rep.perceptual_tag = perceptual_tag;
    rep.num_labels = static_cast<int>(recovered.size());
    rep.topn = std::min(5, num_classes);
    rep.top_k = recovered.front().images.dim(0);

    for (const auto& rec : recovered) {
        const auto it = private_by_label.find(rec.label);
        if (it == private_by_label.end())
            throw std::invalid_argument("evaluate_recoveries: no private images for label " +
                                        std::to_string(rec.label));
        LabelMetrics m;
        m.label = rec.label;
        m.images = rec.images.dim(0);
        m.acc_top1 = attack_accuracy(topn, rec.images, rec.label, 1);
        m.acc_top5 = attack_accuracy(topn, rec.images, rec.label, rep.topn);
        if (m.acc_top1 > m.acc_top5 + 1e-12)
            throw std::logic_error("evaluate_recoveries: top-1 exceeded top-n for label " +
                                   std::to_string(rec.label));
        m.knn_dist = knn_distance(features, rec.images, it->second);

        const std::vector<int> pair_idx = nearest_private_indices(features, rec.images, it->second);
        const int C = rec.images.dim(1), H = rec.images.dim(2), W = rec.images.dim(3);
        const int64_t per = static_cast<int64_t>(C) * H * W;
        double psum = 0.0;
        Tensorf r({C, H, W}), p({C, H, W});
        for (int i = 0; i < rec.images.dim(0); ++i) {
            std::copy(rec.images.data() + i * per, rec.images.data() + (i + 1) * per, r.data());
            std::copy(it->second.data() + pair_idx[static_cast<size_t>(i)] * per,
                      it->second.data() + (pair_idx[static_cast<size_t>(i)] + 1) * per, p.data());
            psum += perceptual_similarity(stack, r, p);
        }
        m.perceptual = psum / rec.images.dim(0);
        rep.per_label.push_back(m);
    }

    rep.aggregate.label = -1;
    for (const auto& m : rep.per_label) {
        rep.aggregate.images += m.images;
        rep.aggregate.acc_top1 += m.acc_top1;
        rep.aggregate.acc_top5 += m.acc_top5;
        rep.aggregate.knn_dist += m.knn_dist;
        rep.aggregate.perceptual += m.perceptual;
    }
    const double L = static_cast<double>(rep.per_label.size());
    rep.aggregate.acc_top1 /= L;
    rep.aggregate.acc_top5 /= L;
    rep.aggregate.knn_dist /= L;
    rep.aggregate.perceptual /= L;
    if (rep.aggregate.acc_top1 > rep.aggregate.acc_top5 + 1e-12)
        throw std::logic_error("evaluate_recoveries: aggregate top-1 exceeded top-n");
    return rep;
}

std::string to_records(const MetricReport& r) {
    std::string out;
    auto record = [&](const LabelMetrics& m, const char* kind) {
        nlohmann::ordered_json j;
        j["record"] = kind;
        if (m.label >= 0) j["label"] = m.label;
        j["images"] = m.images;
        j["acc_top1"] = m.acc_top1;
        j["acc_top5"] = m.acc_top5;
        j["knn_dist"] = m.knn_dist;
        j["perceptual"] = m.perceptual;
        if (std::string(kind) == "aggregate") {
            j["top_k"] = r.top_k;
            j["num_labels"] = r.num_labels;
            j["topn"] = r.topn;
            j["split_mode"] = r.split_mode;
            j["perceptual_tag"] = r.perceptual_tag;
            j["pairing_rule"] = r.pairing_rule;
        }
        out += j.dump() + "\n";
    };
    for (const auto& m : r.per_label) record(m, "label");
    record(r.aggregate, "aggregate");
    return out;
}

std::string to_table(const MetricReport& r) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %8s %10s %10s %12s %12s\n", "label", "images", "acc_top1",
                  "acc_top5", "knn_dist", "perceptual");
    out += line;
    auto row = [&](const std::string& name, const LabelMetrics& m) {
        std::snprintf(line, sizeof(line), "%-10s %8d %10.4f %10.4f %12.4f %12.6f\n", name.c_str(), m.images,
                      m.acc_top1, m.acc_top5, m.knn_dist, m.perceptual);
        out += line;
    };
    for (const auto& m : r.per_label) row(std::to_string(m.label), m);
    row("aggregate", r.aggregate);
    out += "top_k=" + std::to_string(r.top_k) + " topn=" + std::to_string(r.topn) +
           " split=" + r.split_mode + " perceptual=" + r.perceptual_tag + " pairing=" + r.pairing_rule + "\n";
    return out;
}

}  // namespace dmi::metrics
