#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dmi/attack.hpp"
#include "dmi/core/tensor.hpp"

namespace dmi::metrics {

// Evaluation hooks. The harness binds these to the trained evaluation model;
// tests bind scripted stubs. All are frozen pure functions of their input.
using TopnFn = std::function<std::vector<std::vector<int>>(const Tensorf& images, int n)>;
using FeatureFn = std::function<Tensorf(const Tensorf& images)>;                // -> (N, F)
using StackFn = std::function<std::vector<Tensorf>(const Tensorf& images)>;    // -> layers of (N, C, H, W)

// Fraction of `images` whose top-n prediction set contains `label`.
double attack_accuracy(const TopnFn& topn, const Tensorf& images, int label, int n);

// For each recovered image, index of the closest private image in feature
// space (Euclidean distance over `features` output, ties to the lower index).
std::vector<int> nearest_private_indices(const FeatureFn& features, const Tensorf& recovered,
                                         const Tensorf& private_images);

// Mean over recovered images of the minimum feature-space distance to any
// private image of the same label.
double knn_distance(const FeatureFn& features, const Tensorf& recovered, const Tensorf& private_images);

// Perceptual distance of the LPIPS form between two images (C, H, W):
// each spatial feature vector is unit-normalized across channels, channel
// differences are squared and averaged over channels and positions, and
// layers are combined with fixed non-negative weights (uniform 1/L when
// `layer_weights` is empty). Symmetric; zero when a == b.
double perceptual_similarity(const StackFn& stack, const Tensorf& a, const Tensorf& b,
                             const std::vector<double>& layer_weights = {});

struct LabelMetrics {
    int label = -1;  // -1 marks the aggregate record
    int images = 0;
    double acc_top1 = 0.0;
    double acc_top5 = 0.0;
    double knn_dist = 0.0;
    double perceptual = 0.0;
};

struct MetricReport {
    std::vector<LabelMetrics> per_label;
    LabelMetrics aggregate;  // unweighted mean over attacked labels
    int top_k = 0;
    int num_labels = 0;
    int topn = 5;  // the "top-5" column is top-min(5, num_classes)
    std::string split_mode;
    std::string perceptual_tag;  // which feature stack scored `perceptual`
    // Each recovered image is scored against its nearest private image in
    // penultimate-feature space; declared here because no canonical pairing
    // rule exists for this metric.
    std::string pairing_rule = "nearest-private-by-feature-distance";
};

// Scores every recovered label set against the evaluator hooks. Throws if a
// label lacks private reference images or any accuracy violates top1 <= top5.
MetricReport evaluate_recoveries(const TopnFn& topn, const FeatureFn& features, const StackFn& stack,
                                 const std::vector<attack::RecoveredLabel>& recovered,
                                 const std::map<int, Tensorf>& private_by_label, int num_classes,
                                 const std::string& split_mode, const std::string& perceptual_tag);

// One structured-text record per label plus one aggregate record.
std::string to_records(const MetricReport& r);
// Fixed-width human-readable table with the same columns.
std::string to_table(const MetricReport& r);

}  // namespace dmi::metrics
