#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dmi/core/rng.hpp"
#include "dmi/core/tensor.hpp"
#include "dmi/oracle.hpp"

// Everything the adversary runs. This translation unit may depend on the
// label oracle interface only — never on classifier internals, logits, or
// features; a call-surface test enforces that.
namespace dmi::attack {

struct TransformSpec {
    double crop_fraction = 0.875;  // crop side as a fraction of the image side
    double p_hflip = 0.5;
    double p_vflip = 0.5;

    void validate() const {
        if (!(crop_fraction > 0.0) || crop_fraction > 1.0)
            throw std::invalid_argument("transform: crop_fraction must be in (0, 1]");
        if (!(p_hflip >= 0.0 && p_hflip <= 1.0) || !(p_vflip >= 0.0 && p_vflip <= 1.0))
            throw std::invalid_argument("transform: flip probabilities must be in [0, 1]");
    }
};

struct RecoverConfig {
    int candidates_per_label = 48;
    int top_k = 5;
    double gamma = 2.3;
    int weight_queries = 50;  // randomized views per candidate
    TransformSpec transform;
    uint64_t seed = 0;

    void validate() const {
        if (candidates_per_label < 1) throw std::invalid_argument("recover: candidates_per_label must be >= 1");
        if (top_k < 1 || top_k > candidates_per_label)
            throw std::invalid_argument("recover: top_k must be in [1, candidates_per_label]");
        if (!(gamma > 0.0)) throw std::invalid_argument("recover: gamma must be > 0");
        if (weight_queries < 1) throw std::invalid_argument("recover: weight_queries must be >= 1");
        transform.validate();
    }
};

struct RecoveredLabel {
    int label = -1;
    Tensorf images;                   // (top_k, C, H, W), gamma-corrected, in [0,1]
    std::vector<int> selected;        // candidate indices, best first
    std::vector<double> weights;      // weights of the selected candidates
    std::vector<double> all_weights;  // weight of every candidate
    bool all_zero = false;            // no randomized view of any candidate matched
};

// Pseudo-labels the public auxiliary corpus with black-box queries.
std::vector<int> label_auxiliary(const LabelOracle& oracle, const Tensorf& images);

// Pixel-wise x^gamma. Input must lie in [0,1]; gamma must be positive and finite.
Tensorf gamma_correct(const Tensorf& images, double gamma);

// Random square crop of side round(crop_fraction * side) at a uniform offset,
// bilinear-resized back to the full side, then horizontal / vertical flips.
// Draw order per call: row offset, column offset, hflip, vflip.
// img is (C, H, W) with H == W; the result stays in [0,1].
Tensorf random_transform(const Tensorf& img, const TransformSpec& spec, Rng& rng);

// Fraction of `queries` randomized views of `img` the oracle assigns to
// `label`. `rng` supplies the view sequence; an exact multiple of 1/queries.
double representative_weight(const LabelOracle& oracle, const Tensorf& img, int label, int queries,
                             const TransformSpec& spec, Rng& rng);

// Batched form over candidates (N, C, H, W). Candidate i draws its views
// from stream "cand/i" of Rng(seed), so results are independent of batching
// and identical to per-image evaluation with that stream.
std::vector<double> representative_weights(const LabelOracle& oracle, const Tensorf& candidates, int label,
                                           int queries, const TransformSpec& spec, uint64_t seed);

// Indices of the k largest weights; ties broken toward the smaller index.
std::vector<int> select_top_k(const std::vector<double>& weights, int k);

// Full per-label selection: raw sampler output in [-1,1] -> [0,1] -> gamma
// correction -> representative weights -> top-k. Deterministic in cfg.seed.
RecoveredLabel recover_label(const LabelOracle& oracle, const Tensorf& raw_samples, int label,
                             const RecoverConfig& cfg);

}  // namespace dmi::attack
