#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dmi/core/tensor.hpp"
#include "dmi/dataset.hpp"
#include "dmi/oracle.hpp"

namespace dmi {

// Named tensors covering everything a checkpoint must persist (weights,
// batch-norm running statistics, normalization constants, recorded test
// accuracy). Pointers stay valid for the model's lifetime.
using StateRefs = std::vector<std::pair<std::string, Tensorf*>>;

struct ClassifierTrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    uint64_t seed = 0;
    // Invoked after each epoch (1-based) with the live checkpoint state, so
    // callers can write epoch-cadence snapshots. The recorded-accuracy meta
    // tensor is only final after training completes.
    std::function<void(int, const StateRefs&)> on_epoch;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("classifier: epochs must be >= 1");
        if (batch_size < 2) throw std::invalid_argument("classifier: batch_size must be >= 2 (batch statistics)");
        if (!(lr > 0.0)) throw std::invalid_argument("classifier: lr must be > 0");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("classifier: weight_decay must be >= 0");
    }
};

// Black-box victim: four conv -> batch-norm -> max-pool -> rectifier blocks
// followed by two fully connected layers. Inference mutates internal caches,
// so a model instance must not be queried from multiple threads at once.
class TargetModel final : public LabelOracle {
public:
    TargetModel(int image_size, int channels, std::vector<std::string> class_names);
    ~TargetModel() override;
    TargetModel(TargetModel&&) noexcept;
    TargetModel& operator=(TargetModel&&) noexcept;
    TargetModel(const TargetModel&) = delete;
    TargetModel& operator=(const TargetModel&) = delete;

    // Trains on ground-truth labels; records accuracy on the held-out test
    // split. Throws std::runtime_error if that accuracy fails to beat 1.5x
    // chance (an oracle that weak certifies nothing).
    static TargetModel train(const LabeledDataset& train_set, const LabeledDataset& test_set,
                             const ClassifierTrainConfig& cfg);

    int num_classes() const override;
    std::vector<int> predict_label(const Tensorf& images) const override;

    double test_accuracy() const;
    const std::vector<std::string>& class_names() const;
    int image_size() const;
    int channels() const;
    std::string arch_id() const;
    StateRefs state();

private:
    struct Impl;
    mutable std::unique_ptr<Impl> impl_;
};

// White-box evaluation model: a small residual network, architecturally
// disjoint from the target, exposing logits and penultimate global-average-
// pool features. Used only for scoring recovered images, never by the attack.
class EvalModel {
public:
    EvalModel(int image_size, int channels, std::vector<std::string> class_names);
    ~EvalModel();
    EvalModel(EvalModel&&) noexcept;
    EvalModel& operator=(EvalModel&&) noexcept;
    EvalModel(const EvalModel&) = delete;
    EvalModel& operator=(const EvalModel&) = delete;

    static EvalModel train(const LabeledDataset& train_set, const LabeledDataset& test_set,
                           const ClassifierTrainConfig& cfg);

    int num_classes() const;
    Tensorf logits(const Tensorf& images) const;                    // (N, K)
    std::vector<std::vector<int>> predict_topn(const Tensorf& images, int n) const;
    Tensorf penultimate_features(const Tensorf& images) const;      // (N, F)
    int feature_dim() const;
    // Stage activations (post-rectifier, increasing depth) for perceptual
    // distance; spatial resolution halves between consecutive entries.
    std::vector<Tensorf> feature_stack(const Tensorf& images) const;

    double test_accuracy() const;
    const std::vector<std::string>& class_names() const;
    int image_size() const;
    int channels() const;
    std::string arch_id() const;
    StateRefs state();

private:
    struct Impl;
    mutable std::unique_ptr<Impl> impl_;
};

double classification_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

}  // namespace dmi
