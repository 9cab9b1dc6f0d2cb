#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmi/dataset.hpp"

namespace dmi::harness {

// Procedural glyph corpus: each class is a shape/palette combination drawn
// on a dark noisy background with jittered position, scale, thickness, and
// brightness. Classes come in confusable pairs (same shape, different
// palette), which keeps conditional generation non-trivial while remaining
// easily separable for a trained classifier.
struct GlyphCorpusSpec {
    int num_classes = 10;  // at most 10 built-in classes
    int per_class = 220;
    int image_size = 32;
    int channels = 3;
    uint64_t seed = 0;
    // Cousin-corpus knobs: related but not identical rendering distribution.
    double hue_shift = 0.0;    // blends each palette toward its counterpart
    double scale_shift = 0.0;  // relative glyph size change, e.g. +0.15
    // Per-image palette ambiguity: each image blends its palette toward the
    // counterpart by an amount drawn uniformly from [0, hue_jitter]. Values
    // past 0.5 make individual images resemble the paired class, so larger
    // settings raise the irreducible confusion between pair members.
    double hue_jitter = 0.0;
    // Class-name suffix; corpora sharing identities share names ("" = none).
    std::string name_suffix;
};

LabeledDataset make_glyph_corpus(const GlyphCorpusSpec& spec);

// Directory corpus: one subdirectory per class, PNG files inside. Images are
// center-cropped square, bilinear-resized to image_size, adapted to
// `channels` (replicate gray -> RGB, average RGB -> gray), scaled to [0,1].
// Class index = sorted subdirectory order; file order sorted within a class.
LabeledDataset load_dataset(const std::string& dir, int image_size, int channels);

// General bilinear resampling of a (C, H, W) image to (C, out_h, out_w).
Tensorf resize_bilinear(const Tensorf& img, int out_h, int out_w);

struct SplitResult {
    LabeledDataset target_train;
    LabeledDataset target_test;
    LabeledDataset aux;
    // Audit trail: source-row indices into the input corpora.
    std::vector<int> train_indices, test_indices, aux_indices;
    int aux_classes_removed = 0;  // nonoverlap: name-matching classes dropped
};

// mode "overlap": auxiliary = held-out samples of the private classes
// (sample-disjoint from train and test). mode "nonoverlap": auxiliary = the
// separate aux corpus minus any class whose name matches a private class.
SplitResult make_splits(const LabeledDataset& private_corpus, const LabeledDataset& aux_corpus,
                        const std::string& mode, int train_per_class, int test_per_class, uint64_t seed);

}  // namespace dmi::harness
