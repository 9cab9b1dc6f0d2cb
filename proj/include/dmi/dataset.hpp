#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dmi/core/tensor.hpp"

namespace dmi {

// Images in [0,1], shape (N, C, H, W); labels are class indices into
// class_names. The classifier trainers consume ground-truth labels; the
// diffusion trainer must only ever see target-predicted labels.
struct LabeledDataset {
    Tensorf images;
    std::vector<int> labels;
    std::vector<std::string> class_names;

    int size() const { return images.empty() ? 0 : images.dim(0); }
    int num_classes() const { return static_cast<int>(class_names.size()); }

    void validate() const {
        if (size() != static_cast<int>(labels.size()))
            throw std::invalid_argument("dataset: image/label count mismatch");
        for (int l : labels)
            if (l < 0 || l >= num_classes()) throw std::invalid_argument("dataset: label out of range");
    }

    LabeledDataset subset(const std::vector<int>& idx) const {
        LabeledDataset out;
        out.class_names = class_names;
        if (idx.empty()) return out;
        const int C = images.dim(1), H = images.dim(2), W = images.dim(3);
        out.images.resize({static_cast<int>(idx.size()), C, H, W});
        out.labels.resize(idx.size());
        const int64_t per = static_cast<int64_t>(C) * H * W;
        for (size_t i = 0; i < idx.size(); ++i) {
            std::copy(images.data() + idx[i] * per, images.data() + (idx[i] + 1) * per,
                      out.images.data() + static_cast<int64_t>(i) * per);
            out.labels[i] = labels[static_cast<size_t>(idx[i])];
        }
        return out;
    }
};

}  // namespace dmi
