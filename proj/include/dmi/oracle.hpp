#pragma once

#include <vector>

#include "dmi/core/tensor.hpp"

namespace dmi {

// The only query surface the attack is allowed to compile against: hard
// labels out, images in [0,1] in. No logits, scores, or gradients.
class LabelOracle {
public:
    virtual ~LabelOracle() = default;
    virtual int num_classes() const = 0;
    virtual std::vector<int> predict_label(const Tensorf& images) const = 0;
};

}  // namespace dmi
