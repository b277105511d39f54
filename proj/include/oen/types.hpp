#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "oen/tensor.hpp"

namespace oen {

// Integer ground-truth mask, labels in [0, num_classes).
struct LabelMap {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<int> labels;

    LabelMap() = default;
    LabelMap(int h, int w, int classes, int fill = 0)
        : height(h), width(w), num_classes(classes), labels(static_cast<std::size_t>(h) * w, fill) {}

    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

// Per-pixel class-probability volume: [K,H,W] for a softmax head, or [1,H,W]
// for a sigmoid head (channel 0 holds p(class 1), expanded to (1-p, p) on
// demand).
struct ProbMap {
    Tensor values;

    ProbMap() = default;
    explicit ProbMap(Tensor v) : values(std::move(v)) {
        if (values.rank() != 3) {
            throw std::invalid_argument("ProbMap: expected [K,H,W], got " + values.shape_str());
        }
    }

    int channels() const { return values.extent(0); }
    int height() const { return values.extent(1); }
    int width() const { return values.extent(2); }
    // number of classes represented (a 1-channel sigmoid map covers 2)
    int num_classes() const { return channels() == 1 ? 2 : channels(); }

    double prob_of(int class_k, int y, int x) const {
        if (channels() == 1) {
            const double p = values.at3(0, y, x);
            return class_k == 1 ? p : 1.0 - p;
        }
        return values.at3(class_k, y, x);
    }
};

}  // namespace oen
