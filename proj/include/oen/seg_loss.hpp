#pragma once

#include <map>

#include "oen/tape.hpp"
#include "oen/types.hpp"

namespace oen {

struct SegLossOptions {
    double smooth = 1e-6;             // soft Dice smoothing, numerator and denominator
    bool exclude_background = false;  // drop class 0 from the Dice mean (softmax heads)
    double ce_clamp = 1e-12;          // cross-entropy probability clamp
};

struct LossValue {
    Var value;
    std::map<int, double> per_class;
};

// 1 - mean_k (2 sum p_k g_k + s) / (sum p_k^2 + sum g_k^2 + s) over the
// included classes. pred is [K,H,W] ([1,H,W] sigmoid maps score the
// foreground class against labels {0,1}). Differentiable w.r.t. pred.
LossValue soft_dice_loss(Var pred, const LabelMap& target, const SegLossOptions& opts = {});
double soft_dice_loss_value(const Tensor& pred, const LabelMap& target, const SegLossOptions& opts = {});

// mean over pixels of -log p(true class), probabilities clamped to
// [ce_clamp, 1 - ce_clamp].
LossValue cross_entropy_loss(Var pred, const LabelMap& target, const SegLossOptions& opts = {});
double cross_entropy_loss_value(const Tensor& pred, const LabelMap& target, const SegLossOptions& opts = {});

}  // namespace oen
