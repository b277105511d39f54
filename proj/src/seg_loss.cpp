#include "oen/seg_loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace oen {

namespace {

void check_pred_target(const Tensor& pred, const LabelMap& target) {
    if (pred.rank() != 3) throw std::invalid_argument("segmentation loss: pred must be [K,H,W], got " + pred.shape_str());
    const int k = pred.extent(0);
    if (pred.extent(1) != target.height || pred.extent(2) != target.width) {
        throw std::invalid_argument("segmentation loss: pred " + std::to_string(pred.extent(1)) + "x" +
                                    std::to_string(pred.extent(2)) + " does not match target " +
                                    std::to_string(target.height) + "x" + std::to_string(target.width));
    }
    const int expected_classes = k == 1 ? 2 : k;
    if (target.num_classes != expected_classes) {
        throw std::invalid_argument("segmentation loss: target has " + std::to_string(target.num_classes) +
                                    " classes, pred expects " + std::to_string(expected_classes));
    }
    for (int label : target.labels) {
        if (label < 0 || label >= target.num_classes) {
            throw std::invalid_argument("segmentation loss: label " + std::to_string(label) + " out of range [0," +
                                        std::to_string(target.num_classes) + ")");
        }
    }
}

// classes scored by the Dice mean, paired with their pred channel
std::vector<std::pair<int, int>> dice_classes(int pred_channels, const SegLossOptions& opts) {
    std::vector<std::pair<int, int>> out;
    if (pred_channels == 1) {
        out.emplace_back(1, 0);  // foreground class via the single channel
        return out;
    }
    for (int k = 0; k < pred_channels; ++k) {
        if (opts.exclude_background && k == 0) continue;
        out.emplace_back(k, k);
    }
    return out;
}

struct DiceClassStats {
    int class_k = 0;
    int channel = 0;
    double overlap = 0.0;   // sum p*g
    double pred_sq = 0.0;   // sum p^2
    double target_sq = 0.0; // sum g^2 == |class pixels|
    double coeff = 0.0;     // (2*overlap + s) / (pred_sq + target_sq + s)
};

std::vector<DiceClassStats> dice_stats(const Tensor& pred, const LabelMap& target, const SegLossOptions& opts) {
    const std::int64_t plane = static_cast<std::int64_t>(target.height) * target.width;
    std::vector<DiceClassStats> stats;
    for (auto [class_k, channel] : dice_classes(pred.extent(0), opts)) {
        DiceClassStats s;
        s.class_k = class_k;
        s.channel = channel;
        const double* p = pred.data() + static_cast<std::size_t>(channel) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            const double g = target.labels[static_cast<std::size_t>(i)] == class_k ? 1.0 : 0.0;
            s.overlap += p[i] * g;
            s.pred_sq += p[i] * p[i];
            s.target_sq += g;
        }
        s.coeff = (2.0 * s.overlap + opts.smooth) / (s.pred_sq + s.target_sq + opts.smooth);
        stats.push_back(s);
    }
    return stats;
}

}  // namespace

double soft_dice_loss_value(const Tensor& pred, const LabelMap& target, const SegLossOptions& opts) {
    check_pred_target(pred, target);
    const std::vector<DiceClassStats> stats = dice_stats(pred, target, opts);
    double mean_coeff = 0.0;
    for (const DiceClassStats& s : stats) mean_coeff += s.coeff;
    return 1.0 - mean_coeff / static_cast<double>(stats.size());
}

LossValue soft_dice_loss(Var pred, const LabelMap& target, const SegLossOptions& opts) {
    GradTape& tape = *pred.tape;
    check_pred_target(pred.value(), target);
    const std::vector<DiceClassStats> stats = dice_stats(pred.value(), target, opts);

    LossValue out;
    double mean_coeff = 0.0;
    for (const DiceClassStats& s : stats) {
        mean_coeff += s.coeff;
        out.per_class[s.class_k] = 1.0 - s.coeff;
    }
    const double loss = 1.0 - mean_coeff / static_cast<double>(stats.size());

    const int pred_id = pred.id;
    const LabelMap target_copy = target;
    out.value = tape.node(
        Tensor({1}, loss), {pred_id},
        [pred_id, target_copy, opts](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
            if (!t.requires_grad(pred_id)) return;
            const Tensor& p = t.value_of(pred_id);
            const std::vector<DiceClassStats> stats = dice_stats(p, target_copy, opts);
            const double inv_m = 1.0 / static_cast<double>(stats.size());
            const std::int64_t plane = static_cast<std::int64_t>(target_copy.height) * target_copy.width;
            Tensor& dp = GradTape::grad_slot(grads, pred_id, p.shape());
            for (const DiceClassStats& s : stats) {
                const double den = s.pred_sq + s.target_sq + opts.smooth;
                const double* pc = p.data() + static_cast<std::size_t>(s.channel) * plane;
                double* dc = dp.data() + static_cast<std::size_t>(s.channel) * plane;
                // d(1 - D)/dp_i = -(2 g_i - 2 D p_i)/den
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double g = target_copy.labels[static_cast<std::size_t>(i)] == s.class_k ? 1.0 : 0.0;
                    dc[i] += up[0] * inv_m * (-2.0) * (g - s.coeff * pc[i]) / den;
                }
            }
        });
    return out;
}

namespace {

double clamped(double p, double eps) { return std::min(std::max(p, eps), 1.0 - eps); }

// accumulates -log p(true) and per-class sums; grad filled when non-null
double ce_forward(const Tensor& pred, const LabelMap& target, const SegLossOptions& opts,
                  std::map<int, double>* per_class, Tensor* grad, double upstream) {
    const std::int64_t plane = static_cast<std::int64_t>(target.height) * target.width;
    const int channels = pred.extent(0);
    const double inv_n = 1.0 / static_cast<double>(plane);
    std::map<int, double> class_sum;
    std::map<int, std::int64_t> class_count;
    double total = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
        const int label = target.labels[static_cast<std::size_t>(i)];
        double p_true;
        if (channels == 1) {
            const double p1 = pred[i];
            p_true = label == 1 ? p1 : 1.0 - p1;
        } else {
            p_true = pred[static_cast<std::size_t>(label) * plane + i];
        }
        const double pc = clamped(p_true, opts.ce_clamp);
        const double term = -std::log(pc);
        total += term;
        if (per_class != nullptr) {
            class_sum[label] += term;
            class_count[label] += 1;
        }
        if (grad != nullptr && p_true > opts.ce_clamp && p_true < 1.0 - opts.ce_clamp) {
            const double d = -upstream * inv_n / pc;
            if (channels == 1) {
                (*grad)[i] += label == 1 ? d : -d;
            } else {
                (*grad)[static_cast<std::size_t>(label) * plane + i] += d;
            }
        }
    }
    if (per_class != nullptr) {
        for (auto& [k, s] : class_sum) (*per_class)[k] = s / static_cast<double>(class_count[k]);
    }
    return total * inv_n;
}

}  // namespace

double cross_entropy_loss_value(const Tensor& pred, const LabelMap& target, const SegLossOptions& opts) {
    check_pred_target(pred, target);
    return ce_forward(pred, target, opts, nullptr, nullptr, 0.0);
}

LossValue cross_entropy_loss(Var pred, const LabelMap& target, const SegLossOptions& opts) {
    GradTape& tape = *pred.tape;
    check_pred_target(pred.value(), target);
    LossValue out;
    const double loss = ce_forward(pred.value(), target, opts, &out.per_class, nullptr, 0.0);
    const int pred_id = pred.id;
    const LabelMap target_copy = target;
    out.value = tape.node(Tensor({1}, loss), {pred_id},
                          [pred_id, target_copy, opts](GradTape& t, const Tensor& up, std::vector<Tensor>& grads) {
                              if (!t.requires_grad(pred_id)) return;
                              const Tensor& p = t.value_of(pred_id);
                              Tensor& dp = GradTape::grad_slot(grads, pred_id, p.shape());
                              ce_forward(p, target_copy, opts, nullptr, &dp, up[0]);
                          });
    return out;
}

}  // namespace oen
