#include "oen/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace oen {

namespace {

void check_shapes(const ProbMap& pred, const LabelMap& target) {
    if (pred.height() != target.height || pred.width() != target.width) {
        throw std::invalid_argument("metrics: pred " + std::to_string(pred.height()) + "x" +
                                    std::to_string(pred.width()) + " does not match target " +
                                    std::to_string(target.height) + "x" + std::to_string(target.width));
    }
    if (pred.num_classes() != target.num_classes) {
        throw std::invalid_argument("metrics: pred covers " + std::to_string(pred.num_classes()) +
                                    " classes, target has " + std::to_string(target.num_classes));
    }
}

void check_same_maps(const std::vector<ProbMap>& maps) {
    if (maps.size() < 2) throw std::invalid_argument("prediction_variance: need at least 2 member maps");
    for (std::size_t m = 1; m < maps.size(); ++m) {
        if (!maps[m].values.same_shape(maps[0].values)) {
            throw std::invalid_argument("prediction_variance: member map " + std::to_string(m) +
                                        " shape mismatch");
        }
    }
}

}  // namespace

double dice_coefficient(const LabelMap& pred_labels, const LabelMap& target, int class_k) {
    if (pred_labels.height != target.height || pred_labels.width != target.width) {
        throw std::invalid_argument("dice_coefficient: shape mismatch");
    }
    if (class_k < 0 || class_k >= target.num_classes) {
        throw std::invalid_argument("dice_coefficient: class " + std::to_string(class_k) + " out of range");
    }
    std::int64_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < target.labels.size(); ++i) {
        const bool in_a = pred_labels.labels[i] == class_k;
        const bool in_b = target.labels[i] == class_k;
        a += in_a;
        b += in_b;
        both += in_a && in_b;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double brier_score(const ProbMap& pred, const LabelMap& target) {
    check_shapes(pred, target);
    const int classes = pred.num_classes();
    const std::int64_t n = target.size();
    double total = 0.0;
    for (int y = 0; y < target.height; ++y) {
        for (int x = 0; x < target.width; ++x) {
            const int truth = target.at(y, x);
            double pixel = 0.0;
            for (int k = 0; k < classes; ++k) {
                const double diff = pred.prob_of(k, y, x) - (truth == k ? 1.0 : 0.0);
                pixel += diff * diff;
            }
            total += pixel / static_cast<double>(classes);
        }
    }
    return total / static_cast<double>(n);
}

std::optional<double> stratified_brier_score(const ProbMap& pred, const LabelMap& target, int class_k) {
    check_shapes(pred, target);
    if (class_k < 0 || class_k >= target.num_classes) {
        throw std::invalid_argument("stratified_brier_score: class " + std::to_string(class_k) + " out of range");
    }
    double total = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < target.height; ++y) {
        for (int x = 0; x < target.width; ++x) {
            if (target.at(y, x) != class_k) continue;
            // one-vs-rest: the indicator is 1 on every pixel of P_k
            const double diff = pred.prob_of(class_k, y, x) - 1.0;
            total += diff * diff;
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return total / static_cast<double>(count);
}

double prediction_variance(const std::vector<ProbMap>& member_maps) {
    check_same_maps(member_maps);
    const std::int64_t entries = member_maps[0].values.size();
    const double inv_n = 1.0 / static_cast<double>(member_maps.size());
    double total = 0.0;
    for (std::int64_t i = 0; i < entries; ++i) {
        double mean = 0.0;
        for (const ProbMap& m : member_maps) mean += m.values[i];
        mean *= inv_n;
        double var = 0.0;
        for (const ProbMap& m : member_maps) {
            const double d = m.values[i] - mean;
            var += d * d;
        }
        total += var * inv_n;
    }
    return total / static_cast<double>(entries);
}

double prediction_variance(const std::vector<ProbMap>& member_maps, const LabelMap& target, bool foreground_only) {
    if (!foreground_only) return prediction_variance(member_maps);
    check_same_maps(member_maps);
    check_shapes(member_maps[0], target);
    const int channels = member_maps[0].channels();
    const std::int64_t plane = static_cast<std::int64_t>(target.height) * target.width;
    const double inv_n = 1.0 / static_cast<double>(member_maps.size());
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t px = 0; px < plane; ++px) {
        if (target.labels[static_cast<std::size_t>(px)] == 0) continue;
        for (int c = 0; c < channels; ++c) {
            const std::int64_t i = c * plane + px;
            double mean = 0.0;
            for (const ProbMap& m : member_maps) mean += m.values[i];
            mean *= inv_n;
            double var = 0.0;
            for (const ProbMap& m : member_maps) {
                const double d = m.values[i] - mean;
                var += d * d;
            }
            total += var * inv_n;
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

LabelMap argmax_labels(const ProbMap& probs) {
    LabelMap out(probs.height(), probs.width(), probs.num_classes());
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            if (probs.channels() == 1) {
                out.at(y, x) = probs.values.at3(0, y, x) >= 0.5 ? 1 : 0;
            } else {
                int best = 0;
                double best_p = probs.values.at3(0, y, x);
                for (int k = 1; k < probs.channels(); ++k) {
                    const double p = probs.values.at3(k, y, x);
                    if (p > best_p) {
                        best_p = p;
                        best = k;
                    }
                }
                out.at(y, x) = best;
            }
        }
    }
    return out;
}

ProbMap stitched_probmap(const SegNet& net, const Tensor& image, int patch_size, int stride) {
    if (image.rank() != 3) throw std::invalid_argument("stitched_probmap: image must be [C,H,W]");
    const int h = image.extent(1), w = image.extent(2);
    if (patch_size > h || patch_size > w) {
        throw std::invalid_argument("stitched_probmap: patch_size exceeds image extents");
    }
    if (stride < 1) throw std::invalid_argument("stitched_probmap: stride must be >= 1");

    auto positions = [&](int extent) {
        std::vector<int> pos;
        for (int o = 0;; o += stride) {
            if (o + patch_size >= extent) {
                pos.push_back(extent - patch_size);
                break;
            }
            pos.push_back(o);
        }
        return pos;
    };
    const std::vector<int> ys = positions(h);
    const std::vector<int> xs = positions(w);

    const int channels = image.extent(0);
    Tensor patch({channels, patch_size, patch_size});
    Tensor acc;      // [K,h,w]
    Tensor weight({1, h, w}, 0.0);
    for (int oy : ys) {
        for (int ox : xs) {
            for (int c = 0; c < channels; ++c) {
                for (int y = 0; y < patch_size; ++y) {
                    for (int x = 0; x < patch_size; ++x) {
                        patch.at3(c, y, x) = image.at3(c, oy + y, ox + x);
                    }
                }
            }
            const ProbMap probs = net.predict(patch);
            if (acc.empty()) acc = Tensor({probs.channels(), h, w}, 0.0);
            for (int k = 0; k < probs.channels(); ++k) {
                for (int y = 0; y < patch_size; ++y) {
                    for (int x = 0; x < patch_size; ++x) {
                        acc.at3(k, oy + y, ox + x) += probs.values.at3(k, y, x);
                    }
                }
            }
            for (int y = 0; y < patch_size; ++y) {
                for (int x = 0; x < patch_size; ++x) {
                    weight.at3(0, oy + y, ox + x) += 1.0;
                }
            }
        }
    }
    for (int k = 0; k < acc.extent(0); ++k) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                acc.at3(k, y, x) /= weight.at3(0, y, x);
            }
        }
    }
    return ProbMap(std::move(acc));
}

MetricsReport evaluate_from_member_maps(const std::vector<std::vector<ProbMap>>& maps,
                                        const std::vector<const LabelMap*>& targets, const EvalOptions& opts) {
    if (maps.empty() || maps.size() != targets.size()) {
        throw std::invalid_argument("evaluate_from_member_maps: empty input or image count mismatch");
    }
    const int members = static_cast<int>(maps[0].size());
    if (members < 1) throw std::invalid_argument("evaluate_from_member_maps: no member maps");
    MetricsReport report;
    report.num_members = members;

    for (std::size_t i = 0; i < maps.size(); ++i) {
        const LabelMap& target = *targets[i];
        const std::vector<ProbMap>& member_maps = maps[i];
        if (static_cast<int>(member_maps.size()) != members) {
            throw std::invalid_argument("evaluate_from_member_maps: ragged member maps");
        }
        ProbMap mean_map = member_maps[0];
        for (int m = 1; m < members; ++m) {
            for (std::int64_t j = 0; j < mean_map.values.size(); ++j) {
                mean_map.values[j] += member_maps[static_cast<std::size_t>(m)].values[j];
            }
        }
        for (std::int64_t j = 0; j < mean_map.values.size(); ++j) {
            mean_map.values[j] /= static_cast<double>(members);
        }

        ImageMetrics im;
        const LabelMap pred_labels = argmax_labels(mean_map);
        for (int k = 0; k < target.num_classes; ++k) {
            im.dice[k] = dice_coefficient(pred_labels, target, k);
            im.stratified_brier[k] = stratified_brier_score(mean_map, target, k);
        }
        im.brier = brier_score(mean_map, target);
        if (members >= 2) {
            im.prediction_variance = prediction_variance(member_maps, target, opts.variance_foreground_only);
        }
        report.per_image.push_back(std::move(im));
    }

    // aggregate: mean over images, stratified entries averaged where present
    ImageMetrics& agg = report.aggregate;
    const double inv = 1.0 / static_cast<double>(report.per_image.size());
    std::map<int, std::pair<double, int>> strat_acc;
    double var_acc = 0.0;
    int var_count = 0;
    for (const ImageMetrics& im : report.per_image) {
        for (const auto& [k, v] : im.dice) agg.dice[k] += v * inv;
        agg.brier += im.brier * inv;
        for (const auto& [k, v] : im.stratified_brier) {
            if (v.has_value()) {
                strat_acc[k].first += *v;
                strat_acc[k].second += 1;
            }
        }
        if (im.prediction_variance.has_value()) {
            var_acc += *im.prediction_variance;
            ++var_count;
        }
    }
    for (const auto& [k, acc] : strat_acc) {
        agg.stratified_brier[k] = acc.first / static_cast<double>(acc.second);
    }
    if (var_count > 0) agg.prediction_variance = var_acc / static_cast<double>(var_count);
    return report;
}

MetricsReport evaluate(const Ensemble& ens, const SynthDataset& ds, const std::string& split,
                       const EvalOptions& opts) {
    const std::vector<int>& indices = ds.split(split);
    if (indices.empty()) throw std::invalid_argument("evaluate: split '" + split + "' is empty");
    if (ens.members.empty()) throw std::invalid_argument("evaluate: ensemble has no members");

    std::vector<std::vector<ProbMap>> maps;
    std::vector<const LabelMap*> targets;
    for (int idx : indices) {
        std::vector<ProbMap> member_maps;
        member_maps.reserve(ens.members.size());
        for (const SegNet& net : ens.members) {
            member_maps.push_back(stitched_probmap(net, ds.images[static_cast<std::size_t>(idx)], opts.patch_size,
                                                   opts.stride));
        }
        maps.push_back(std::move(member_maps));
        targets.push_back(&ds.masks[static_cast<std::size_t>(idx)]);
    }
    MetricsReport report = evaluate_from_member_maps(maps, targets, opts);
    report.split = split;
    return report;
}

nlohmann::json image_metrics_to_json(const ImageMetrics& m) {
    nlohmann::json dice, strat;
    for (const auto& [k, v] : m.dice) dice[std::to_string(k)] = v;
    for (const auto& [k, v] : m.stratified_brier) {
        if (v.has_value()) {
            strat[std::to_string(k)] = *v;
        } else {
            strat[std::to_string(k)] = nullptr;  // absent-class marker
        }
    }
    nlohmann::json out{{"dice", dice}, {"brier", m.brier}, {"stratified_brier", strat}};
    if (m.prediction_variance.has_value()) out["prediction_variance"] = *m.prediction_variance;
    return out;
}

nlohmann::json report_to_json(const MetricsReport& report) {
    nlohmann::json images = nlohmann::json::array();
    for (const ImageMetrics& m : report.per_image) images.push_back(image_metrics_to_json(m));
    return {{"split", report.split},
            {"num_members", report.num_members},
            {"per_image", images},
            {"aggregate", image_metrics_to_json(report.aggregate)}};
}

}  // namespace oen
