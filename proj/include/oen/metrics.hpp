#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "oen/trainer.hpp"
#include "oen/types.hpp"

namespace oen {

struct EvalOptions {
    int patch_size = 16;
    int stride = 8;
    bool variance_foreground_only = false;  // restrict Fig.3-style variance to lesion pixels
};

// 2|A n B| / (|A| + |B|) over pixels of class_k; 1.0 when both masks are empty.
double dice_coefficient(const LabelMap& pred_labels, const LabelMap& target, int class_k);

// (1/N) sum_pixels (1/|C|) sum_k (p_k - 1[y=k])^2. Keeps the printed 1/|C|
// normalization, which halves binary values relative to the classic
// two-class convention.
double brier_score(const ProbMap& pred, const LabelMap& target);

// Brier restricted to pixels with ground truth k, one-vs-rest; nullopt when
// the class is absent from the target.
std::optional<double> stratified_brier_score(const ProbMap& pred, const LabelMap& target, int class_k);

// Across-member population variance (divisor N), averaged over channels and
// pixels; the ensemble-diversity measure.
double prediction_variance(const std::vector<ProbMap>& member_maps);
// foreground_only restricts the average to pixels whose target label is > 0.
double prediction_variance(const std::vector<ProbMap>& member_maps, const LabelMap& target, bool foreground_only);

struct ImageMetrics {
    std::map<int, double> dice;
    double brier = 0.0;
    std::map<int, std::optional<double>> stratified_brier;
    std::optional<double> prediction_variance;
};

struct MetricsReport {
    std::vector<ImageMetrics> per_image;
    ImageMetrics aggregate;  // per-image mean; absent stratified entries skipped
    int num_members = 0;
    std::string split;
};

LabelMap argmax_labels(const ProbMap& probs);

// Full-image sliding-window inference with uniform overlap averaging.
ProbMap stitched_probmap(const SegNet& net, const Tensor& image, int patch_size, int stride);

// Metrics from already-computed per-member full-image maps; maps[i][m] is
// member m's map for image i. Lets pool evaluations reuse member maps, which
// is exact because the ensemble map is the member mean.
MetricsReport evaluate_from_member_maps(const std::vector<std::vector<ProbMap>>& maps,
                                        const std::vector<const LabelMap*>& targets, const EvalOptions& opts);

MetricsReport evaluate(const Ensemble& ens, const SynthDataset& ds, const std::string& split,
                       const EvalOptions& opts = {});

nlohmann::json image_metrics_to_json(const ImageMetrics& m);
nlohmann::json report_to_json(const MetricsReport& report);

}  // namespace oen
