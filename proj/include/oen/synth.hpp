#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "oen/rng.hpp"
#include "oen/tensor.hpp"
#include "oen/types.hpp"

namespace oen {

// Parameters of the synthetic 2D lesion-segmentation benchmark. Lesions and
// distractors are thresholded smoothed random fields (irregular boundaries).
// Class k bumps its primary channel by `contrast` and its secondary channel
// by `secondary_contrast`; distractor blobs keep label 0 but bump a primary
// channel identically while pulling the secondary channel the other way, so
// segmentation requires combining cues rather than thresholding one channel.
struct GenParams {
    std::string profile;  // preset tag, informational
    int num_images = 32;
    int height = 64;
    int width = 64;
    int channels = 2;
    int num_classes = 2;
    double lesion_frac_min = 0.01;  // per foreground class, fraction of pixels
    double lesion_frac_max = 0.05;
    double distractor_frac_min = 0.01;  // label-0 confusers; 0 disables them
    double distractor_frac_max = 0.05;
    double field_scale = 8.0;       // correlation length in pixels (lesion size)
    double background_amp = 0.5;
    double contrast = 1.2;
    double secondary_contrast = 0.7;
    // fraction of each blob (its lowest-field rim) whose bump amplitude ramps
    // down toward the boundary; ambiguous edges keep Dice away from 1
    double edge_softness = 0.4;
    double noise_sigma = 0.25;
    double train_frac = 0.70;
    double val_frac = 0.15;
    std::uint64_t seed = 1;
};

// The paper's two task settings at desk scale.
GenParams binary_imbalanced_profile();  // 2 classes, 2 channels, fg prob 0.9 sampling
GenParams multiclass_profile();         // 4 classes, 4 channels, balanced sampling

struct SynthDataset {
    std::vector<Tensor> images;   // [channels,H,W], intensities in [-6,6]
    std::vector<LabelMap> masks;
    std::map<std::string, std::vector<int>> splits;  // train/val/test
    GenParams params;

    const std::vector<int>& split(const std::string& name) const;
};

SynthDataset generate(const GenParams& params);

struct Patch {
    Tensor image;
    LabelMap mask;
    // drawn center pixel in patch coordinates (windows are clamped inside the
    // image, so this is not always the geometric center)
    int center_y = 0;
    int center_x = 0;
};

// Class-biased patch sampling: with probability foreground_prob the patch
// center is a uniformly drawn foreground pixel of a uniformly drawn present
// foreground class, else a uniformly drawn background pixel. Patch windows
// are clamped inside the image.
class PatchSampler {
public:
    PatchSampler(const SynthDataset& ds, const std::string& split, int patch_size, double foreground_prob);
    Patch draw(Rng& rng) const;

private:
    struct Candidate {
        int image, y, x;
    };
    const SynthDataset& ds_;
    int patch_size_;
    double foreground_prob_;
    std::vector<std::vector<Candidate>> fg_candidates_;  // per present fg class
    std::vector<Candidate> bg_candidates_;
};

std::vector<std::pair<Tensor, LabelMap>> sample_patches(const SynthDataset& ds, const std::string& split,
                                                        int patch_size, double foreground_prob, int count,
                                                        std::uint64_t seed);

}  // namespace oen
