#include "oen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oen {

GenParams binary_imbalanced_profile() {
    GenParams p;
    p.profile = "binary_imbalanced";
    p.num_images = 32;
    p.channels = 2;
    p.num_classes = 2;
    p.lesion_frac_min = 0.01;
    p.lesion_frac_max = 0.05;
    p.distractor_frac_min = 0.01;
    p.distractor_frac_max = 0.05;
    return p;
}

GenParams multiclass_profile() {
    GenParams p;
    p.profile = "multiclass";
    p.num_images = 32;
    p.channels = 4;
    p.num_classes = 4;
    p.lesion_frac_min = 0.01;
    p.lesion_frac_max = 0.04;
    p.distractor_frac_min = 0.01;
    p.distractor_frac_max = 0.04;
    return p;
}

const std::vector<int>& SynthDataset::split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw std::invalid_argument("SynthDataset: unknown split '" + name + "'");
    return it->second;
}

namespace {

// smooth random field: coarse N(0,1) grid, bilinear upsampled
std::vector<double> smooth_field(int h, int w, double scale, Rng& rng) {
    const int gh = static_cast<int>(std::ceil(h / scale)) + 2;
    const int gw = static_cast<int>(std::ceil(w / scale)) + 2;
    std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
    for (double& v : grid) v = rng.normal();
    std::vector<double> field(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        const double gy = y / scale;
        const int y0 = static_cast<int>(gy);
        const double fy = gy - y0;
        for (int x = 0; x < w; ++x) {
            const double gx = x / scale;
            const int x0 = static_cast<int>(gx);
            const double fx = gx - x0;
            const double v00 = grid[static_cast<std::size_t>(y0) * gw + x0];
            const double v01 = grid[static_cast<std::size_t>(y0) * gw + x0 + 1];
            const double v10 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0];
            const double v11 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
            field[static_cast<std::size_t>(y) * w + x] =
                (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        }
    }
    return field;
}

void validate(const GenParams& p) {
    if (p.num_images < 3) throw std::invalid_argument("generate: need at least 3 images for train/val/test");
    if (p.height < 4 || p.width < 4) throw std::invalid_argument("generate: image extents must be >= 4");
    if (p.channels < 1) throw std::invalid_argument("generate: channels must be >= 1");
    if (p.num_classes < 2) throw std::invalid_argument("generate: num_classes must be >= 2");
    if (!(p.noise_sigma >= 0.0)) throw std::invalid_argument("generate: noise_sigma must be >= 0");
    if (p.edge_softness < 0.0 || p.edge_softness > 1.0) {
        throw std::invalid_argument("generate: edge_softness must lie in [0,1]");
    }
    if (!(p.train_frac > 0.0) || !(p.val_frac >= 0.0) || p.train_frac + p.val_frac >= 1.0) {
        throw std::invalid_argument("generate: split fractions must satisfy 0 < train, 0 <= val, train+val < 1");
    }
    const std::int64_t n = static_cast<std::int64_t>(p.height) * p.width;
    if (!(p.lesion_frac_min > 0.0) || p.lesion_frac_min > p.lesion_frac_max || p.lesion_frac_max >= 1.0) {
        throw std::invalid_argument("generate: infeasible lesion fraction range [" +
                                    std::to_string(p.lesion_frac_min) + "," + std::to_string(p.lesion_frac_max) + "]");
    }
    const std::int64_t lo = static_cast<std::int64_t>(std::ceil(p.lesion_frac_min * n));
    const std::int64_t hi = static_cast<std::int64_t>(std::floor(p.lesion_frac_max * n));
    if (lo < 1 || lo > hi) {
        throw std::invalid_argument("generate: infeasible lesion fraction range for " + std::to_string(n) +
                                    " pixels");
    }
    double per_class_frac = p.lesion_frac_max;
    if (p.distractor_frac_max > 0.0) {
        if (p.distractor_frac_min < 0.0 || p.distractor_frac_min > p.distractor_frac_max ||
            p.distractor_frac_max >= 1.0) {
            throw std::invalid_argument("generate: infeasible distractor fraction range");
        }
        if (p.channels < 2) {
            throw std::invalid_argument("generate: distractor blobs need at least 2 channels");
        }
        per_class_frac += p.distractor_frac_max;
    }
    if (per_class_frac * (p.num_classes - 1) >= 1.0) {
        throw std::invalid_argument("generate: infeasible-range: foreground classes cannot fit in the image");
    }
    if (p.field_scale < 2.0 || p.field_scale > std::min(p.height, p.width)) {
        throw std::invalid_argument("generate: infeasible-range: field_scale must lie in [2, min(H,W)]");
    }
}

}  // namespace

SynthDataset generate(const GenParams& params) {
    validate(params);
    const int h = params.height, w = params.width;
    const std::int64_t n_pixels = static_cast<std::int64_t>(h) * w;
    const std::int64_t count_lo = static_cast<std::int64_t>(std::ceil(params.lesion_frac_min * n_pixels));
    const std::int64_t count_hi = static_cast<std::int64_t>(std::floor(params.lesion_frac_max * n_pixels));

    Rng rng(params.seed);
    SynthDataset ds;
    ds.params = params;
    ds.images.reserve(static_cast<std::size_t>(params.num_images));
    ds.masks.reserve(static_cast<std::size_t>(params.num_images));

    for (int img = 0; img < params.num_images; ++img) {
        Tensor image({params.channels, h, w});
        for (int c = 0; c < params.channels; ++c) {
            const std::vector<double> bg = smooth_field(h, w, params.field_scale, rng);
            double* plane = image.data() + static_cast<std::size_t>(c) * n_pixels;
            for (std::int64_t i = 0; i < n_pixels; ++i) plane[i] = params.background_amp * bg[static_cast<std::size_t>(i)];
        }

        LabelMap mask(h, w, params.num_classes, 0);
        std::vector<char> assigned(static_cast<std::size_t>(n_pixels), 0);

        // thresholds a fresh smoothed field at an exact pixel count among the
        // still-unassigned pixels; pixels come back sorted by field value
        // (blob core first) so rim pixels can get softened bumps
        auto carve_blobs = [&](std::int64_t count, const std::string& what) {
            const std::vector<double> field = smooth_field(h, w, params.field_scale, rng);
            std::vector<std::int64_t> order;
            order.reserve(static_cast<std::size_t>(n_pixels));
            for (std::int64_t i = 0; i < n_pixels; ++i) {
                if (!assigned[static_cast<std::size_t>(i)]) order.push_back(i);
            }
            if (count > static_cast<std::int64_t>(order.size())) {
                throw std::invalid_argument("generate: infeasible-range: not enough unassigned pixels for " + what);
            }
            auto higher = [&field](std::int64_t a, std::int64_t b) {
                const double fa = field[static_cast<std::size_t>(a)], fb = field[static_cast<std::size_t>(b)];
                return fa != fb ? fa > fb : a < b;
            };
            std::partial_sort(order.begin(), order.begin() + count, order.end(), higher);
            order.resize(static_cast<std::size_t>(count));
            for (std::int64_t px : order) assigned[static_cast<std::size_t>(px)] = 1;
            return order;
        };

        // core pixels get the full amount; the rim (the edge_softness tail of
        // the field ranking) ramps linearly down to 25%
        auto bump = [&](const std::vector<std::int64_t>& pixels, int channel, double amount) {
            double* plane = image.data() + static_cast<std::size_t>(channel) * n_pixels;
            const std::int64_t count = static_cast<std::int64_t>(pixels.size());
            const std::int64_t rim = static_cast<std::int64_t>(std::llround(params.edge_softness * count));
            const std::int64_t core = count - rim;
            for (std::int64_t i = 0; i < count; ++i) {
                double scale = 1.0;
                if (i >= core && rim > 0) {
                    const double depth = static_cast<double>(i - core + 1) / static_cast<double>(rim);
                    scale = 1.0 - 0.75 * depth;
                }
                plane[pixels[static_cast<std::size_t>(i)]] += amount * scale;
            }
        };

        for (int k = 1; k < params.num_classes; ++k) {
            const double frac = rng.uniform(params.lesion_frac_min, params.lesion_frac_max);
            const std::int64_t count =
                std::clamp(static_cast<std::int64_t>(std::llround(frac * n_pixels)), count_lo, count_hi);
            const std::vector<std::int64_t> pixels = carve_blobs(count, "class " + std::to_string(k));
            for (std::int64_t px : pixels) mask.labels[static_cast<std::size_t>(px)] = k;

            const int primary = (k - 1) % params.channels;
            bump(pixels, primary, params.contrast);
            if (params.channels >= 2) {
                bump(pixels, k % params.channels, params.secondary_contrast);
            }
        }

        // distractors mimic each class on its primary channel but pull the
        // secondary channel the opposite way; labels stay 0
        if (params.distractor_frac_max > 0.0) {
            const std::int64_t d_lo = static_cast<std::int64_t>(std::ceil(params.distractor_frac_min * n_pixels));
            const std::int64_t d_hi = static_cast<std::int64_t>(std::floor(params.distractor_frac_max * n_pixels));
            for (int k = 1; k < params.num_classes; ++k) {
                const double frac = rng.uniform(params.distractor_frac_min, params.distractor_frac_max);
                const std::int64_t count = std::clamp(static_cast<std::int64_t>(std::llround(frac * n_pixels)),
                                                      d_lo, std::max(d_lo, d_hi));
                if (count == 0) continue;
                const std::vector<std::int64_t> pixels =
                    carve_blobs(count, "distractors of class " + std::to_string(k));
                bump(pixels, (k - 1) % params.channels, params.contrast);
                bump(pixels, k % params.channels, -params.secondary_contrast);
            }
        }

        for (std::int64_t i = 0; i < image.size(); ++i) {
            image[i] = std::clamp(image[i] + rng.normal(0.0, params.noise_sigma), -6.0, 6.0);
        }
        if (!image.all_finite()) throw std::runtime_error("generate: non-finite image values");

        ds.images.push_back(std::move(image));
        ds.masks.push_back(std::move(mask));
    }

    // shuffled split, sorted within each split
    std::vector<int> idx(static_cast<std::size_t>(params.num_images));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = params.num_images - 1; i > 0; --i) {
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    }
    int n_train = static_cast<int>(std::llround(params.train_frac * params.num_images));
    int n_val = static_cast<int>(std::llround(params.val_frac * params.num_images));
    n_train = std::max(1, std::min(n_train, params.num_images - 2));
    n_val = std::max(1, std::min(n_val, params.num_images - n_train - 1));
    std::vector<int> train(idx.begin(), idx.begin() + n_train);
    std::vector<int> val(idx.begin() + n_train, idx.begin() + n_train + n_val);
    std::vector<int> test(idx.begin() + n_train + n_val, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    std::sort(test.begin(), test.end());
    ds.splits["train"] = std::move(train);
    ds.splits["val"] = std::move(val);
    ds.splits["test"] = std::move(test);

    // every class present in every training image by construction; verify
    for (int i : ds.splits["train"]) {
        std::vector<char> present(static_cast<std::size_t>(params.num_classes), 0);
        for (int label : ds.masks[static_cast<std::size_t>(i)].labels) present[static_cast<std::size_t>(label)] = 1;
        for (int k = 0; k < params.num_classes; ++k) {
            if (!present[static_cast<std::size_t>(k)]) {
                throw std::runtime_error("generate: class " + std::to_string(k) + " missing from training image " +
                                         std::to_string(i));
            }
        }
    }
    return ds;
}

PatchSampler::PatchSampler(const SynthDataset& ds, const std::string& split, int patch_size, double foreground_prob)
    : ds_(ds), patch_size_(patch_size), foreground_prob_(foreground_prob) {
    if (foreground_prob < 0.0 || foreground_prob > 1.0) {
        throw std::invalid_argument("PatchSampler: foreground_prob must lie in [0,1]");
    }
    const std::vector<int>& indices = ds.split(split);
    if (indices.empty()) throw std::invalid_argument("PatchSampler: split '" + split + "' is empty");
    if (patch_size < 1 || patch_size > ds.params.height || patch_size > ds.params.width) {
        throw std::invalid_argument("PatchSampler: patch_size " + std::to_string(patch_size) +
                                    " exceeds image extents " + std::to_string(ds.params.height) + "x" +
                                    std::to_string(ds.params.width));
    }
    std::vector<std::vector<Candidate>> per_class(static_cast<std::size_t>(ds.params.num_classes));
    for (int img : indices) {
        const LabelMap& mask = ds.masks[static_cast<std::size_t>(img)];
        for (int y = 0; y < mask.height; ++y) {
            for (int x = 0; x < mask.width; ++x) {
                per_class[static_cast<std::size_t>(mask.at(y, x))].push_back({img, y, x});
            }
        }
    }
    bg_candidates_ = std::move(per_class[0]);
    for (int k = 1; k < ds.params.num_classes; ++k) {
        if (!per_class[static_cast<std::size_t>(k)].empty()) {
            fg_candidates_.push_back(std::move(per_class[static_cast<std::size_t>(k)]));
        }
    }
    if (foreground_prob_ > 0.0 && fg_candidates_.empty()) {
        throw std::runtime_error("PatchSampler: no foreground candidates in split '" + split +
                                 "' with foreground_prob > 0");
    }
    if (foreground_prob_ < 1.0 && bg_candidates_.empty()) {
        throw std::runtime_error("PatchSampler: no background candidates in split '" + split +
                                 "' with foreground_prob < 1");
    }
}

Patch PatchSampler::draw(Rng& rng) const {
    const bool foreground = rng.uniform() < foreground_prob_;
    const Candidate* c;
    if (foreground) {
        const auto& pool = fg_candidates_[static_cast<std::size_t>(rng.uniform_int(
            static_cast<int>(fg_candidates_.size())))];
        c = &pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
    } else {
        c = &bg_candidates_[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(bg_candidates_.size())))];
    }
    const Tensor& image = ds_.images[static_cast<std::size_t>(c->image)];
    const LabelMap& mask = ds_.masks[static_cast<std::size_t>(c->image)];
    const int h = ds_.params.height, w = ds_.params.width;
    const int oy = std::clamp(c->y - patch_size_ / 2, 0, h - patch_size_);
    const int ox = std::clamp(c->x - patch_size_ / 2, 0, w - patch_size_);

    Patch p;
    p.image = Tensor({ds_.params.channels, patch_size_, patch_size_});
    p.mask = LabelMap(patch_size_, patch_size_, ds_.params.num_classes);
    p.center_y = c->y - oy;
    p.center_x = c->x - ox;
    for (int ch = 0; ch < ds_.params.channels; ++ch) {
        for (int y = 0; y < patch_size_; ++y) {
            for (int x = 0; x < patch_size_; ++x) {
                p.image.at3(ch, y, x) = image.at3(ch, oy + y, ox + x);
            }
        }
    }
    for (int y = 0; y < patch_size_; ++y) {
        for (int x = 0; x < patch_size_; ++x) {
            p.mask.at(y, x) = mask.at(oy + y, ox + x);
        }
    }
    return p;
}

std::vector<std::pair<Tensor, LabelMap>> sample_patches(const SynthDataset& ds, const std::string& split,
                                                        int patch_size, double foreground_prob, int count,
                                                        std::uint64_t seed) {
    PatchSampler sampler(ds, split, patch_size, foreground_prob);
    Rng rng(seed);
    std::vector<std::pair<Tensor, LabelMap>> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Patch p = sampler.draw(rng);
        out.emplace_back(std::move(p.image), std::move(p.mask));
    }
    return out;
}

}  // namespace oen
