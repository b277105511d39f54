#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "oen/synth.hpp"

using namespace oen;

TEST_CASE("generation is deterministic under a fixed seed") {
    GenParams p = binary_imbalanced_profile();
    p.num_images = 6;
    p.height = p.width = 32;
    p.seed = 1;
    const SynthDataset a = generate(p);
    const SynthDataset b = generate(p);
    REQUIRE(a.images.size() == b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        for (std::int64_t j = 0; j < a.images[i].size(); ++j) CHECK(a.images[i][j] == b.images[i][j]);
        CHECK(a.masks[i].labels == b.masks[i].labels);
    }
    CHECK(a.splits == b.splits);

    GenParams p2 = p;
    p2.seed = 2;
    const SynthDataset c = generate(p2);
    bool any_diff = false;
    for (std::int64_t j = 0; j < a.images[0].size() && !any_diff; ++j) {
        if (a.images[0][j] != c.images[0][j]) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("per-class foreground fraction falls in the configured range") {
    GenParams p = binary_imbalanced_profile();
    p.num_images = 8;
    p.height = p.width = 48;
    p.lesion_frac_min = 0.01;
    p.lesion_frac_max = 0.05;
    p.seed = 3;
    const SynthDataset ds = generate(p);
    for (const LabelMap& mask : ds.masks) {
        std::int64_t fg = 0;
        for (int l : mask.labels) fg += l == 1;
        const double frac = static_cast<double>(fg) / static_cast<double>(mask.size());
        CHECK(frac >= 0.01);
        CHECK(frac <= 0.05);
    }
}

TEST_CASE("multiclass profile emits exactly the configured labels") {
    GenParams p = multiclass_profile();
    p.num_images = 4;
    p.height = p.width = 32;
    p.seed = 5;
    const SynthDataset ds = generate(p);
    std::set<int> seen;
    for (const LabelMap& mask : ds.masks) {
        for (int l : mask.labels) seen.insert(l);
    }
    CHECK(seen == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("images are finite and inside the documented range") {
    GenParams p = multiclass_profile();
    p.num_images = 4;
    p.height = p.width = 32;
    p.seed = 7;
    const SynthDataset ds = generate(p);
    for (const Tensor& img : ds.images) {
        CHECK(img.all_finite());
        for (std::int64_t i = 0; i < img.size(); ++i) {
            CHECK(img[i] >= -6.0);
            CHECK(img[i] <= 6.0);
        }
    }
}

TEST_CASE("splits are disjoint and cover all indices") {
    GenParams p = binary_imbalanced_profile();
    p.num_images = 10;
    p.height = p.width = 32;
    p.seed = 9;
    const SynthDataset ds = generate(p);
    std::set<int> all;
    std::size_t total = 0;
    for (const auto& [name, idx] : ds.splits) {
        total += idx.size();
        for (int i : idx) all.insert(i);
    }
    CHECK(total == 10);
    CHECK(all.size() == 10);
    CHECK(ds.split("train").size() >= 1);
    CHECK(ds.split("val").size() >= 1);
    CHECK(ds.split("test").size() >= 1);
    CHECK_THROWS_AS(ds.split("holdout"), std::invalid_argument);
}

TEST_CASE("every training image contains every class") {
    GenParams p = multiclass_profile();
    p.num_images = 6;
    p.height = p.width = 32;
    p.seed = 11;
    const SynthDataset ds = generate(p);
    for (int i : ds.split("train")) {
        std::set<int> present(ds.masks[static_cast<std::size_t>(i)].labels.begin(),
                              ds.masks[static_cast<std::size_t>(i)].labels.end());
        CHECK(present == std::set<int>{0, 1, 2, 3});
    }
}

TEST_CASE("infeasible generation parameters fail loudly") {
    GenParams p = binary_imbalanced_profile();
    p.num_images = 4;
    p.height = p.width = 16;

    GenParams tiny = p;
    tiny.lesion_frac_min = tiny.lesion_frac_max = 1e-6;  // below one pixel
    CHECK_THROWS_AS(generate(tiny), std::invalid_argument);

    GenParams huge = p;
    huge.num_classes = 4;
    huge.channels = 4;
    huge.lesion_frac_min = 0.3;
    huge.lesion_frac_max = 0.4;  // 3 classes x 0.4 cannot fit
    CHECK_THROWS_AS(generate(huge), std::invalid_argument);

    GenParams blob = p;
    blob.field_scale = 64.0;  // blob scale larger than the image
    CHECK_THROWS_AS(generate(blob), std::invalid_argument);
}

TEST_CASE("patch sampling: degenerate probabilities and sizes") {
    GenParams p = binary_imbalanced_profile();
    p.num_images = 6;
    p.height = p.width = 32;
    p.seed = 13;
    const SynthDataset ds = generate(p);

    // foreground_prob 0: every drawn patch center is background
    {
        PatchSampler sampler(ds, "train", 8, 0.0);
        Rng rng(21);
        for (int i = 0; i < 50; ++i) {
            const Patch patch = sampler.draw(rng);
            CHECK(patch.mask.at(patch.center_y, patch.center_x) == 0);
        }
    }

    // patch covering the full image equals the image
    const auto full = sample_patches(ds, "train", 32, 0.5, 5, 23);
    for (const auto& [img, mask] : full) {
        bool found = false;
        for (int idx : ds.split("train")) {
            const Tensor& src = ds.images[static_cast<std::size_t>(idx)];
            bool equal = src.size() == img.size();
            for (std::int64_t i = 0; equal && i < src.size(); ++i) equal = src[i] == img[i];
            if (equal) {
                found = true;
                CHECK(ds.masks[static_cast<std::size_t>(idx)].labels == mask.labels);
            }
        }
        CHECK(found);
    }

    CHECK_THROWS_AS(sample_patches(ds, "train", 64, 0.5, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_patches(ds, "train", 8, 1.5, 1, 1), std::invalid_argument);
}

TEST_CASE("patch sampling hits the requested foreground rate") {
    GenParams p = binary_imbalanced_profile();
    p.num_images = 8;
    p.height = p.width = 48;
    p.seed = 17;
    const SynthDataset ds = generate(p);

    PatchSampler sampler(ds, "train", 8, 0.9);
    Rng rng(29);
    int fg_centers = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const Patch patch = sampler.draw(rng);
        fg_centers += patch.mask.at(patch.center_y, patch.center_x) != 0;
    }
    const double rate = static_cast<double>(fg_centers) / draws;
    CHECK(rate >= 0.88);
    CHECK(rate <= 0.92);
}

TEST_CASE("patch sampling is deterministic under a fixed seed") {
    GenParams p = binary_imbalanced_profile();
    p.num_images = 6;
    p.height = p.width = 32;
    p.seed = 19;
    const SynthDataset ds = generate(p);
    const auto a = sample_patches(ds, "train", 16, 0.9, 20, 31);
    const auto b = sample_patches(ds, "train", 16, 0.9, 20, 31);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].second.labels == b[i].second.labels);
        for (std::int64_t j = 0; j < a[i].first.size(); ++j) CHECK(a[i].first[j] == b[i].first[j]);
    }
}
