#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oen/metrics.hpp"
#include "oen/synth.hpp"
#include "test_util.hpp"

using namespace oen;

namespace {

ProbMap one_hot_map(const LabelMap& target) {
    Tensor p({target.num_classes, target.height, target.width}, 0.0);
    for (int y = 0; y < target.height; ++y) {
        for (int x = 0; x < target.width; ++x) p.at3(target.at(y, x), y, x) = 1.0;
    }
    return ProbMap(std::move(p));
}

ProbMap random_softmax_map(int classes, int h, int w, Rng& rng) {
    Tensor p({classes, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double z = 0.0;
            for (int k = 0; k < classes; ++k) {
                const double e = std::exp(rng.uniform(-2.0, 2.0));
                p.at3(k, y, x) = e;
                z += e;
            }
            for (int k = 0; k < classes; ++k) p.at3(k, y, x) /= z;
        }
    }
    return ProbMap(std::move(p));
}

}  // namespace

TEST_CASE("dice coefficient set-count examples") {
    LabelMap a(4, 5, 2, 0), b(4, 5, 2, 0);
    for (int x = 0; x < 5; ++x) a.at(0, x) = b.at(0, x) = 1;
    CHECK(dice_coefficient(a, b, 1) == doctest::Approx(1.0));
    CHECK(dice_coefficient(a, b, 0) == doctest::Approx(1.0));

    LabelMap c(4, 5, 2, 0);
    for (int x = 0; x < 5; ++x) c.at(1, x) = 1;  // disjoint from a's foreground
    CHECK(dice_coefficient(a, c, 1) == doctest::Approx(0.0));

    // |A| = |B| = 10, |A n B| = 5
    LabelMap d(4, 5, 2, 0), e(4, 5, 2, 0);
    for (int i = 0; i < 10; ++i) d.labels[static_cast<std::size_t>(i)] = 1;
    for (int i = 5; i < 15; ++i) e.labels[static_cast<std::size_t>(i)] = 1;
    CHECK(dice_coefficient(d, e, 1) == doctest::Approx(0.5));

    // both empty
    LabelMap f(4, 5, 3, 0), g(4, 5, 3, 0);
    CHECK(dice_coefficient(f, g, 2) == doctest::Approx(1.0));

    CHECK_THROWS_AS(dice_coefficient(a, LabelMap(5, 5, 2, 0), 1), std::invalid_argument);
    CHECK_THROWS_AS(dice_coefficient(a, b, 9), std::invalid_argument);
}

TEST_CASE("brier score closed forms") {
    LabelMap target(6, 6, 2, 0);
    CHECK(brier_score(one_hot_map(target), target) == doctest::Approx(0.0));

    // binary p = 0.5 everywhere: ((0.5-1)^2 + (0.5)^2) / 2 = 0.25
    CHECK(brier_score(ProbMap(Tensor({1, 6, 6}, 0.5)), target) == doctest::Approx(0.25));

    // single pixel, p = (0.8, 0.2), truth class 0: (0.04 + 0.04)/2
    LabelMap one(1, 1, 2, 0);
    Tensor p({2, 1, 1});
    p.at3(0, 0, 0) = 0.8;
    p.at3(1, 0, 0) = 0.2;
    CHECK(brier_score(ProbMap(std::move(p)), one) == doctest::Approx(0.04));
}

TEST_CASE("brier equals the naive per-class one-vs-rest average") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int classes = 2 + rng.uniform_int(3);
        LabelMap target(5, 7, classes, 0);
        for (int& l : target.labels) l = rng.uniform_int(classes);
        const ProbMap pred = random_softmax_map(classes, 5, 7, rng);

        double naive = 0.0;
        for (int k = 0; k < classes; ++k) {
            double class_sum = 0.0;
            for (int y = 0; y < 5; ++y) {
                for (int x = 0; x < 7; ++x) {
                    const double diff = pred.prob_of(k, y, x) - (target.at(y, x) == k ? 1.0 : 0.0);
                    class_sum += diff * diff;
                }
            }
            naive += class_sum / (5.0 * 7.0);
        }
        naive /= classes;
        CHECK(std::abs(brier_score(pred, target) - naive) <= 1e-12);
    }
}

TEST_CASE("stratified brier score") {
    LabelMap target(4, 4, 2, 0);
    target.at(0, 0) = 1;
    target.at(2, 3) = 1;

    Tensor perfect({1, 4, 4}, 0.0);
    perfect.at3(0, 0, 0) = 1.0;
    perfect.at3(0, 2, 3) = 1.0;
    CHECK(*stratified_brier_score(ProbMap(std::move(perfect)), target, 1) == doctest::Approx(0.0));

    // p(y=k) = 0.7 on every lesion pixel: (0.3)^2
    CHECK(*stratified_brier_score(ProbMap(Tensor({1, 4, 4}, 0.7)), target, 1) ==
          doctest::Approx(0.09).epsilon(1e-12));

    // class absent from the target: marker, not 0
    LabelMap empty(4, 4, 2, 0);
    CHECK_FALSE(stratified_brier_score(ProbMap(Tensor({1, 4, 4}, 0.5)), empty, 1).has_value());
}

TEST_CASE("prediction variance") {
    std::vector<ProbMap> same{ProbMap(Tensor({1, 3, 3}, 0.4)), ProbMap(Tensor({1, 3, 3}, 0.4))};
    CHECK(prediction_variance(same) == doctest::Approx(0.0));

    std::vector<ProbMap> spread{ProbMap(Tensor({1, 2, 2}, 0.0)), ProbMap(Tensor({1, 2, 2}, 1.0))};
    CHECK(prediction_variance(spread) == doctest::Approx(0.25));

    // population variance of {0.2, 0.5, 0.8} is 0.06
    std::vector<ProbMap> three{ProbMap(Tensor({1, 1, 1}, 0.2)), ProbMap(Tensor({1, 1, 1}, 0.5)),
                               ProbMap(Tensor({1, 1, 1}, 0.8))};
    CHECK(prediction_variance(three) == doctest::Approx(0.06).epsilon(1e-12));

    CHECK_THROWS_AS(prediction_variance({ProbMap(Tensor({1, 2, 2}, 0.5))}), std::invalid_argument);
    std::vector<ProbMap> ragged{ProbMap(Tensor({1, 2, 2}, 0.5)), ProbMap(Tensor({1, 3, 3}, 0.5))};
    CHECK_THROWS_AS(prediction_variance(ragged), std::invalid_argument);
}

TEST_CASE("ensemble-mean brier is bounded by the mean member brier") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        LabelMap target(6, 6, 3, 0);
        for (int& l : target.labels) l = rng.uniform_int(3);
        std::vector<ProbMap> members;
        for (int m = 0; m < 4; ++m) members.push_back(random_softmax_map(3, 6, 6, rng));

        ProbMap mean_map = members[0];
        for (std::size_t m = 1; m < members.size(); ++m) {
            for (std::int64_t i = 0; i < mean_map.values.size(); ++i) {
                mean_map.values[i] += members[m].values[i];
            }
        }
        for (std::int64_t i = 0; i < mean_map.values.size(); ++i) mean_map.values[i] /= members.size();

        double mean_of_briers = 0.0;
        for (const ProbMap& m : members) mean_of_briers += brier_score(m, target) / members.size();
        CHECK(brier_score(mean_map, target) <= mean_of_briers + 1e-10);
    }
}

TEST_CASE("metrics are invariant under consistent relabeling") {
    Rng rng(7);
    LabelMap target(5, 5, 3, 0);
    for (int& l : target.labels) l = rng.uniform_int(3);
    const ProbMap pred = random_softmax_map(3, 5, 5, rng);

    // permutation 0->2, 1->0, 2->1
    const int perm[3] = {2, 0, 1};
    LabelMap permuted_target(5, 5, 3, 0);
    for (std::size_t i = 0; i < target.labels.size(); ++i) {
        permuted_target.labels[i] = perm[target.labels[i]];
    }
    Tensor permuted({3, 5, 5});
    for (int k = 0; k < 3; ++k) {
        for (int y = 0; y < 5; ++y) {
            for (int x = 0; x < 5; ++x) permuted.at3(perm[k], y, x) = pred.values.at3(k, y, x);
        }
    }
    const ProbMap permuted_pred(std::move(permuted));

    CHECK(brier_score(pred, target) == doctest::Approx(brier_score(permuted_pred, permuted_target)).epsilon(1e-12));
    for (int k = 0; k < 3; ++k) {
        const auto a = stratified_brier_score(pred, target, k);
        const auto b = stratified_brier_score(permuted_pred, permuted_target, perm[k]);
        CHECK(a.has_value() == b.has_value());
        if (a.has_value()) CHECK(*a == doctest::Approx(*b).epsilon(1e-12));
        const LabelMap la = argmax_labels(pred);
        const LabelMap lb = argmax_labels(permuted_pred);
        CHECK(dice_coefficient(la, target, k) == doctest::Approx(dice_coefficient(lb, permuted_target, perm[k])));
    }
}

TEST_CASE("evaluate_from_member_maps with oracle predictions") {
    // target injected as the prediction: dice 1, brier 0, stratified 0
    GenParams params = binary_imbalanced_profile();
    params.num_images = 6;
    params.height = params.width = 32;
    params.seed = 11;
    const SynthDataset ds = generate(params);

    std::vector<std::vector<ProbMap>> maps;
    std::vector<const LabelMap*> targets;
    for (int idx : ds.split("test")) {
        const LabelMap& mask = ds.masks[static_cast<std::size_t>(idx)];
        maps.push_back({one_hot_map(mask), one_hot_map(mask)});
        targets.push_back(&mask);
    }
    const MetricsReport report = evaluate_from_member_maps(maps, targets, EvalOptions{});
    for (const auto& [k, v] : report.aggregate.dice) CHECK(v == doctest::Approx(1.0));
    CHECK(report.aggregate.brier == doctest::Approx(0.0));
    for (const auto& [k, v] : report.aggregate.stratified_brier) {
        if (v.has_value()) CHECK(*v == doctest::Approx(0.0));
    }
    CHECK(report.aggregate.prediction_variance.has_value());
    CHECK(*report.aggregate.prediction_variance == doctest::Approx(0.0));
}

TEST_CASE("evaluate on a real ensemble: determinism and variance presence") {
    GenParams params = binary_imbalanced_profile();
    params.num_images = 5;
    params.height = params.width = 32;
    params.seed = 13;
    const SynthDataset ds = generate(params);

    ArchConfig arch;
    arch.in_channels = 2;
    arch.num_classes = 2;
    arch.head = Head::sigmoid;
    arch.base_channels = 4;

    Ensemble single;
    single.arch = arch;
    single.members.emplace_back(arch);
    single.members[0].init_weights(1);
    single.meta.push_back({Mode::random, 1, 0.0, 0});

    EvalOptions opts;
    opts.patch_size = 16;
    opts.stride = 8;
    const MetricsReport r1 = evaluate(single, ds, "test", opts);
    CHECK_FALSE(r1.aggregate.prediction_variance.has_value());  // undefined for one member
    CHECK(r1.per_image.size() == ds.split("test").size());

    Ensemble pair = std::move(single);
    pair.members.emplace_back(arch);
    pair.members[1].init_weights(2);
    pair.meta.push_back({Mode::random, 2, 0.0, 1});
    const MetricsReport r2 = evaluate(pair, ds, "test", opts);
    CHECK(r2.aggregate.prediction_variance.has_value());
    CHECK(*r2.aggregate.prediction_variance > 0.0);

    const MetricsReport r3 = evaluate(pair, ds, "test", opts);
    CHECK(report_to_json(r2).dump() == report_to_json(r3).dump());  // bit-identical re-run

    CHECK_THROWS_AS(evaluate(pair, ds, "nope", opts), std::invalid_argument);
}

TEST_CASE("stitched probability map matches direct prediction when the window covers the image") {
    ArchConfig arch;
    arch.in_channels = 2;
    arch.num_classes = 2;
    arch.head = Head::sigmoid;
    arch.base_channels = 4;
    SegNet net(arch);
    net.init_weights(3);
    Rng rng(4);
    const Tensor image = test::random_tensor({2, 16, 16}, rng);
    const ProbMap direct = net.predict(image);
    const ProbMap stitched = stitched_probmap(net, image, 16, 8);
    for (std::int64_t i = 0; i < direct.values.size(); ++i) {
        CHECK(stitched.values[i] == doctest::Approx(direct.values[i]).epsilon(1e-15));
    }

    // overlapping windows still produce valid probabilities
    const ProbMap tiled = stitched_probmap(net, image, 8, 4);
    for (std::int64_t i = 0; i < tiled.values.size(); ++i) {
        CHECK(tiled.values[i] >= 0.0);
        CHECK(tiled.values[i] <= 1.0);
    }
}
