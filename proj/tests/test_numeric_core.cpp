#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oen/ops.hpp"
#include "oen/rng.hpp"
#include "oen/tape.hpp"
#include "oen/tensor.hpp"
#include "test_util.hpp"

using namespace oen;

TEST_CASE("tensor shape and data invariants") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.at2(1, 2) == 1.5);
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), std::invalid_argument);
    CHECK(t.all_finite());
    t[0] = std::nan("");
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("conv2d all-ones 4x4 with 3x3 kernel, padding 1") {
    // sliding-window hand oracle: corners see 2x2=4 ones, edges 6, interior 9
    Tensor input({1, 4, 4}, 1.0);
    Tensor kernel({1, 1, 3, 3}, 1.0);
    Tensor bias({1}, 0.0);
    Tensor out = conv2d_value(input, kernel, bias, 1, 1);
    REQUIRE(out.shape() == std::vector<int>{1, 4, 4});
    CHECK(out.at3(0, 0, 0) == doctest::Approx(4.0));
    CHECK(out.at3(0, 0, 3) == doctest::Approx(4.0));
    CHECK(out.at3(0, 3, 3) == doctest::Approx(4.0));
    CHECK(out.at3(0, 0, 1) == doctest::Approx(6.0));
    CHECK(out.at3(0, 1, 0) == doctest::Approx(6.0));
    CHECK(out.at3(0, 1, 1) == doctest::Approx(9.0));
    CHECK(out.at3(0, 2, 2) == doctest::Approx(9.0));
}

TEST_CASE("conv2d identity kernel") {
    Rng rng(3);
    Tensor input = test::random_tensor({1, 5, 7}, rng);
    Tensor kernel({1, 1, 1, 1}, 1.0);
    Tensor bias({1}, 0.0);
    Tensor out = conv2d_value(input, kernel, bias, 1, 0);
    REQUIRE(out.same_shape(input));
    for (std::int64_t i = 0; i < input.size(); ++i) CHECK(out[i] == input[i]);
}

TEST_CASE("conv2d output shape arithmetic") {
    Rng rng(4);
    Tensor input = test::random_tensor({2, 5, 5}, rng);
    Tensor kernel = test::random_tensor({4, 2, 3, 3}, rng);
    Tensor bias({4}, 0.0);
    Tensor out = conv2d_value(input, kernel, bias, 1, 0);
    CHECK(out.shape() == std::vector<int>{4, 3, 3});
}

TEST_CASE("conv2d shape formula exhaustive for extents <= 7") {
    Rng rng(5);
    for (int h = 1; h <= 7; ++h) {
        for (int w = 1; w <= 7; ++w) {
            for (int kh = 1; kh <= 7; ++kh) {
                for (int kw = 1; kw <= 7; ++kw) {
                    for (int pad = 0; pad <= 2; ++pad) {
                        for (int stride = 1; stride <= 3; ++stride) {
                            Tensor input = test::random_tensor({1, h, w}, rng);
                            Tensor kernel = test::random_tensor({1, 1, kh, kw}, rng);
                            Tensor bias({1}, 0.0);
                            if (kh > h + 2 * pad || kw > w + 2 * pad) {
                                CHECK_THROWS_AS(conv2d_value(input, kernel, bias, stride, pad),
                                                std::invalid_argument);
                                continue;
                            }
                            Tensor out = conv2d_value(input, kernel, bias, stride, pad);
                            CHECK(out.extent(1) == (h + 2 * pad - kh) / stride + 1);
                            CHECK(out.extent(2) == (w + 2 * pad - kw) / stride + 1);
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("conv2d contract errors") {
    Tensor input({2, 4, 4}, 1.0);
    Tensor kernel({1, 3, 3, 3}, 1.0);  // 3 kernel channels vs 2 input channels
    Tensor bias({1}, 0.0);
    CHECK_THROWS_WITH_AS(conv2d_value(input, kernel, bias, 1, 1),
                         doctest::Contains("input channels (2) do not match kernel channels (3)"),
                         std::invalid_argument);
    Tensor ok_kernel({1, 2, 3, 3}, 1.0);
    CHECK_THROWS_WITH_AS(conv2d_value(input, ok_kernel, bias, 0, 1), doctest::Contains("stride"),
                         std::invalid_argument);
    CHECK_THROWS_AS(conv2d_value(input, ok_kernel, Tensor({2}, 0.0), 1, 1), std::invalid_argument);
}

TEST_CASE("backward of sum(w) is all ones") {
    GradTape tape;
    Var w = tape.param(Tensor({2, 3}, 2.5));
    Var loss = sum(w);
    Gradients g = tape.backward(loss);
    REQUIRE(g.count() == 1);
    for (std::int64_t i = 0; i < 6; ++i) CHECK(g.for_param(0)[i] == 1.0);
}

TEST_CASE("backward of sum(w*w) for w=[1,2,3] is [2,4,6]") {
    GradTape tape;
    Var w = tape.param(Tensor({3}, {1.0, 2.0, 3.0}));
    Var loss = sum(mul(w, w));
    Gradients g = tape.backward(loss);
    CHECK(g.for_param(0)[0] == doctest::Approx(2.0));
    CHECK(g.for_param(0)[1] == doctest::Approx(4.0));
    CHECK(g.for_param(0)[2] == doctest::Approx(6.0));
}

TEST_CASE("backward returns a gradient for every registered parameter") {
    GradTape tape;
    Var a = tape.param(Tensor({2}, 1.0));
    Var unused = tape.param(Tensor({3}, 1.0));
    (void)unused;
    Gradients g = tape.backward(sum(a));
    REQUIRE(g.count() == 2);
    CHECK(g.for_param(1).shape() == std::vector<int>{3});
    for (std::int64_t i = 0; i < 3; ++i) CHECK(g.for_param(1)[i] == 0.0);
}

TEST_CASE("tape error paths") {
    GradTape tape;
    Var w = tape.param(Tensor({2}, 1.0));
    CHECK_THROWS_AS(tape.backward(w), std::invalid_argument);  // non-scalar loss
    Var loss = sum(w);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);  // consumed
    tape.reset();
    CHECK(tape.num_nodes() == 0);
}

TEST_CASE("backward linearity: grad of a+b equals grad of a plus grad of b") {
    Rng rng(11);
    const Tensor w0 = test::random_tensor({4, 3}, rng);
    const Tensor r = test::random_tensor({4, 3}, rng);

    auto grads_for = [&](bool use_a, bool use_b) {
        GradTape tape;
        Var w = tape.param(w0);
        Var c = tape.constant(r);
        Var loss_a = sum(mul(w, c));
        Var loss_b = sum(mul(w, w));
        Var loss = use_a && use_b ? add(loss_a, loss_b) : (use_a ? loss_a : loss_b);
        return tape.backward(loss);
    };

    Gradients ga = grads_for(true, false);
    Gradients gb = grads_for(false, true);
    Gradients gab = grads_for(true, true);
    for (std::int64_t i = 0; i < w0.size(); ++i) {
        CHECK(gab.for_param(0)[i] == doctest::Approx(ga.for_param(0)[i] + gb.for_param(0)[i]).epsilon(1e-12));
    }
}

TEST_CASE("finite_diff_grad basics") {
    auto square = [](const Tensor& p) { return p[0] * p[0]; };
    Tensor p({1}, 3.0);
    Tensor g = finite_diff_grad(square, p, 1e-5);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));

    auto constant = [](const Tensor&) { return 42.0; };
    Tensor gc = finite_diff_grad(constant, p, 1e-5);
    CHECK(gc[0] == 0.0);

    CHECK_THROWS_AS(finite_diff_grad(square, p, 0.0), std::invalid_argument);
    auto bad = [](const Tensor&) { return std::nan(""); };
    CHECK_THROWS_AS(finite_diff_grad(bad, p, 1e-5), std::runtime_error);
}

namespace {

// builds loss = sum(conv2d(x, w, b) * r) and returns analytic grads
Gradients conv_loss_grads(const Tensor& x, const Tensor& w, const Tensor& b, const Tensor& r, int stride, int pad) {
    GradTape tape;
    Var xv = tape.param(x);
    Var wv = tape.param(w);
    Var bv = tape.param(b);
    Var out = conv2d(xv, wv, bv, stride, pad);
    Var loss = sum(mul(out, tape.constant(r)));
    return tape.backward(loss);
}

double conv_loss_value(const Tensor& x, const Tensor& w, const Tensor& b, const Tensor& r, int stride, int pad) {
    const Tensor out = conv2d_value(x, w, b, stride, pad);
    double acc = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) acc += out[i] * r[i];
    return acc;
}

}  // namespace

TEST_CASE("conv2d analytic gradients match finite differences") {
    Rng rng(21);
    for (const auto& [stride, pad] : {std::pair{1, 0}, std::pair{1, 1}, std::pair{2, 1}}) {
        const Tensor x = test::with_norm(test::random_tensor({2, 5, 6}, rng), rng);
        const Tensor w = test::with_norm(test::random_tensor({3, 2, 3, 3}, rng), rng);
        const Tensor b = test::random_tensor({3}, rng);
        const Tensor r = test::random_tensor(
            {3, (5 + 2 * pad - 3) / stride + 1, (6 + 2 * pad - 3) / stride + 1}, rng);

        Gradients analytic = conv_loss_grads(x, w, b, r, stride, pad);
        auto fd = [&](const Tensor& probe, int which) {
            auto fn = [&](const Tensor& p) {
                return conv_loss_value(which == 0 ? p : x, which == 1 ? p : w, which == 2 ? p : b, r, stride, pad);
            };
            return finite_diff_grad(fn, probe, 1e-5);
        };
        std::string msg;
        CHECK_MESSAGE(test::grads_close(analytic.for_param(0), fd(x, 0), 1e-4, 1e-7, &msg), "input: ", msg);
        CHECK_MESSAGE(test::grads_close(analytic.for_param(1), fd(w, 1), 1e-4, 1e-7, &msg), "weights: ", msg);
        CHECK_MESSAGE(test::grads_close(analytic.for_param(2), fd(b, 2), 1e-4, 1e-7, &msg), "bias: ", msg);
    }
}

TEST_CASE("activation and shape-op gradients match finite differences") {
    Rng rng(22);

    auto check_op = [&](auto op, std::vector<int> shape) {
        const Tensor x = test::with_norm(test::random_tensor(shape, rng), rng);
        GradTape tape;
        Var xv = tape.param(x);
        Var out = op(xv);
        const Tensor r = test::random_tensor(out.value().shape(), rng);
        Var loss = sum(mul(out, tape.constant(r)));
        Gradients analytic = tape.backward(loss);

        auto fn = [&](const Tensor& p) {
            GradTape t;
            Var pv = t.constant(p);
            Var o = op(pv);
            double acc = 0.0;
            for (std::int64_t i = 0; i < o.value().size(); ++i) acc += o.value()[i] * r[i];
            return acc;
        };
        std::string msg;
        CHECK_MESSAGE(test::grads_close(analytic.for_param(0), finite_diff_grad(fn, x, 1e-5), 1e-4, 1e-7, &msg),
                      msg);
    };

    check_op([](Var v) { return leaky_relu(v, 0.1); }, {3, 4, 4});
    check_op([](Var v) { return sigmoid(v); }, {1, 4, 4});
    check_op([](Var v) { return softmax_channels(v); }, {3, 4, 4});
    check_op([](Var v) { return upsample2_nearest(v); }, {2, 3, 3});
    check_op([](Var v) { return mean(v); }, {2, 5, 5});
    check_op([](Var v) { return scale(v, -2.5); }, {7});
    check_op([](Var v) { return add(v, v); }, {6});
}

TEST_CASE("softmax_channels normalizes and is stable for large logits") {
    GradTape tape;
    Tensor logits({3, 2, 2}, 0.0);
    logits.at3(0, 0, 0) = 1000.0;
    logits.at3(1, 0, 0) = 999.0;
    logits.at3(2, 0, 0) = -1000.0;
    Var out = softmax_channels(tape.constant(logits));
    const Tensor& p = out.value();
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += p.at3(k, y, x);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    CHECK(p.all_finite());
}
