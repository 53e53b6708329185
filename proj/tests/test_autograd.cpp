#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "supersal/ops.hpp"
#include "support/oracles.hpp"

using namespace sal;

namespace {

TensorD leaf(TensorD t) {
    t.requires_grad = true;
    return t;
}

double grad_at(const TensorD& t, int64_t i) { return t.grad_data()[i]; }

// Worst relative finite-difference error over every coordinate of `inputs`.
double check_op(const std::function<TensorD()>& loss_builder, std::vector<TensorD> inputs,
                Rng& rng) {
    return oracle::max_rel_grad_error(loss_builder, inputs, 1e-5, 1 << 20, rng);
}

}  // namespace

TEST_CASE("backward of sum gives all-ones gradients") {
    TensorD x = leaf(TensorD::from_data({2, 2}, {1.0, -2.0, 3.0, 4.0}));
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        TensorD loss = sum(x);
        tape.backward(loss);
    }
    for (int64_t i = 0; i < 4; ++i) CHECK(grad_at(x, i) == 1.0);
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
    TensorD x = leaf(TensorD::scalar(0.0));
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        TensorD loss = sum(sigmoid(x));
        tape.backward(loss);
    }
    CHECK(grad_at(x, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward rejects a non-scalar loss") {
    TensorD x = leaf(TensorD::zeros({3}));
    Tape<double> tape;
    TapeScope<double> scope(tape);
    TensorD y = relu(x);
    CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("scalar"), Error);
}

TEST_CASE("gradients accumulate additively across fan-out") {
    TensorD x = leaf(TensorD::scalar(3.0));
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        TensorD loss = add(mul(x, x), mul_scalar(x, 5.0));  // x^2 + 5x
        tape.backward(loss);
    }
    CHECK(grad_at(x, 0) == doctest::Approx(2.0 * 3.0 + 5.0).epsilon(1e-14));
}

TEST_CASE("no recording happens outside a tape scope") {
    TensorD x = leaf(TensorD::scalar(2.0));
    TensorD y = sigmoid(x);
    CHECK_FALSE(y.requires_grad);
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("finite differences confirm every operator gradient") {
    Rng rng(77);
    // Inputs drawn away from the relu/hswish kinks so central differences
    // see a smooth function.
    auto smooth = [&rng](const Shape& s) {
        return leaf(oracle::random_tensor<double>(s, rng, 0.2, 2.4));
    };

    SUBCASE("conv2d, all three gradients") {
        TensorD x = smooth({2, 4, 5, 4});
        TensorD w = leaf(oracle::random_tensor<double>({6, 2, 3, 3}, rng, -0.8, 0.8));
        TensorD b = leaf(oracle::random_tensor<double>({6}, rng, -0.3, 0.3));
        auto loss = [&]() {
            TensorD y = conv2d(x, w, &b, 2, 1, 2);
            return sum(mul(y, y));
        };
        CHECK(check_op(loss, {x, w, b}, rng) < 1e-4);
    }
    SUBCASE("depthwise conv2d") {
        TensorD x = smooth({1, 3, 6, 5});
        TensorD w = leaf(oracle::random_tensor<double>({3, 1, 5, 5}, rng, -0.8, 0.8));
        auto loss = [&]() {
            TensorD y = conv2d<double>(x, w, nullptr, 1, 2, 3);
            return sum(mul(y, y));
        };
        CHECK(check_op(loss, {x, w}, rng) < 1e-4);
    }
    SUBCASE("bilinear resize, including non-integer ratios") {
        TensorD x = smooth({1, 2, 3, 5});
        auto loss = [&]() {
            TensorD y = bilinear_resize(x, 7, 4);
            return sum(mul(y, y));
        };
        CHECK(check_op(loss, {x}, rng) < 1e-4);
    }
    SUBCASE("activations") {
        TensorD pos = smooth({24});
        auto loss_relu = [&]() { return sum(mul(relu(pos), relu(pos))); };
        CHECK(check_op(loss_relu, {pos}, rng) < 1e-4);
        TensorD x = leaf(oracle::random_tensor<double>({24}, rng, -2.5, 2.5));
        auto loss_hsw = [&]() { return sum(mul(hswish(x), hswish(x))); };
        CHECK(check_op(loss_hsw, {x}, rng) < 1e-4);
        auto loss_sig = [&]() { return sum(mul(sigmoid(x), sigmoid(x))); };
        CHECK(check_op(loss_sig, {x}, rng) < 1e-4);
    }
    SUBCASE("log and sqrt on positive inputs") {
        TensorD x = smooth({15});
        auto loss_log = [&]() { return sum(log_op(x)); };
        CHECK(check_op(loss_log, {x}, rng) < 1e-4);
        auto loss_sqrt = [&]() { return sum(sqrt_op(x)); };
        CHECK(check_op(loss_sqrt, {x}, rng) < 1e-4);
    }
    SUBCASE("binary ops with scalar broadcast") {
        TensorD a = smooth({3, 4});
        TensorD b = smooth({3, 4});
        TensorD s = smooth({1});
        auto loss = [&]() {
            TensorD t = div(mul(a, b), add(b, s));
            return sum(mul(t, sub(t, s)));
        };
        CHECK(check_op(loss, {a, b, s}, rng) < 1e-4);
    }
    SUBCASE("reductions and pooling") {
        TensorD x = smooth({2, 3, 4, 3});
        auto loss = [&]() {
            TensorD g = global_avg_pool(x);
            return add(mean(mul(x, x)), sum(mul(g, g)));
        };
        CHECK(check_op(loss, {x}, rng) < 1e-4);
    }
    SUBCASE("mul_channel") {
        TensorD x = smooth({2, 3, 4, 4});
        TensorD s = smooth({2, 3, 1, 1});
        auto loss = [&]() { return sum(mul(mul_channel(x, s), mul_channel(x, s))); };
        CHECK(check_op(loss, {x, s}, rng) < 1e-4);
    }
    SUBCASE("normalize_sum_per_image") {
        TensorD x = smooth({2, 1, 3, 3});
        auto loss = [&]() {
            TensorD y = normalize_sum_per_image(x);
            return sum(mul(y, y));
        };
        CHECK(check_op(loss, {x}, rng) < 1e-4);
    }
    SUBCASE("batch_norm through batch statistics") {
        TensorD x = smooth({3, 2, 3, 3});
        TensorD scale = leaf(oracle::random_tensor<double>({2}, rng, 0.5, 1.5));
        TensorD shift = leaf(oracle::random_tensor<double>({2}, rng, -0.5, 0.5));
        TensorD rm = TensorD::zeros({2}), rv = TensorD::filled({2}, 1.0);
        auto loss = [&]() {
            TensorD y = batch_norm(x, scale, shift, rm, rv, nullptr, BnMode::Batch);
            return sum(mul(y, y));
        };
        CHECK(check_op(loss, {x, scale, shift}, rng) < 1e-4);
    }
    SUBCASE("batch_norm in eval mode") {
        TensorD x = smooth({2, 2, 3, 3});
        TensorD scale = leaf(oracle::random_tensor<double>({2}, rng, 0.5, 1.5));
        TensorD shift = leaf(oracle::random_tensor<double>({2}, rng, -0.5, 0.5));
        TensorD rm = oracle::random_tensor<double>({2}, rng, -0.2, 0.2);
        TensorD rv = oracle::random_tensor<double>({2}, rng, 0.5, 1.5);
        auto loss = [&]() {
            TensorD y = batch_norm(x, scale, shift, rm, rv, nullptr, BnMode::Eval);
            return sum(mul(y, y));
        };
        CHECK(check_op(loss, {x, scale, shift}, rng) < 1e-4);
    }
}

TEST_CASE("full inverted-residual micro-net passes finite differences on every parameter") {
    Rng rng(123);
    // expand 1x1 -> bn -> hswish -> depthwise 3x3 -> bn -> hswish ->
    // squeeze-excite -> project 1x1 -> bn -> residual
    const int64_t C = 3, hidden = 6, mid = 2;
    TensorD x = oracle::random_tensor<double>({2, C, 4, 4}, rng, 0.1, 1.2);
    x.requires_grad = true;
    auto p = [&rng](const Shape& s, double lo, double hi) {
        TensorD t = oracle::random_tensor<double>(s, rng, lo, hi);
        t.requires_grad = true;
        return t;
    };
    TensorD exp_w = p({hidden, C, 1, 1}, -0.6, 0.6);
    TensorD bn1_s = p({hidden}, 0.7, 1.3), bn1_b = p({hidden}, -0.2, 0.2);
    TensorD dw_w = p({hidden, 1, 3, 3}, -0.5, 0.5);
    TensorD bn2_s = p({hidden}, 0.7, 1.3), bn2_b = p({hidden}, -0.2, 0.2);
    TensorD f1_w = p({mid, hidden, 1, 1}, -0.6, 0.6), f1_b = p({mid}, 0.05, 0.3);
    TensorD f2_w = p({hidden, mid, 1, 1}, -0.6, 0.6), f2_b = p({hidden}, -0.2, 0.2);
    TensorD pr_w = p({C, hidden, 1, 1}, -0.6, 0.6);
    TensorD bn3_s = p({C}, 0.7, 1.3), bn3_b = p({C}, -0.2, 0.2);
    TensorD rm = TensorD::zeros({hidden}), rv = TensorD::filled({hidden}, 1.0);
    TensorD rm3 = TensorD::zeros({C}), rv3 = TensorD::filled({C}, 1.0);

    auto loss = [&]() {
        TensorD t = conv2d<double>(x, exp_w, nullptr, 1, 0, 1);
        t = hswish(batch_norm(t, bn1_s, bn1_b, rm, rv, nullptr, BnMode::Batch));
        t = conv2d<double>(t, dw_w, nullptr, 1, 1, static_cast<int>(hidden));
        t = hswish(batch_norm(t, bn2_s, bn2_b, rm, rv, nullptr, BnMode::Batch));
        TensorD s = global_avg_pool(t);
        s = relu(conv2d(s, f1_w, &f1_b, 1, 0, 1));
        s = sigmoid(conv2d(s, f2_w, &f2_b, 1, 0, 1));
        t = mul_channel(t, s);
        t = conv2d<double>(t, pr_w, nullptr, 1, 0, 1);
        t = batch_norm(t, bn3_s, bn3_b, rm3, rv3, nullptr, BnMode::Batch);
        t = add(t, x);
        return sum(mul(t, t));
    };
    std::vector<TensorD> leaves = {x,    exp_w, bn1_s, bn1_b, dw_w,  bn2_s, bn2_b,
                                   f1_w, f1_b,  f2_w,  f2_b,  pr_w,  bn3_s, bn3_b};
    const double err = oracle::max_rel_grad_error(loss, leaves, 1e-5, 1 << 20, rng, 1e-3);
    CHECK(err < 1e-4);
}

TEST_CASE("gradients written through a sliced view land in the parent storage") {
    TensorD base = leaf(TensorD::from_data({2, 3}, {1, 2, 3, 4, 5, 6}));
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        TensorD row = base.narrow(0, 1, 1);  // [4 5 6]
        TensorD loss = sum(mul(row, row));
        tape.backward(loss);
    }
    CHECK(grad_at(base, 0) == 0.0);
    CHECK(grad_at(base, 3) == doctest::Approx(8.0));
    CHECK(grad_at(base, 5) == doctest::Approx(12.0));
}
