#include "doctest.h"
#include "lpt/ops.hpp"
#include "lpt/tensor.hpp"

#include <cmath>
#include <random>

using namespace lpt;
using namespace lpt::ops;

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor I(Shape{2, 2}, {1, 0, 0, 1});
    Tensor X(Shape{2, 2}, {3, 1, 4, 1});
    Tensor Y = matmul(I, X);
    for (std::size_t i = 0; i < 4; ++i) CHECK(Y[i] == X[i]);

    Tensor A(Shape{2, 2}, {1, 2, 3, 4});
    Tensor B(Shape{2, 1}, {1, 1});
    Tensor C = matmul(A, B);
    CHECK(C[0] == 3);
    CHECK(C[1] == 7);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor A(Shape{2, 3});
    Tensor B(Shape{2, 3});
    CHECK_THROWS_WITH_AS(matmul(A, B), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
    std::mt19937_64 rng(7);
    auto A = Tensor::randn(Shape{3, 4}, rng).set_requires_grad(true);
    auto B = Tensor::randn(Shape{4, 2}, rng).set_requires_grad(true);
    auto f = [](const std::vector<Tensor>& in) { return sum_all(matmul(in[0], in[1])); };
    CHECK(grad_check(f, {A, B}, 1e-5) < 1e-6);
}

TEST_CASE("softmax basics") {
    Tensor x(Shape{3}, {0, 0, 0});
    Tensor y = softmax(x, 0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Tensor big(Shape{2}, {1000, 0});
    Tensor yb = softmax(big, 0);
    CHECK(std::isfinite(yb[0]));
    CHECK(yb[0] == doctest::Approx(1.0));
    CHECK(yb[1] == doctest::Approx(0.0));

    Tensor z(Shape{3}, {1, 2, 3});
    Tensor yz = softmax(z, 0);
    CHECK(yz[0] == doctest::Approx(0.09003057).epsilon(1e-6));
    CHECK(yz[1] == doctest::Approx(0.24472847).epsilon(1e-6));
    CHECK(yz[2] == doctest::Approx(0.66524096).epsilon(1e-6));
}

TEST_CASE("softmax sums to one along reduced axis") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = Tensor::randn(Shape{4, 5}, rng, 10.0);
        for (std::size_t axis : {std::size_t(0), std::size_t(1)}) {
            Tensor y = softmax(x, axis);
            std::size_t outer = axis == 1 ? 4 : 5;
            std::size_t len = axis == 1 ? 5 : 4;
            for (std::size_t s = 0; s < outer; ++s) {
                double sum = 0.0;
                for (std::size_t i = 0; i < len; ++i)
                    sum += axis == 1 ? y[s * 5 + i] : y[i * 5 + s];
                CHECK(std::abs(sum - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("layer_norm edge cases and gradient") {
    Tensor gain(Shape{4}, {1, 1, 1, 1});
    Tensor bias(Shape{4}, {0, 0, 0, 0});
    Tensor constant(Shape{4}, {5, 5, 5, 5});
    Tensor y = layer_norm(constant, gain, bias);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(0.0));

    Tensor zero_gain(Shape{4}, {0, 0, 0, 0});
    Tensor b2(Shape{4}, {1, 2, 3, 4});
    std::mt19937_64 rng(5);
    auto x = Tensor::randn(Shape{2, 4}, rng);
    Tensor y2 = layer_norm(x, zero_gain, b2);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(y2[i * 4 + j] == b2[j]);

    auto xg = Tensor::randn(Shape{3, 4}, rng).set_requires_grad(true);
    auto g = Tensor::randn(Shape{4}, rng).set_requires_grad(true);
    auto b = Tensor::randn(Shape{4}, rng).set_requires_grad(true);
    auto w = Tensor::randn(Shape{3, 4}, rng);
    auto f = [w](const std::vector<Tensor>& in) {
        return sum_all(mul(layer_norm(in[0], in[1], in[2]), w));
    };
    CHECK(grad_check(f, {xg, g, b}, 1e-5) < 1e-5);
}

TEST_CASE("layer_norm zero-mean unit-variance before affine") {
    std::mt19937_64 rng(11);
    auto x = Tensor::randn(Shape{4, 8}, rng, 3.0);
    Tensor gain(Shape{8}, std::vector<double>(8, 1.0));
    Tensor bias(Shape{8}, std::vector<double>(8, 0.0));
    Tensor y = layer_norm(x, gain, bias, 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 8; ++j) mean += y[i * 8 + j];
        mean /= 8;
        for (std::size_t j = 0; j < 8; ++j) var += (y[i * 8 + j] - mean) * (y[i * 8 + j] - mean);
        var /= 8;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-9);
    }
}

TEST_CASE("activations") {
    Tensor x(Shape{3}, {-1, 0, 2});
    Tensor r = activation(x, Act::relu);
    CHECK(r[0] == 0);
    CHECK(r[1] == 0);
    CHECK(r[2] == 2);
    Tensor g = activation(x, Act::gelu);
    CHECK(g[1] == 0.0);

    std::mt19937_64 rng(9);
    auto xg = Tensor::randn(Shape{8}, rng).set_requires_grad(true);
    auto w = Tensor::randn(Shape{8}, rng);
    auto f = [w](const std::vector<Tensor>& in) {
        return sum_all(mul(activation(in[0], Act::gelu), w));
    };
    CHECK(grad_check(f, {xg}, 1e-5) < 1e-5);
}

TEST_CASE("backward basics") {
    std::mt19937_64 rng(1);
    auto x = Tensor::randn(Shape{3, 2}, rng).set_requires_grad(true);
    {
        Tape tape;
        Tensor loss = sum_all(x);
        auto grads = tape.backward(loss);
        REQUIRE(grads.count(x.id()) == 1);
        for (std::size_t i = 0; i < 6; ++i) CHECK(grads.at(x.id())[i] == 1.0);
    }
    // frozen tensor only: empty map
    auto frozen = Tensor::randn(Shape{4}, rng);
    {
        Tape tape;
        Tensor loss = sum_all(frozen);
        auto grads = tape.backward(loss);
        CHECK(grads.empty());
        CHECK(!frozen.has_grad());
    }
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x(Shape{2}, {1, 2});
    Tape tape;
    CHECK_THROWS_AS((void)tape.backward(x), std::invalid_argument);
}

TEST_CASE("composite softmax-matmul graph vs finite differences") {
    std::mt19937_64 rng(17);
    auto A = Tensor::randn(Shape{3, 4}, rng).set_requires_grad(true);
    auto B = Tensor::randn(Shape{4, 5}, rng).set_requires_grad(true);
    auto f = [](const std::vector<Tensor>& in) {
        Tensor p = softmax(matmul(in[0], in[1]), 1);
        return sum_all(mul(p, p));
    };
    CHECK(grad_check(f, {A, B}, 1e-5) < 1e-4);
}

TEST_CASE("grad_check on linear map is near-exact") {
    std::mt19937_64 rng(2);
    auto x = Tensor::randn(Shape{6}, rng).set_requires_grad(true);
    auto f = [](const std::vector<Tensor>& in) { return sum_all(affine(in[0], 3.0, 1.0)); };
    CHECK(grad_check(f, {x}, 1e-4) < 1e-10);
}

TEST_CASE("grad_check reports finite error at dead-relu boundary") {
    Tensor x(Shape{3}, {-1.0, 0.0, 1.0});
    x.set_requires_grad(true);
    auto f = [](const std::vector<Tensor>& in) { return sum_all(activation(in[0], Act::relu)); };
    double err = grad_check(f, {x}, 1e-5);
    CHECK(std::isfinite(err));
}

TEST_CASE("backward is deterministic") {
    std::mt19937_64 rng(23);
    auto A = Tensor::randn(Shape{4, 4}, rng).set_requires_grad(true);
    auto B = Tensor::randn(Shape{4, 4}, rng).set_requires_grad(true);
    std::vector<double> g1, g2;
    for (int run = 0; run < 2; ++run) {
        Tape tape;
        Tensor loss = sum_all(softmax(matmul(A, B), 1));
        auto grads = tape.backward(loss);
        auto& dst = run == 0 ? g1 : g2;
        dst = grads.at(A.id()).data();
        auto gb = grads.at(B.id()).data();
        dst.insert(dst.end(), gb.begin(), gb.end());
    }
    CHECK(g1 == g2);
}

TEST_CASE("primitive gradient sweep at random inputs") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = Tensor::randn(Shape{2, 3}, rng).set_requires_grad(true);
        auto y = Tensor::randn(Shape{2, 3}, rng).set_requires_grad(true);
        auto f = [](const std::vector<Tensor>& in) {
            Tensor s = softmax(in[0], 1);
            Tensor t = activation(mul(s, in[1]), Act::gelu);
            return mean_all(mul(t, t));
        };
        CHECK(grad_check(f, {x, y}, 1e-5) < 1e-4);

        auto a = Tensor::randn(Shape{5}, rng).set_requires_grad(true);
        auto b = Tensor::randn(Shape{5}, rng).set_requires_grad(true);
        auto fc = [](const std::vector<Tensor>& in) { return cosine_sim(in[0], in[1]); };
        CHECK(grad_check(fc, {a, b}, 1e-5) < 1e-4);

        auto W = Tensor::randn(Shape{4, 5}, rng).set_requires_grad(true);
        auto c = Tensor::randn(Shape{5}, rng).set_requires_grad(true);
        auto fs = [](const std::vector<Tensor>& in) {
            return sum_all(mul(cosine_scores(in[0], in[1], 16.0), Tensor(Shape{4}, {1, -2, 3, 0.5})));
        };
        CHECK(grad_check(fs, {W, c}, 1e-5) < 1e-4);
    }
}

TEST_CASE("slicing and concat round trip gradients") {
    std::mt19937_64 rng(41);
    auto x = Tensor::randn(Shape{4, 6}, rng).set_requires_grad(true);
    auto f = [](const std::vector<Tensor>& in) {
        Tensor top = slice_rows(in[0], 0, 2);
        Tensor bot = slice_rows(in[0], 2, 4);
        Tensor re = concat_rows({top, bot});
        Tensor left = slice_cols(re, 0, 3);
        return sum_all(mul(left, left));
    };
    CHECK(grad_check(f, {x}, 1e-5) < 1e-6);
}
