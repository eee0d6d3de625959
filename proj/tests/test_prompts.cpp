#include "doctest.h"
#include "lpt/ops.hpp"
#include "lpt/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace lpt;

namespace {
PromptConfig small_cfg() {
    PromptConfig cfg;
    cfg.layers = 4;
    cfg.shared_layers = 2;
    cfg.p_len = 3;
    cfg.dim = 8;
    cfg.pool_size = 5;
    cfg.ensemble_k = 2;
    return cfg;
}

GroupPromptPool pool_with_keys(const std::vector<std::vector<double>>& keys) {
    GroupPromptPool pool;
    for (const auto& k : keys) {
        pool.keys.emplace_back(Shape{k.size()}, k);
        pool.prompts.push_back({Tensor(Shape{2, k.size()}, 1.0)});
    }
    return pool;
}
}  // namespace

TEST_CASE("init_prompts determinism and truncation") {
    auto cfg = small_cfg();
    auto [s1, p1] = init_prompts(cfg, 99);
    auto [s2, p2] = init_prompts(cfg, 99);
    for (std::size_t l = 0; l < cfg.layers; ++l) CHECK(s1.u[l].data() == s2.u[l].data());
    for (std::size_t i = 0; i < cfg.pool_size; ++i) CHECK(p1.keys[i].data() == p2.keys[i].data());

    for (const auto& u : s1.u)
        for (std::size_t i = 0; i < u.size(); ++i) {
            CHECK(u[i] >= -0.04);
            CHECK(u[i] <= 0.04);
        }
}

TEST_CASE("init_prompts sample mean near zero") {
    PromptConfig cfg = small_cfg();
    cfg.p_len = 25;
    cfg.dim = 25;
    cfg.pool_size = 40;  // ~1e5 prompt values in the pool
    auto [shared, pool] = init_prompts(cfg, 7);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& entry : pool.prompts)
        for (const auto& t : entry)
            for (std::size_t i = 0; i < t.size(); ++i) {
                sum += t[i];
                ++count;
            }
    REQUIRE(count >= 50000);
    double trunc_std = 0.02 * 0.8796;  // stddev of N(0,1) truncated at +-2, scaled
    double se = trunc_std / std::sqrt(double(count));
    CHECK(std::abs(sum / double(count)) < 3.0 * se);
}

TEST_CASE("match_group_prompts basic cases") {
    auto pool = pool_with_keys({{1, 0}, {0, 1}, {-1, 0}});
    Tensor q(Shape{2}, {1, 0});
    CHECK(match_group_prompts(q, pool, 2) == std::vector<std::size_t>{0, 1});

    // k = m: all indices, similarity descending
    CHECK(match_group_prompts(q, pool, 3) == std::vector<std::size_t>{0, 1, 2});

    // cosine scale invariance at the index level
    Tensor q2(Shape{2}, {17.5, 0});
    CHECK(match_group_prompts(q2, pool, 2) == match_group_prompts(q, pool, 2));

    Tensor zero(Shape{2}, {0, 0});
    CHECK_THROWS_AS((void)match_group_prompts(zero, pool, 1), std::invalid_argument);
    CHECK_THROWS_AS((void)match_group_prompts(q, pool, 4), std::invalid_argument);
}

TEST_CASE("match_group_prompts ties break by lowest index") {
    auto pool = pool_with_keys({{0, 1}, {1, 0}, {1, 0}});
    Tensor q(Shape{2}, {1, 0});
    CHECK(match_group_prompts(q, pool, 2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("match_group_prompts equals exhaustive sort oracle") {
    std::mt19937_64 rng(13);
    std::vector<std::vector<double>> keys;
    for (int i = 0; i < 64; ++i) {
        auto t = Tensor::randn(Shape{6}, rng);
        keys.push_back(t.data());
    }
    auto pool = pool_with_keys(keys);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor q = Tensor::randn(Shape{6}, rng);
        auto got = match_group_prompts(q, pool, 3);

        std::vector<double> sims(64);
        double qn = std::sqrt(std::inner_product(q.data().begin(), q.data().end(),
                                                 q.data().begin(), 0.0));
        for (std::size_t i = 0; i < 64; ++i) {
            double dot = 0, kn = 0;
            for (std::size_t j = 0; j < 6; ++j) {
                dot += keys[i][j] * q[j];
                kn += keys[i][j] * keys[i][j];
            }
            sims[i] = dot / (qn * std::sqrt(kn));
        }
        std::vector<std::size_t> order(64);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
        order.resize(3);
        CHECK(got == order);
    }
}

TEST_CASE("ensemble_prompts arithmetic") {
    GroupPromptPool pool;
    pool.keys = {Tensor(Shape{2}, {1, 0}), Tensor(Shape{2}, {0, 1})};
    pool.prompts = {{Tensor(Shape{2, 3}, 1.0)}, {Tensor(Shape{2, 3}, 3.0)}};

    auto single = ensemble_prompts(pool, {1});
    for (std::size_t i = 0; i < 6; ++i) CHECK(single[0][i] == 3.0);

    auto mean = ensemble_prompts(pool, {0, 1});
    for (std::size_t i = 0; i < 6; ++i) CHECK(mean[0][i] == 2.0);

    auto flipped = ensemble_prompts(pool, {1, 0});
    CHECK(mean[0].data() == flipped[0].data());

    auto same = ensemble_prompts(pool, {0, 0});
    for (std::size_t i = 0; i < 6; ++i) CHECK(same[0][i] == 1.0);

    CHECK_THROWS_AS((void)ensemble_prompts(pool, {}), std::invalid_argument);
}

TEST_CASE("gradient flows only into selected pool entries") {
    auto cfg = small_cfg();
    auto [shared, pool] = init_prompts(cfg, 3);
    pool.set_trainable(true);
    Tape tape;
    auto slices = ensemble_prompts(pool, {1, 3});
    Tensor loss = ops::sum_all(ops::concat_rows(slices));
    auto grads = tape.backward(loss);
    for (std::size_t i = 0; i < pool.size(); ++i)
        for (const auto& t : pool.prompts[i]) {
            bool selected = (i == 1 || i == 3);
            CHECK(grads.count(t.id()) == (selected ? 1 : 0));
        }
    // keys never enter the ensemble
    for (const auto& k : pool.keys) CHECK(grads.count(k.id()) == 0);
}
