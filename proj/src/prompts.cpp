#include "lpt/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lpt/ops.hpp"

namespace lpt {

void SharedPrompt::set_trainable(bool trainable) {
    for (auto& t : u) t.set_requires_grad(trainable);
}

void GroupPromptPool::set_trainable(bool trainable) {
    for (auto& k : keys) k.set_requires_grad(trainable);
    for (auto& entry : prompts)
        for (auto& t : entry) t.set_requires_grad(trainable);
}

std::vector<Tensor> GroupPromptPool::params() const {
    std::vector<Tensor> out = keys;
    for (const auto& entry : prompts) out.insert(out.end(), entry.begin(), entry.end());
    return out;
}

std::pair<SharedPrompt, GroupPromptPool> init_prompts(const PromptConfig& cfg,
                                                      std::uint64_t seed) {
    if (cfg.shared_layers > cfg.layers)
        throw std::invalid_argument("init_prompts: shared_layers exceeds layer count");
    std::mt19937_64 rng(seed);
    constexpr double kStd = 0.02;

    SharedPrompt shared;
    for (std::size_t l = 0; l < cfg.layers; ++l)
        shared.u.push_back(Tensor::trunc_normal(Shape{cfg.p_len, cfg.dim}, rng, kStd));

    GroupPromptPool pool;
    const std::size_t deep = cfg.layers - cfg.shared_layers;
    for (std::size_t i = 0; i < cfg.pool_size; ++i) {
        Tensor key = Tensor::trunc_normal(Shape{cfg.dim}, rng, kStd);
        double norm = 0.0;
        for (std::size_t j = 0; j < key.size(); ++j) norm += key[j] * key[j];
        norm = std::max(std::sqrt(norm), 1e-12);
        for (std::size_t j = 0; j < key.size(); ++j) key[j] /= norm;
        pool.keys.push_back(key);
        std::vector<Tensor> entry;
        for (std::size_t l = 0; l < deep; ++l)
            entry.push_back(Tensor::trunc_normal(Shape{cfg.p_len, cfg.dim}, rng, kStd));
        pool.prompts.push_back(std::move(entry));
    }
    return {std::move(shared), std::move(pool)};
}

std::vector<std::size_t> match_group_prompts(const Tensor& query, const GroupPromptPool& pool,
                                             std::size_t k) {
    const std::size_t m = pool.size();
    if (k < 1 || k > m)
        throw std::invalid_argument("match_group_prompts: k=" + std::to_string(k) +
                                    " out of [1, " + std::to_string(m) + "]");
    double qn = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) qn += query[i] * query[i];
    qn = std::sqrt(qn);
    if (qn < 1e-12)
        throw std::invalid_argument("match_group_prompts: degenerate zero-norm query");

    std::vector<double> sims(m);
    for (std::size_t i = 0; i < m; ++i) {
        const Tensor& key = pool.keys[i];
        double dot = 0.0, kn = 0.0;
        for (std::size_t j = 0; j < key.size(); ++j) {
            dot += key[j] * query[j];
            kn += key[j] * key[j];
        }
        sims[i] = dot / (qn * std::max(std::sqrt(kn), 1e-12));
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    order.resize(k);
    return order;
}

std::vector<Tensor> ensemble_prompts(const GroupPromptPool& pool,
                                     const std::vector<std::size_t>& w) {
    if (w.empty()) throw std::invalid_argument("ensemble_prompts: empty selection");
    for (auto i : w)
        if (i >= pool.size())
            throw std::invalid_argument("ensemble_prompts: index " + std::to_string(i) +
                                        " out of pool");
    const std::size_t deep = pool.prompts[w[0]].size();
    std::vector<Tensor> out;
    out.reserve(deep);
    for (std::size_t l = 0; l < deep; ++l) {
        Tensor acc = pool.prompts[w[0]][l];
        for (std::size_t i = 1; i < w.size(); ++i) acc = ops::add(acc, pool.prompts[w[i]][l]);
        out.push_back(ops::scale(acc, 1.0 / double(w.size())));
    }
    return out;
}

}  // namespace lpt
