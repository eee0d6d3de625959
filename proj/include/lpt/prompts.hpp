#pragma once

#include "lpt/tensor.hpp"

namespace lpt {

struct PromptConfig {
    std::size_t layers = 4;         // L
    std::size_t shared_layers = 2;  // K, blocks 0..K-1 use only the shared prompt
    std::size_t p_len = 10;
    std::size_t dim = 32;
    std::size_t pool_size = 20;   // m
    std::size_t ensemble_k = 2;   // k
};

/// VPT-Deep style shared prompt: one p_len x d token block per layer.
struct SharedPrompt {
    std::vector<Tensor> u;
    void set_trainable(bool trainable);
    std::vector<Tensor> params() const { return u; }
};

/// Keyed pool of group prompts; entry i holds a d-dim key and L-K token blocks.
struct GroupPromptPool {
    std::vector<Tensor> keys;
    std::vector<std::vector<Tensor>> prompts;
    std::size_t size() const { return keys.size(); }
    void set_trainable(bool trainable);
    std::vector<Tensor> params() const;
};

/// Truncated normal init (+-2 std, std 0.02); keys unit-normalized afterwards.
std::pair<SharedPrompt, GroupPromptPool> init_prompts(const PromptConfig& cfg,
                                                      std::uint64_t seed);

/// Indices of the k keys most cosine-similar to q, descending, ties broken by
/// lowest index. Pure read; selection is not differentiated.
std::vector<std::size_t> match_group_prompts(const Tensor& query, const GroupPromptPool& pool,
                                             std::size_t k);

/// Elementwise mean of the selected prompts, per layer slice. Differentiable
/// into the selected pool entries.
std::vector<Tensor> ensemble_prompts(const GroupPromptPool& pool,
                                     const std::vector<std::size_t>& w);

}  // namespace lpt
