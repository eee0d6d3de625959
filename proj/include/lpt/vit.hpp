#pragma once

#include <optional>

#include "lpt/prompts.hpp"
#include "lpt/tensor.hpp"

namespace lpt {

struct ViTConfig {
    std::size_t layers = 4;         // L
    std::size_t dim = 32;           // d, divisible by heads
    std::size_t heads = 2;
    std::size_t patch = 4;
    std::size_t image = 16;         // divisible by patch
    std::size_t p_len = 10;
    std::size_t shared_layers = 2;  // K
    std::size_t ffn_mult = 4;

    void validate() const;
    std::size_t num_patches() const { return (image / patch) * (image / patch); }
    std::size_t patch_dim() const { return patch * patch; }
};

struct BlockParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    std::vector<Tensor> params() const;
};

struct BackboneParams {
    ViTConfig cfg;
    Tensor patch_w, patch_b;  // patch_dim x d, d
    Tensor pos_emb;           // (1 + num_patches) x d, row 0 for the class token
    Tensor cls_token;         // 1 x d
    Tensor ln_f_g, ln_f_b;    // final norm before the classifier
    std::vector<BlockParams> blocks;
    bool frozen = false;

    static BackboneParams init(const ViTConfig& cfg, std::uint64_t seed);
    std::vector<Tensor> params() const;
    void set_frozen(bool f);
};

struct AdapterParams {
    std::vector<Tensor> down_w, down_b, up_w, up_b;  // per layer
    double scale = 0.1;
    std::size_t hidden = 8;

    /// up-projection starts at zero so the adapter is an exact no-op
    static AdapterParams init(const ViTConfig& cfg, std::size_t hidden, double scale,
                              std::uint64_t seed);
    std::vector<Tensor> params() const;
    void set_trainable(bool trainable);
};

struct ClassifierParams {
    Tensor weight;        // C x d
    double sigma = 16.0;  // logit scale
};

/// s_i = sigma * cos(theta_i, feature), norms floored at 1e-12
Tensor cosine_classify(const Tensor& feature, const ClassifierParams& cls);

/// image (side*side floats) -> patch tokens, no position term
Tensor patch_embed(const Tensor& image, const BackboneParams& bb);

/// One transformer block. Prompt tokens in extra_kv extend keys/values only;
/// queries never include them. With adapters, the FFN gains a parallel
/// down-act-up branch on the same normalized input, scaled by adapters->scale.
std::pair<Tensor, Tensor> block_forward(const Tensor& c, const Tensor& z,
                                        const std::vector<Tensor>& extra_kv,
                                        const BlockParams& blk, const ViTConfig& cfg,
                                        const AdapterParams* adapters, std::size_t layer);

enum class ForwardPhase { frozen, phase1, phase2 };

struct ForwardCache {
    Tensor c_K, z_K;  // tokens after block K, detached
    Tensor query;     // phase-1 final class feature c_L, detached
    bool valid = false;
};

struct ForwardOut {
    Tensor scores;   // cosine classifier logits, length C
    Tensor feature;  // normalized final class token input to the classifier
    ForwardCache cache;
};

/// frozen: no prompts/adapters. phase1: shared prompt in every layer plus
/// adapters; fills the cache with (c_K, z_K) and the query feature. phase2:
/// resumes from a phase-1 cache and reruns blocks K..L-1 with both the shared
/// prompt and the ensembled group prompt slices.
ForwardOut vit_forward(const Tensor& image, const BackboneParams& bb,
                       const SharedPrompt* prompts, const AdapterParams* adapters,
                       const ClassifierParams& cls, ForwardPhase phase,
                       const std::vector<Tensor>* group_prompt = nullptr,
                       const ForwardCache* cache = nullptr);

}  // namespace lpt
