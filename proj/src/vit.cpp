#include "lpt/vit.hpp"

#include <cmath>

#include "lpt/ops.hpp"

namespace lpt {

using namespace ops;

namespace {

Tensor xavier(Shape shape, std::mt19937_64& rng) {
    double fan_in = double(shape[0]), fan_out = double(shape.back());
    return Tensor::randn(shape, rng, std::sqrt(2.0 / (fan_in + fan_out)));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    std::vector<Tensor> tr;
    tr.reserve(parts.size());
    for (const auto& p : parts) tr.push_back(transpose(p));
    return transpose(concat_rows(tr));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_bias(matmul(x, w), b);
}

}  // namespace

void ViTConfig::validate() const {
    if (dim % heads != 0)
        throw std::invalid_argument("ViTConfig: dim " + std::to_string(dim) +
                                    " not divisible by heads " + std::to_string(heads));
    if (image % patch != 0)
        throw std::invalid_argument("ViTConfig: image side " + std::to_string(image) +
                                    " not divisible by patch side " + std::to_string(patch));
    if (shared_layers > layers)
        throw std::invalid_argument("ViTConfig: shared_layers exceeds layer count");
}

std::vector<Tensor> BlockParams::params() const {
    return {wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, ln2_g, ln2_b,
            ffn_w1, ffn_b1, ffn_w2, ffn_b2};
}

BackboneParams BackboneParams::init(const ViTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.dim;
    BackboneParams bb;
    bb.cfg = cfg;
    bb.patch_w = xavier(Shape{cfg.patch_dim(), d}, rng);
    bb.patch_b = Tensor(Shape{d});
    bb.pos_emb = Tensor::trunc_normal(Shape{1 + cfg.num_patches(), d}, rng, 0.02);
    bb.cls_token = Tensor::trunc_normal(Shape{1, d}, rng, 0.02);
    bb.ln_f_g = Tensor(Shape{d}, 1.0);
    bb.ln_f_b = Tensor(Shape{d});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        BlockParams blk;
        blk.wq = xavier(Shape{d, d}, rng);
        blk.bq = Tensor(Shape{d});
        blk.wk = xavier(Shape{d, d}, rng);
        blk.bk = Tensor(Shape{d});
        blk.wv = xavier(Shape{d, d}, rng);
        blk.bv = Tensor(Shape{d});
        blk.wo = xavier(Shape{d, d}, rng);
        blk.bo = Tensor(Shape{d});
        blk.ln1_g = Tensor(Shape{d}, 1.0);
        blk.ln1_b = Tensor(Shape{d});
        blk.ln2_g = Tensor(Shape{d}, 1.0);
        blk.ln2_b = Tensor(Shape{d});
        blk.ffn_w1 = xavier(Shape{d, cfg.ffn_mult * d}, rng);
        blk.ffn_b1 = Tensor(Shape{cfg.ffn_mult * d});
        blk.ffn_w2 = xavier(Shape{cfg.ffn_mult * d, d}, rng);
        blk.ffn_b2 = Tensor(Shape{d});
        bb.blocks.push_back(std::move(blk));
    }
    return bb;
}

std::vector<Tensor> BackboneParams::params() const {
    std::vector<Tensor> out = {patch_w, patch_b, pos_emb, cls_token, ln_f_g, ln_f_b};
    for (const auto& blk : blocks) {
        auto bp = blk.params();
        out.insert(out.end(), bp.begin(), bp.end());
    }
    return out;
}

void BackboneParams::set_frozen(bool f) {
    frozen = f;
    for (auto& t : params()) t.set_requires_grad(!f);
}

AdapterParams AdapterParams::init(const ViTConfig& cfg, std::size_t hidden, double scale,
                                  std::uint64_t seed) {
    if (scale <= 0.0) throw std::invalid_argument("AdapterParams: scale must be > 0");
    std::mt19937_64 rng(seed);
    AdapterParams ad;
    ad.hidden = hidden;
    ad.scale = scale;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        ad.down_w.push_back(xavier(Shape{cfg.dim, hidden}, rng));
        ad.down_b.push_back(Tensor(Shape{hidden}));
        ad.up_w.push_back(Tensor(Shape{hidden, cfg.dim}));  // zero: identity at init
        ad.up_b.push_back(Tensor(Shape{cfg.dim}));
    }
    return ad;
}

std::vector<Tensor> AdapterParams::params() const {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < down_w.size(); ++l) {
        out.push_back(down_w[l]);
        out.push_back(down_b[l]);
        out.push_back(up_w[l]);
        out.push_back(up_b[l]);
    }
    return out;
}

void AdapterParams::set_trainable(bool trainable) {
    for (auto& t : params()) t.set_requires_grad(trainable);
}

Tensor cosine_classify(const Tensor& feature, const ClassifierParams& cls) {
    return cosine_scores(cls.weight, feature, cls.sigma);
}

Tensor patch_embed(const Tensor& image, const BackboneParams& bb) {
    const auto& cfg = bb.cfg;
    if (image.size() != cfg.image * cfg.image)
        throw std::invalid_argument("patch_embed: image size " + std::to_string(image.size()) +
                                    " does not match side " + std::to_string(cfg.image));
    const std::size_t grid = cfg.image / cfg.patch;
    Tensor patches(Shape{grid * grid, cfg.patch_dim()});
    for (std::size_t py = 0; py < grid; ++py)
        for (std::size_t px = 0; px < grid; ++px) {
            std::size_t row = py * grid + px;
            for (std::size_t y = 0; y < cfg.patch; ++y)
                for (std::size_t x = 0; x < cfg.patch; ++x)
                    patches[row * cfg.patch_dim() + y * cfg.patch + x] =
                        image[(py * cfg.patch + y) * cfg.image + px * cfg.patch + x];
        }
    return linear(patches, bb.patch_w, bb.patch_b);
}

std::pair<Tensor, Tensor> block_forward(const Tensor& c, const Tensor& z,
                                        const std::vector<Tensor>& extra_kv,
                                        const BlockParams& blk, const ViTConfig& cfg,
                                        const AdapterParams* adapters, std::size_t layer) {
    if (c.cols() != cfg.dim || z.cols() != cfg.dim)
        throw std::invalid_argument("block_forward: token dim mismatch, expected " +
                                    std::to_string(cfg.dim));
    if (layer >= cfg.layers) throw std::invalid_argument("block_forward: layer out of range");

    Tensor x = concat_rows({c, z});
    const std::size_t T = x.rows();
    Tensor ext = x;
    if (!extra_kv.empty()) {
        std::vector<Tensor> parts = {x};
        parts.insert(parts.end(), extra_kv.begin(), extra_kv.end());
        ext = concat_rows(parts);
    }
    Tensor h = layer_norm(ext, blk.ln1_g, blk.ln1_b);
    Tensor hq = extra_kv.empty() ? h : slice_rows(h, 0, T);
    Tensor Q = linear(hq, blk.wq, blk.bq);
    Tensor K = linear(h, blk.wk, blk.bk);
    Tensor V = linear(h, blk.wv, blk.bv);

    const std::size_t dh = cfg.dim / cfg.heads;
    std::vector<Tensor> head_out;
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
        Tensor Qh = slice_cols(Q, hd * dh, (hd + 1) * dh);
        Tensor Kh = slice_cols(K, hd * dh, (hd + 1) * dh);
        Tensor Vh = slice_cols(V, hd * dh, (hd + 1) * dh);
        Tensor attn = softmax(scale(matmul(Qh, transpose(Kh)), 1.0 / std::sqrt(double(dh))), 1);
        head_out.push_back(matmul(attn, Vh));
    }
    Tensor attn_out = linear(cfg.heads == 1 ? head_out[0] : concat_cols(head_out), blk.wo, blk.bo);
    Tensor x2 = add(x, attn_out);

    Tensor f_in = layer_norm(x2, blk.ln2_g, blk.ln2_b);
    Tensor ffn = linear(activation(linear(f_in, blk.ffn_w1, blk.ffn_b1), Act::gelu), blk.ffn_w2,
                        blk.ffn_b2);
    Tensor out = add(x2, ffn);
    if (adapters) {
        Tensor ad = linear(activation(linear(f_in, adapters->down_w[layer],
                                             adapters->down_b[layer]),
                                      Act::relu),
                           adapters->up_w[layer], adapters->up_b[layer]);
        out = add(out, scale(ad, adapters->scale));
    }
    return {slice_rows(out, 0, 1), slice_rows(out, 1, T)};
}

ForwardOut vit_forward(const Tensor& image, const BackboneParams& bb,
                       const SharedPrompt* prompts, const AdapterParams* adapters,
                       const ClassifierParams& cls, ForwardPhase phase,
                       const std::vector<Tensor>* group_prompt, const ForwardCache* cache) {
    const auto& cfg = bb.cfg;
    const std::size_t K = cfg.shared_layers, L = cfg.layers;
    ForwardOut out;

    Tensor c, z;
    std::size_t first_layer = 0;
    if (phase == ForwardPhase::phase2) {
        if (!cache || !cache->valid)
            throw std::invalid_argument(
                "vit_forward: phase2 requires a valid phase-1 forward cache");
        if (!prompts)
            throw std::invalid_argument("vit_forward: phase2 requires the shared prompt");
        if (!group_prompt || group_prompt->size() != L - K)
            throw std::invalid_argument("vit_forward: phase2 requires " + std::to_string(L - K) +
                                        " group prompt slices");
        c = cache->c_K;
        z = cache->z_K;
        first_layer = K;
    } else {
        if (phase == ForwardPhase::phase1 && !prompts)
            throw std::invalid_argument("vit_forward: phase1 requires the shared prompt");
        Tensor patches = patch_embed(image, bb);
        z = add(patches, slice_rows(bb.pos_emb, 1, 1 + cfg.num_patches()));
        c = add(bb.cls_token, slice_rows(bb.pos_emb, 0, 1));
        if (phase == ForwardPhase::phase1 && K == 0) {
            out.cache.c_K = c.clone();
            out.cache.z_K = z.clone();
        }
    }

    for (std::size_t l = first_layer; l < L; ++l) {
        std::vector<Tensor> extra;
        if (phase != ForwardPhase::frozen && prompts && cfg.p_len > 0)
            extra.push_back(prompts->u[l]);
        if (phase == ForwardPhase::phase2 && l >= K) extra.push_back((*group_prompt)[l - K]);
        auto [cn, zn] = block_forward(c, z, extra, bb.blocks[l],
                                      cfg, phase == ForwardPhase::frozen ? nullptr : adapters, l);
        c = cn;
        z = zn;
        if (phase == ForwardPhase::phase1 && l + 1 == K) {
            out.cache.c_K = c.clone();
            out.cache.z_K = z.clone();
        }
    }

    Tensor feature = reshape(layer_norm(c, bb.ln_f_g, bb.ln_f_b), Shape{cfg.dim});
    out.feature = feature;
    out.scores = cosine_classify(feature, cls);
    if (phase == ForwardPhase::phase1) {
        out.cache.query = feature.clone();
        out.cache.valid = out.cache.c_K.defined();
    }
    return out;
}

}  // namespace lpt
