#include "lpt/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lpt/binio.hpp"
#include "lpt/ops.hpp"

namespace lpt {

using namespace ops;

std::uint64_t digest(const std::vector<Tensor>& tensors) {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& t : tensors) {
        std::uint64_t rank = t.shape().size();
        mix(&rank, sizeof rank);
        for (auto d : t.shape()) {
            std::uint64_t dd = d;
            mix(&dd, sizeof dd);
        }
        mix(t.data().data(), t.size() * sizeof(double));
    }
    return h;
}

PromptConfig ModelConfig::prompt_config() const {
    PromptConfig pc;
    pc.layers = vit.layers;
    pc.shared_layers = vit.shared_layers;
    pc.p_len = vit.p_len;
    pc.dim = vit.dim;
    pc.pool_size = pool_size;
    pc.ensemble_k = ensemble_k;
    return pc;
}

double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
    const std::size_t total = cfg.epochs * steps_per_epoch;
    const std::size_t warm = cfg.warmup_epochs * steps_per_epoch;
    if (total == 0) return 0.0;
    if (warm > 0 && step < warm) return cfg.base_lr() * double(step) / double(warm);
    double progress = total > warm ? double(step - warm) / double(total - warm) : 1.0;
    if (progress >= 1.0) return 0.0;
    return cfg.base_lr() * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void sgd_step(std::vector<Tensor>& params,
              const std::unordered_map<std::int64_t, Tensor>& grads, SgdState& state,
              double lr, const TrainConfig& cfg) {
    if (state.momenta.size() != params.size()) state.momenta.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        auto& m = state.momenta[i];
        if (m.size() != p.size()) m.assign(p.size(), 0.0);
        const double* g = nullptr;
        auto it = grads.find(p.id());
        if (it != grads.end()) {
            g = it->second.data().data();
            for (std::size_t j = 0; j < p.size(); ++j)
                if (!std::isfinite(g[j]))
                    throw std::runtime_error("sgd_step: non-finite gradient in parameter " +
                                             std::to_string(i));
        }
        for (std::size_t j = 0; j < p.size(); ++j) {
            double gj = (g ? g[j] : 0.0) + cfg.weight_decay * p[j];
            m[j] = cfg.momentum * m[j] + gj;
            p[j] -= lr * m[j];
        }
    }
}

namespace {

constexpr char kCkptMagic[5] = "LPCK";
constexpr std::uint32_t kCkptVersion = 1;

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 rng;
    if (!s.empty()) {
        std::istringstream ss(s);
        ss >> rng;
        if (ss.fail()) throw std::runtime_error("checkpoint: corrupt rng state");
    }
    return rng;
}

std::vector<Tensor> trainable_params(Checkpoint& ck) {
    ExpertModel& m = ck.model;
    std::vector<Tensor> out;
    auto append = [&out](const std::vector<Tensor>& v) { out.insert(out.end(), v.begin(), v.end()); };
    switch (ck.phase) {
        case Phase::pretrained:
            break;
        case Phase::phase1:
            append(m.shared.params());
            append(m.adapters.params());
            out.push_back(m.classifier.weight);
            break;
        case Phase::phase2:
            append(m.pool.params());
            out.push_back(m.classifier.weight);
            break;
        case Phase::joint:
            append(m.shared.params());
            append(m.adapters.params());
            append(m.pool.params());
            out.push_back(m.classifier.weight);
            break;
        case Phase::linear_probe:
            out.push_back(m.classifier.weight);
            break;
    }
    return out;
}

void apply_phase_flags(Checkpoint& ck) {
    ExpertModel& m = ck.model;
    m.backbone.set_frozen(true);
    bool early = ck.phase == Phase::phase1 || ck.phase == Phase::joint;
    bool pool = ck.phase == Phase::phase2 || ck.phase == Phase::joint;
    m.shared.set_trainable(early);
    m.adapters.set_trainable(early);
    m.pool.set_trainable(pool);
    if (m.classifier.weight.defined())
        m.classifier.weight.set_requires_grad(ck.phase != Phase::pretrained);
}

void write_tensor(std::ostream& os, const Tensor& t) {
    binio::write_u64(os, t.shape().size());
    for (auto d : t.shape()) binio::write_u64(os, d);
    binio::write_vec(os, t.data());
}

Tensor read_tensor(std::istream& is) {
    Shape shape(binio::read_u64(is));
    for (auto& d : shape) d = binio::read_u64(is);
    auto data = binio::read_vec<double>(is);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (shape.empty() || n != data.size())
        throw std::runtime_error("checkpoint: tensor shape/data mismatch");
    return Tensor(std::move(shape), std::move(data));
}

std::string format_row(std::size_t epoch, double loss_bal, double loss_ins, double lr) {
    std::ostringstream ss;
    ss << epoch << ',' << std::setprecision(17) << loss_bal << ',' << loss_ins << ',' << lr;
    return ss.str();
}

double check_finite_loss(const Tensor& loss, Phase phase, std::size_t epoch, std::size_t step) {
    double v = loss.value();
    if (!std::isfinite(v))
        throw std::runtime_error("training aborted: non-finite loss " + std::to_string(v) +
                                 " in phase " + std::to_string(std::uint32_t(phase)) +
                                 " at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step));
    return v;
}

Tensor mean_of(const std::vector<Tensor>& scalars) {
    Tensor acc = scalars[0];
    for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
    return scale(acc, 1.0 / double(scalars.size()));
}

std::size_t steps_per_epoch(const LongTailDataset& ds, const TrainConfig& cfg) {
    if (cfg.batch == 0) throw std::invalid_argument("TrainConfig: batch must be > 0");
    return (ds.train_size() + cfg.batch - 1) / cfg.batch;
}

Tensor phase1_batch_loss(ExpertModel& m, const LongTailDataset& ds, const Minibatch& mb,
                         const GclConfig& gcl, std::mt19937_64& rng) {
    std::vector<Tensor> ls;
    ls.reserve(mb.indices.size());
    for (auto idx : mb.indices) {
        auto out = vit_forward(ds.train_image(idx), m.backbone, &m.shared, &m.adapters,
                               m.classifier, ForwardPhase::phase1);
        Tensor adj = gcl_adjust(out.scores, ds.counts, gcl, rng, true);
        ls.push_back(agcl_loss(adj, ds.train_labels[idx], gcl));
    }
    return mean_of(ls);
}

Tensor phase2_sample_loss(ExpertModel& m, const LongTailDataset& ds, std::size_t idx,
                          const ForwardCache& cache, double beta, const GclConfig& gcl,
                          std::mt19937_64& rng) {
    auto w = match_group_prompts(cache.query, m.pool, m.cfg.ensemble_k);
    auto gp = ensemble_prompts(m.pool, w);
    auto out = vit_forward(ds.train_image(idx), m.backbone, &m.shared, &m.adapters,
                           m.classifier, ForwardPhase::phase2, &gp, &cache);
    std::vector<Tensor> matched;
    matched.reserve(w.size());
    for (auto i : w) matched.push_back(m.pool.keys[i]);
    return phase2_loss(out.scores, ds.train_labels[idx], cache.query, matched, beta,
                       ds.counts, gcl, rng, true);
}

/// Phase-2 style forward with the early blocks kept on the tape, so every
/// module trains together in joint mode.
ForwardOut joint_sample_forward(ExpertModel& m, const Tensor& image,
                                const std::vector<Tensor>& gp, const Tensor& query) {
    const auto& cfg = m.backbone.cfg;
    Tensor patches = patch_embed(image, m.backbone);
    Tensor z = add(patches, slice_rows(m.backbone.pos_emb, 1, 1 + cfg.num_patches()));
    Tensor c = add(m.backbone.cls_token, slice_rows(m.backbone.pos_emb, 0, 1));
    for (std::size_t l = 0; l < cfg.shared_layers; ++l) {
        std::vector<Tensor> extra;
        if (cfg.p_len > 0) extra.push_back(m.shared.u[l]);
        auto [cn, zn] = block_forward(c, z, extra, m.backbone.blocks[l], cfg, &m.adapters, l);
        c = cn;
        z = zn;
    }
    ForwardCache cache;
    cache.c_K = c;
    cache.z_K = z;
    cache.query = query;
    cache.valid = true;
    return vit_forward(image, m.backbone, &m.shared, &m.adapters, m.classifier,
                       ForwardPhase::phase2, &gp, &cache);
}

struct EpochStats {
    double loss_bal = 0.0, loss_ins = 0.0, lr = 0.0;
    std::size_t steps = 0;
    void add(double lb, double li, double step_lr) {
        loss_bal += lb;
        loss_ins += li;
        lr = step_lr;
        ++steps;
    }
    std::string row(std::size_t epoch) const {
        return format_row(epoch, loss_bal / double(steps), loss_ins / double(steps), lr);
    }
};

struct StepResult {
    Tensor total;  // combined loss on the active tape, beta weighting applied
    double loss_bal = 0.0, loss_ins = 0.0;  // unweighted per-batch means
};

/// Shared epoch driver: `step_fn(pair, beta_bal, beta_ins, rng)` builds the
/// step loss on the active tape and reports per-batch means for logging.
template <typename StepFn>
void run_epochs(Checkpoint& ck, const LongTailDataset& ds, const TrainConfig& cfg,
                std::size_t until_epoch, StepFn step_fn) {
    if (until_epoch > cfg.epochs)
        throw std::invalid_argument("train: until_epoch exceeds configured epochs");
    auto params = trainable_params(ck);
    auto rng = rng_from_string(ck.rng_state);
    const std::size_t spe = steps_per_epoch(ds, cfg);
    for (std::size_t e = ck.epochs_done; e < until_epoch; ++e) {
        ScheduleState sched{cfg.eta, cfg.epochs, e};
        const double beta_bal = beta_schedule(sched, BatchKind::balanced);
        const double beta_ins = beta_schedule(sched, BatchKind::instance);
        EpochStats stats;
        for (std::size_t step = 0; step < spe; ++step) {
            const double lr = lr_at(e * spe + step, spe, cfg);
            auto pair = dual_sample(ds, cfg.batch, rng);
            Tape tape;
            StepResult res = step_fn(pair, beta_bal, beta_ins, rng);
            check_finite_loss(res.total, ck.phase, e, step);
            auto grads = tape.backward(res.total);
            sgd_step(params, grads, ck.opt, lr, cfg);
            stats.add(res.loss_bal, res.loss_ins, lr);
        }
        ck.metrics.push_back(stats.row(e));
        ck.epochs_done = std::uint32_t(e + 1);
        ck.rng_state = rng_to_string(rng);
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    binio::write_magic(os, kCkptMagic);
    binio::write_u32(os, kCkptVersion);
    binio::write_u32(os, std::uint32_t(ck.phase));
    binio::write_u32(os, ck.epochs_done);
    binio::write_str(os, ck.config_echo);

    const ModelConfig& mc = ck.model.cfg;
    binio::write_u64(os, mc.vit.layers);
    binio::write_u64(os, mc.vit.dim);
    binio::write_u64(os, mc.vit.heads);
    binio::write_u64(os, mc.vit.patch);
    binio::write_u64(os, mc.vit.image);
    binio::write_u64(os, mc.vit.p_len);
    binio::write_u64(os, mc.vit.shared_layers);
    binio::write_u64(os, mc.vit.ffn_mult);
    binio::write_u64(os, mc.num_classes);
    binio::write_u64(os, mc.pool_size);
    binio::write_u64(os, mc.ensemble_k);
    binio::write_u64(os, mc.adapter_hidden);
    binio::write_f64(os, mc.adapter_scale);
    binio::write_f64(os, mc.sigma);

    const ExpertModel& m = ck.model;
    write_tensor(os, m.backbone.patch_w);
    write_tensor(os, m.backbone.patch_b);
    write_tensor(os, m.backbone.pos_emb);
    write_tensor(os, m.backbone.cls_token);
    write_tensor(os, m.backbone.ln_f_g);
    write_tensor(os, m.backbone.ln_f_b);
    for (const auto& blk : m.backbone.blocks)
        for (const auto& t : blk.params()) write_tensor(os, t);

    binio::write_u64(os, m.shared.u.size());
    for (const auto& t : m.shared.u) write_tensor(os, t);

    binio::write_u64(os, m.pool.size());
    for (const auto& k : m.pool.keys) write_tensor(os, k);
    for (const auto& entry : m.pool.prompts) {
        binio::write_u64(os, entry.size());
        for (const auto& t : entry) write_tensor(os, t);
    }

    binio::write_u64(os, m.adapters.down_w.size());
    for (std::size_t l = 0; l < m.adapters.down_w.size(); ++l) {
        write_tensor(os, m.adapters.down_w[l]);
        write_tensor(os, m.adapters.down_b[l]);
        write_tensor(os, m.adapters.up_w[l]);
        write_tensor(os, m.adapters.up_b[l]);
    }

    binio::write_u32(os, m.classifier.weight.defined() ? 1u : 0u);
    if (m.classifier.weight.defined()) write_tensor(os, m.classifier.weight);

    binio::write_u64(os, ck.backbone_digest);
    binio::write_u64(os, ck.opt.momenta.size());
    for (const auto& v : ck.opt.momenta) binio::write_vec(os, v);
    binio::write_str(os, ck.rng_state);
    binio::write_u64(os, ck.metrics.size());
    for (const auto& row : ck.metrics) binio::write_str(os, row);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    binio::expect_magic(is, kCkptMagic, "load_checkpoint");
    if (auto v = binio::read_u32(is); v != kCkptVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(v));
    Checkpoint ck;
    ck.phase = Phase(binio::read_u32(is));
    ck.epochs_done = binio::read_u32(is);
    ck.config_echo = binio::read_str(is);

    ModelConfig mc;
    mc.vit.layers = binio::read_u64(is);
    mc.vit.dim = binio::read_u64(is);
    mc.vit.heads = binio::read_u64(is);
    mc.vit.patch = binio::read_u64(is);
    mc.vit.image = binio::read_u64(is);
    mc.vit.p_len = binio::read_u64(is);
    mc.vit.shared_layers = binio::read_u64(is);
    mc.vit.ffn_mult = binio::read_u64(is);
    mc.num_classes = binio::read_u64(is);
    mc.pool_size = binio::read_u64(is);
    mc.ensemble_k = binio::read_u64(is);
    mc.adapter_hidden = binio::read_u64(is);
    mc.adapter_scale = binio::read_f64(is);
    mc.sigma = binio::read_f64(is);
    mc.vit.validate();
    ck.model.cfg = mc;

    ExpertModel& m = ck.model;
    m.backbone.cfg = mc.vit;
    m.backbone.patch_w = read_tensor(is);
    m.backbone.patch_b = read_tensor(is);
    m.backbone.pos_emb = read_tensor(is);
    m.backbone.cls_token = read_tensor(is);
    m.backbone.ln_f_g = read_tensor(is);
    m.backbone.ln_f_b = read_tensor(is);
    for (std::size_t l = 0; l < mc.vit.layers; ++l) {
        BlockParams blk;
        blk.wq = read_tensor(is);
        blk.bq = read_tensor(is);
        blk.wk = read_tensor(is);
        blk.bk = read_tensor(is);
        blk.wv = read_tensor(is);
        blk.bv = read_tensor(is);
        blk.wo = read_tensor(is);
        blk.bo = read_tensor(is);
        blk.ln1_g = read_tensor(is);
        blk.ln1_b = read_tensor(is);
        blk.ln2_g = read_tensor(is);
        blk.ln2_b = read_tensor(is);
        blk.ffn_w1 = read_tensor(is);
        blk.ffn_b1 = read_tensor(is);
        blk.ffn_w2 = read_tensor(is);
        blk.ffn_b2 = read_tensor(is);
        m.backbone.blocks.push_back(std::move(blk));
    }

    m.shared.u.resize(binio::read_u64(is));
    for (auto& t : m.shared.u) t = read_tensor(is);

    std::size_t pool_n = binio::read_u64(is);
    m.pool.keys.resize(pool_n);
    for (auto& k : m.pool.keys) k = read_tensor(is);
    m.pool.prompts.resize(pool_n);
    for (auto& entry : m.pool.prompts) {
        entry.resize(binio::read_u64(is));
        for (auto& t : entry) t = read_tensor(is);
    }

    std::size_t ad_layers = binio::read_u64(is);
    m.adapters.hidden = mc.adapter_hidden;
    m.adapters.scale = mc.adapter_scale;
    for (std::size_t l = 0; l < ad_layers; ++l) {
        m.adapters.down_w.push_back(read_tensor(is));
        m.adapters.down_b.push_back(read_tensor(is));
        m.adapters.up_w.push_back(read_tensor(is));
        m.adapters.up_b.push_back(read_tensor(is));
    }

    if (binio::read_u32(is)) m.classifier.weight = read_tensor(is);
    m.classifier.sigma = mc.sigma;

    ck.backbone_digest = binio::read_u64(is);
    ck.opt.momenta.resize(binio::read_u64(is));
    for (auto& v : ck.opt.momenta) v = binio::read_vec<double>(is);
    ck.rng_state = binio::read_str(is);
    ck.metrics.resize(binio::read_u64(is));
    for (auto& row : ck.metrics) row = binio::read_str(is);

    if (ck.model.backbone_digest() != ck.backbone_digest)
        throw std::runtime_error("load_checkpoint: backbone digest mismatch in " + path);
    apply_phase_flags(ck);
    return ck;
}

BackboneParams pretrain_backbone(const LongTailDataset& source, const ModelConfig& mcfg,
                                 const TrainConfig& cfg) {
    auto bb = BackboneParams::init(mcfg.vit, cfg.seed);
    bb.set_frozen(false);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const std::size_t d = mcfg.vit.dim, C = source.num_classes;
    Tensor head_w = Tensor::randn(Shape{d, C}, rng, std::sqrt(2.0 / double(d + C)));
    Tensor head_b(Shape{C});
    head_w.set_requires_grad(true);
    head_b.set_requires_grad(true);

    ClassifierParams unused;
    unused.weight = Tensor(Shape{1, d}, 1.0);
    auto params = bb.params();
    params.push_back(head_w);
    params.push_back(head_b);
    SgdState opt;
    const std::size_t spe = steps_per_epoch(source, cfg);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        for (std::size_t step = 0; step < spe; ++step) {
            const double lr = lr_at(e * spe + step, spe, cfg);
            auto mb = instance_balanced_batch(source, cfg.batch, rng);
            Tape tape;
            std::vector<Tensor> ls;
            ls.reserve(mb.indices.size());
            for (auto idx : mb.indices) {
                auto out = vit_forward(source.train_image(idx), bb, nullptr, nullptr, unused,
                                       ForwardPhase::frozen);
                Tensor logits = reshape(
                    add_bias(matmul(reshape(out.feature, Shape{1, d}), head_w), head_b),
                    Shape{C});
                ls.push_back(cross_entropy(logits, source.train_labels[idx]));
            }
            Tensor loss = mean_of(ls);
            check_finite_loss(loss, Phase::pretrained, e, step);
            auto grads = tape.backward(loss);
            sgd_step(params, grads, opt, lr, cfg);
        }
    }
    bb.set_frozen(true);
    return bb;
}

Tensor frozen_feature(const ExpertModel& model, const Tensor& image) {
    ClassifierParams unused;
    unused.weight = Tensor(Shape{1, model.cfg.vit.dim}, 1.0);
    return vit_forward(image, model.backbone, nullptr, nullptr, unused, ForwardPhase::frozen)
        .feature;
}

ClassifierParams class_centric_init(const ExpertModel& model, const LongTailDataset& target) {
    const std::size_t C = target.num_classes, d = model.cfg.vit.dim;
    std::vector<std::string> missing;
    for (std::size_t c = 0; c < C; ++c)
        if (target.counts.n[c] == 0) missing.push_back(std::to_string(c));
    if (!missing.empty()) {
        std::string ids;
        for (const auto& s : missing) ids += (ids.empty() ? "" : ", ") + s;
        throw std::invalid_argument("class_centric_init: classes without samples: " + ids);
    }

    ClassifierParams cls;
    cls.sigma = model.cfg.sigma;
    cls.weight = Tensor(Shape{C, d});
    for (std::size_t i = 0; i < target.train_size(); ++i) {
        Tensor f = frozen_feature(model, target.train_image(i));
        std::size_t c = target.train_labels[i];
        for (std::size_t j = 0; j < d; ++j) cls.weight[c * d + j] += f[j];
    }
    for (std::size_t c = 0; c < C; ++c) {
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            cls.weight[c * d + j] /= double(target.counts.n[c]);
            norm += cls.weight[c * d + j] * cls.weight[c * d + j];
        }
        norm = std::max(std::sqrt(norm), 1e-12);
        for (std::size_t j = 0; j < d; ++j) cls.weight[c * d + j] /= norm;
    }
    return cls;
}

namespace {

Checkpoint assemble(BackboneParams backbone, const ModelConfig& mcfg,
                    const LongTailDataset& target, const TrainConfig& cfg, Phase phase) {
    Checkpoint ck;
    ck.phase = phase;
    ck.model.cfg = mcfg;
    ck.model.backbone = std::move(backbone);
    auto [shared, pool] = init_prompts(mcfg.prompt_config(), cfg.seed);
    ck.model.shared = std::move(shared);
    ck.model.pool = std::move(pool);
    ck.model.adapters = AdapterParams::init(mcfg.vit, mcfg.adapter_hidden, mcfg.adapter_scale,
                                            cfg.seed + 1);
    ck.model.classifier = class_centric_init(ck.model, target);
    ck.backbone_digest = ck.model.backbone_digest();
    ck.rng_state = rng_to_string(std::mt19937_64(cfg.seed + 2));
    apply_phase_flags(ck);
    return ck;
}

}  // namespace

Checkpoint init_phase1(BackboneParams backbone, const ModelConfig& mcfg,
                       const LongTailDataset& target, const TrainConfig& cfg) {
    return assemble(std::move(backbone), mcfg, target, cfg, Phase::phase1);
}

void train_phase1(Checkpoint& ck, const LongTailDataset& target, const TrainConfig& cfg,
                  const GclConfig& gcl, std::size_t until_epoch) {
    if (ck.phase != Phase::phase1)
        throw std::invalid_argument("train_phase1: checkpoint is not in phase 1");
    run_epochs(ck, target, cfg, until_epoch,
               [&](const BatchPair& pair, double beta_bal, double beta_ins,
                   std::mt19937_64& rng) {
                   Tensor lb = phase1_batch_loss(ck.model, target, pair.bal, gcl, rng);
                   Tensor li = phase1_batch_loss(ck.model, target, pair.ins, gcl, rng);
                   Tensor total = add(scale(lb, beta_bal), scale(li, beta_ins));
                   return StepResult{total, lb.value(), li.value()};
               });
}

void init_phase2(Checkpoint& ck, const TrainConfig& cfg) {
    if (ck.phase != Phase::phase1)
        throw std::invalid_argument("init_phase2: requires a phase-1 checkpoint");
    ck.phase = Phase::phase2;
    ck.epochs_done = 0;
    ck.opt = SgdState{};  // fresh momenta for the new trainable set
    ck.rng_state = rng_to_string(std::mt19937_64(cfg.seed + 3));
    ck.metrics.clear();
    apply_phase_flags(ck);
}

void train_phase2(Checkpoint& ck, const LongTailDataset& target, const TrainConfig& cfg,
                  const GclConfig& gcl, std::size_t until_epoch) {
    if (ck.phase != Phase::phase2)
        throw std::invalid_argument("train_phase2: checkpoint is not in phase 2");
    // The query and (c_K, z_K) depend only on modules frozen in this phase,
    // so one pass over the train split serves every epoch.
    std::vector<ForwardCache> caches(target.train_size());
    for (std::size_t i = 0; i < target.train_size(); ++i)
        caches[i] = vit_forward(target.train_image(i), ck.model.backbone, &ck.model.shared,
                                &ck.model.adapters, ck.model.classifier, ForwardPhase::phase1)
                        .cache;
    auto batch_loss = [&](const Minibatch& mb, double beta, std::mt19937_64& rng) {
        std::vector<Tensor> ls;
        ls.reserve(mb.indices.size());
        for (auto idx : mb.indices)
            ls.push_back(phase2_sample_loss(ck.model, target, idx, caches[idx], beta, gcl, rng));
        return mean_of(ls);
    };
    run_epochs(ck, target, cfg, until_epoch,
               [&](const BatchPair& pair, double beta_bal, double beta_ins,
                   std::mt19937_64& rng) {
                   // beta enters the per-sample objective; batches sum unweighted
                   Tensor lb = batch_loss(pair.bal, beta_bal, rng);
                   Tensor li = batch_loss(pair.ins, beta_ins, rng);
                   return StepResult{add(lb, li), lb.value(), li.value()};
               });
}

Checkpoint run_phase1(BackboneParams backbone, const ModelConfig& mcfg,
                      const LongTailDataset& target, const TrainConfig& cfg,
                      const GclConfig& gcl) {
    Checkpoint ck = init_phase1(std::move(backbone), mcfg, target, cfg);
    train_phase1(ck, target, cfg, gcl, cfg.epochs);
    return ck;
}

void run_phase2(Checkpoint& ck, const LongTailDataset& target, const TrainConfig& cfg,
                const GclConfig& gcl) {
    init_phase2(ck, cfg);
    train_phase2(ck, target, cfg, gcl, cfg.epochs);
}

Checkpoint init_joint(BackboneParams backbone, const ModelConfig& mcfg,
                      const LongTailDataset& target, const TrainConfig& cfg) {
    return assemble(std::move(backbone), mcfg, target, cfg, Phase::joint);
}

void train_joint(Checkpoint& ck, const LongTailDataset& target, const TrainConfig& cfg,
                 const GclConfig& gcl, std::size_t until_epoch) {
    if (ck.phase != Phase::joint)
        throw std::invalid_argument("train_joint: checkpoint is not in joint mode");
    auto sample_loss = [&](std::size_t idx, double beta, std::mt19937_64& rng) {
        Tensor query;
        {
            // matching query from the model's own phase-1 style pass, detached
            query = vit_forward(target.train_image(idx), ck.model.backbone, &ck.model.shared,
                                &ck.model.adapters, ck.model.classifier, ForwardPhase::phase1)
                        .cache.query;
        }
        auto w = match_group_prompts(query, ck.model.pool, ck.model.cfg.ensemble_k);
        auto gp = ensemble_prompts(ck.model.pool, w);
        auto out = joint_sample_forward(ck.model, target.train_image(idx), gp, query);
        std::vector<Tensor> matched;
        matched.reserve(w.size());
        for (auto i : w) matched.push_back(ck.model.pool.keys[i]);
        return phase2_loss(out.scores, target.train_labels[idx], query, matched, beta,
                           target.counts, gcl, rng, true);
    };
    auto batch_loss = [&](const Minibatch& mb, double beta, std::mt19937_64& rng) {
        std::vector<Tensor> ls;
        ls.reserve(mb.indices.size());
        for (auto idx : mb.indices) ls.push_back(sample_loss(idx, beta, rng));
        return mean_of(ls);
    };
    run_epochs(ck, target, cfg, until_epoch,
               [&](const BatchPair& pair, double beta_bal, double beta_ins,
                   std::mt19937_64& rng) {
                   Tensor lb = batch_loss(pair.bal, beta_bal, rng);
                   Tensor li = batch_loss(pair.ins, beta_ins, rng);
                   return StepResult{add(lb, li), lb.value(), li.value()};
               });
}

Checkpoint train_linear_probe(BackboneParams backbone, const ModelConfig& mcfg,
                              const LongTailDataset& target, const TrainConfig& cfg,
                              const GclConfig& gcl) {
    Checkpoint ck;
    ck.phase = Phase::linear_probe;
    ck.model.cfg = mcfg;
    ck.model.backbone = std::move(backbone);
    ck.model.classifier = class_centric_init(ck.model, target);
    ck.backbone_digest = ck.model.backbone_digest();
    ck.rng_state = rng_to_string(std::mt19937_64(cfg.seed + 2));
    apply_phase_flags(ck);

    std::vector<Tensor> feats(target.train_size());
    for (std::size_t i = 0; i < target.train_size(); ++i)
        feats[i] = frozen_feature(ck.model, target.train_image(i));
    auto batch_loss = [&](const Minibatch& mb, std::mt19937_64& rng) {
        std::vector<Tensor> ls;
        ls.reserve(mb.indices.size());
        for (auto idx : mb.indices) {
            Tensor scores = cosine_scores(ck.model.classifier.weight, feats[idx],
                                          ck.model.classifier.sigma);
            Tensor adj = gcl_adjust(scores, target.counts, gcl, rng, true);
            ls.push_back(agcl_loss(adj, target.train_labels[idx], gcl));
        }
        return mean_of(ls);
    };
    run_epochs(ck, target, cfg, cfg.epochs,
               [&](const BatchPair& pair, double beta_bal, double beta_ins,
                   std::mt19937_64& rng) {
                   Tensor lb = batch_loss(pair.bal, rng);
                   Tensor li = batch_loss(pair.ins, rng);
                   Tensor total = add(scale(lb, beta_bal), scale(li, beta_ins));
                   return StepResult{total, lb.value(), li.value()};
               });
    return ck;
}

Tensor forward_eval(const ExpertModel& model, const Tensor& image, Phase phase) {
    switch (phase) {
        case Phase::pretrained:
        case Phase::linear_probe:
            return vit_forward(image, model.backbone, nullptr, nullptr, model.classifier,
                               ForwardPhase::frozen)
                .scores;
        case Phase::phase1:
            return vit_forward(image, model.backbone, &model.shared, &model.adapters,
                               model.classifier, ForwardPhase::phase1)
                .scores;
        case Phase::phase2:
        case Phase::joint: {
            auto first = vit_forward(image, model.backbone, &model.shared, &model.adapters,
                                     model.classifier, ForwardPhase::phase1);
            auto w = match_group_prompts(first.cache.query, model.pool, model.cfg.ensemble_k);
            auto gp = ensemble_prompts(model.pool, w);
            return vit_forward(image, model.backbone, &model.shared, &model.adapters,
                               model.classifier, ForwardPhase::phase2, &gp, &first.cache)
                .scores;
        }
    }
    throw std::invalid_argument("forward_eval: unknown phase");
}

Tensor adapted_feature(const ExpertModel& model, const Tensor& image, Phase phase) {
    switch (phase) {
        case Phase::pretrained:
        case Phase::linear_probe:
            return frozen_feature(model, image);
        case Phase::phase1:
            return vit_forward(image, model.backbone, &model.shared, &model.adapters,
                               model.classifier, ForwardPhase::phase1)
                .feature;
        case Phase::phase2:
        case Phase::joint: {
            auto first = vit_forward(image, model.backbone, &model.shared, &model.adapters,
                                     model.classifier, ForwardPhase::phase1);
            auto w = match_group_prompts(first.cache.query, model.pool, model.cfg.ensemble_k);
            auto gp = ensemble_prompts(model.pool, w);
            return vit_forward(image, model.backbone, &model.shared, &model.adapters,
                               model.classifier, ForwardPhase::phase2, &gp, &first.cache)
                .feature;
        }
    }
    throw std::invalid_argument("adapted_feature: unknown phase");
}

}  // namespace lpt
