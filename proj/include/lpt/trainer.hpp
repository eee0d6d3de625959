#pragma once

#include <optional>
#include <string>

#include "lpt/data.hpp"
#include "lpt/losses.hpp"
#include "lpt/vit.hpp"

namespace lpt {

/// FNV-1a over shapes and raw float64 bytes, in list order.
std::uint64_t digest(const std::vector<Tensor>& tensors);

struct ModelConfig {
    ViTConfig vit;
    std::size_t num_classes = 30;
    std::size_t pool_size = 20;   // m
    std::size_t ensemble_k = 2;   // k
    std::size_t adapter_hidden = 8;
    double adapter_scale = 0.1;
    double sigma = 16.0;  // cosine classifier logit scale

    PromptConfig prompt_config() const;
};

/// One expert: frozen backbone plus the parameter-efficient additions.
struct ExpertModel {
    ModelConfig cfg;
    BackboneParams backbone;
    SharedPrompt shared;
    GroupPromptPool pool;
    AdapterParams adapters;
    ClassifierParams classifier;

    std::uint64_t backbone_digest() const { return digest(backbone.params()); }
    std::uint64_t shared_digest() const { return digest(shared.params()); }
    std::uint64_t adapter_digest() const { return digest(adapters.params()); }
    std::uint64_t pool_digest() const { return digest(pool.params()); }
};

struct TrainConfig {
    std::size_t batch = 16;
    std::size_t epochs = 40;  // E, per phase
    std::size_t warmup_epochs = 5;
    double lr_scale = 1.0;  // multiplies the 0.002 * B / 256 base rate
    double weight_decay = 1e-2;
    double momentum = 0.9;
    double eta = 0.5;  // initial instance-batch weight
    std::uint64_t seed = 0;

    double base_lr() const { return 0.002 * double(batch) / 256.0 * lr_scale; }
};

/// Linear warmup to base_lr, then cosine decay to zero over the phase.
double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg);

struct SgdState {
    std::vector<std::vector<double>> momenta;  // aligned with the param list
};

/// m <- momentum*m + g + wd*p; p <- p - lr*m. Throws on non-finite gradients.
void sgd_step(std::vector<Tensor>& params,
              const std::unordered_map<std::int64_t, Tensor>& grads, SgdState& state,
              double lr, const TrainConfig& cfg);

enum class Phase : std::uint32_t {
    pretrained = 0,
    phase1 = 1,
    phase2 = 2,
    joint = 3,
    linear_probe = 4
};

struct Checkpoint {
    Phase phase = Phase::pretrained;
    std::uint32_t epochs_done = 0;  // within the current phase
    std::string config_echo;
    ExpertModel model;
    std::uint64_t backbone_digest = 0;
    SgdState opt;
    std::string rng_state;                // serialized mt19937_64
    std::vector<std::string> metrics;     // CSV rows "epoch,loss_bal,loss_ins,lr"
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Supervised CE training of backbone + throwaway linear head on the balanced
/// source domain; returns the backbone frozen and digested.
BackboneParams pretrain_backbone(const LongTailDataset& source, const ModelConfig& mcfg,
                                 const TrainConfig& cfg);

/// theta_f rows = L2-normalized per-class mean of frozen-backbone features.
ClassifierParams class_centric_init(const ExpertModel& model, const LongTailDataset& target);

/// Set up a phase-1 checkpoint on a frozen backbone: prompts and adapters
/// initialized, classifier CC-initialized.
Checkpoint init_phase1(BackboneParams backbone, const ModelConfig& mcfg,
                       const LongTailDataset& target, const TrainConfig& cfg);

/// Advance a phase-1 (or resumed) checkpoint to `until_epoch` epochs.
/// Trains shared prompt, adapters, and classifier with dual sampling.
void train_phase1(Checkpoint& ck, const LongTailDataset& target, const TrainConfig& cfg,
                  const GclConfig& gcl, std::size_t until_epoch);

/// Switch a finished phase-1 checkpoint into phase 2 (freeze shared prompt and
/// adapters, fresh optimizer over pool + classifier).
void init_phase2(Checkpoint& ck, const TrainConfig& cfg);

void train_phase2(Checkpoint& ck, const LongTailDataset& target, const TrainConfig& cfg,
                  const GclConfig& gcl, std::size_t until_epoch);

/// init + full training in one call
Checkpoint run_phase1(BackboneParams backbone, const ModelConfig& mcfg,
                      const LongTailDataset& target, const TrainConfig& cfg,
                      const GclConfig& gcl);
void run_phase2(Checkpoint& ck, const LongTailDataset& target, const TrainConfig& cfg,
                const GclConfig& gcl);

/// Joint baseline: all modules trained together with the phase-2 style
/// forward, queries taken from the evolving model itself.
Checkpoint init_joint(BackboneParams backbone, const ModelConfig& mcfg,
                      const LongTailDataset& target, const TrainConfig& cfg);
void train_joint(Checkpoint& ck, const LongTailDataset& target, const TrainConfig& cfg,
                 const GclConfig& gcl, std::size_t until_epoch);

/// Classifier-only baseline on frozen features (linear probing counterpart).
Checkpoint train_linear_probe(BackboneParams backbone, const ModelConfig& mcfg,
                              const LongTailDataset& target, const TrainConfig& cfg,
                              const GclConfig& gcl);

/// Tape-free forward for evaluation; phase2/joint run the two-pass pipeline
/// with key matching and prompt ensembling.
Tensor forward_eval(const ExpertModel& model, const Tensor& image, Phase phase);

/// Frozen-backbone feature (no prompts or adapters), for CC-init and analysis.
Tensor frozen_feature(const ExpertModel& model, const Tensor& image);
/// Feature from the adapted model at the given phase.
Tensor adapted_feature(const ExpertModel& model, const Tensor& image, Phase phase);

}  // namespace lpt
