#pragma once

#include "lpt/trainer.hpp"

namespace lpt {

/// Aligned per-sample confidence scores of the two experts.
struct ExpertScores {
    std::vector<std::vector<double>> vo;  // visual-only expert, N x C
    std::vector<std::vector<double>> vl;  // second expert, N x C
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t num_classes() const { return vo.empty() ? 0 : vo[0].size(); }
    void validate() const;
};

enum class Split { train, val };

/// Raw cosine-classifier scores (pre-softmax) for every sample in the split.
/// Read-only over the model; fans out over LTPEFT_THREADS workers.
std::vector<std::vector<double>> expert_scores(const ExpertModel& model,
                                               const LongTailDataset& ds, Split split,
                                               Phase phase = Phase::phase2);

/// Hard predictions derived from score rows; argmax ties go to the lowest class.
std::size_t score_argmax(const std::vector<double>& row);

/// s_moe = w * s_vo + (1 - w) * s_vl, with w clamped to [0, 1] first.
std::vector<double> fuse(const std::vector<double>& vo, const std::vector<double>& vl, double w);

/// Fused top-1 accuracy (fraction in [0, 1]) at a fixed fusion weight.
double fused_accuracy_at(const ExpertScores& s, double w);

/// Coarse 1/32 grid over [0, 1], then bisection of the best cell down to
/// width <= eps; returns the cell midpoint. Ties favor smaller w.
double search_w_base(const ExpertScores& s, double eps = 1e-3);

struct ConflictSet {
    std::vector<std::size_t> indices;  // into the score matrices
    std::vector<double> targets;       // 1 when the visual-only expert is right
    bool empty() const { return indices.empty(); }
    /// fraction of targets equal to 1
    double balance() const;
};

/// Samples where the experts disagree and exactly one is correct.
ConflictSet build_conflict_set(const ExpertScores& s);

struct Phase3Config {
    std::size_t epochs = 50;
    std::size_t batch = 8;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-2;
    std::size_t hidden = 128;
    double epsilon = 1e-3;  // w_base search stop width
    std::uint64_t seed = 0;
};

/// Searched base weight plus an MLP (2C -> H -> H -> 1, relu) predicting a
/// per-sample offset. `inert` means no usable MLP; fusion falls back to w_base.
struct MoEScorerState {
    double w_base = 0.5;
    std::size_t num_classes = 0;
    std::size_t hidden = 0;
    bool inert = true;
    Tensor w1, b1, w2, b2, w3, b3;

    std::vector<Tensor> params() const { return {w1, b1, w2, b2, w3, b3}; }
};

/// w_moe = clamp(w_base + mlp(softmax(s_vo) ++ softmax(s_vl)), 0, 1).
double scorer_forward(const MoEScorerState& st, const std::vector<double>& vo,
                      const std::vector<double>& vl);

/// Fused accuracy with the per-sample scorer weight.
double fused_accuracy(const ExpertScores& s, const MoEScorerState& st);

/// w_base search plus MLP training on the conflict set (full-batch SGD with
/// momentum, MSE to the binary targets, zero-initialized final layer).
MoEScorerState run_phase3(const ExpertScores& s_train, const Phase3Config& cfg);

void save_moe_scorer(const MoEScorerState& st, const std::string& path);
MoEScorerState load_moe_scorer(const std::string& path);

// CSV score matrices: header "sample_id,label,s_0..s_{C-1}"
void write_scores_csv(const std::string& path, const std::vector<std::vector<double>>& scores,
                      const std::vector<std::uint32_t>& labels);
std::pair<std::vector<std::vector<double>>, std::vector<std::uint32_t>> read_scores_csv(
    const std::string& path);

}  // namespace lpt
