#pragma once

#include "lpt/tensor.hpp"

namespace lpt {

enum class GclVariant { paper_literal, asl_corrected };

struct GclConfig {
    double alpha = 1.0;
    double lambda_plus = 0.0;
    double lambda_minus = 4.0;
    bool noise_enabled = true;
    GclVariant variant = GclVariant::asl_corrected;
};

struct ClassCounts {
    std::vector<std::size_t> n;  // training count per class, all >= 1
    std::size_t n_max() const;
    std::size_t num_classes() const { return n.size(); }
};

struct ScheduleState {
    double eta = 0.5;
    std::size_t max_epochs = 40;
    std::size_t epoch = 0;
};

enum class BatchKind { balanced, instance };

/// Logit rescale v_i = alpha * (s_i - (ln n_max - ln n_i) * ||eps||).
/// ||eps|| is |N(0,1)| drawn per class when training with noise enabled,
/// and its expectation sqrt(2/pi) otherwise.
Tensor gcl_adjust(const Tensor& scores, const ClassCounts& counts, const GclConfig& cfg,
                  std::mt19937_64& rng, bool train);

/// Same rescale with the per-class ||eps|| values supplied by the caller.
Tensor gcl_adjust_with_eps(const Tensor& scores, const ClassCounts& counts, const GclConfig& cfg,
                           const std::vector<double>& eps);

/// Asymmetric focusing loss on adjusted logits. asl_corrected (default):
///   -[(1-p_j)^l+ log p_j + sum_{i!=j} p_i^l- log(1-p_i)]
/// paper_literal negates the printed form, which uses log(p_i) for negatives.
Tensor agcl_loss(const Tensor& adjusted, std::size_t label, const GclConfig& cfg);

/// Plain cross entropy -log softmax(logits)_label
Tensor cross_entropy(const Tensor& logits, std::size_t label);

/// 1 - (1/k) sum_i cos(q, k_i); gradients flow into keys only when q is
/// constant (phase-2 queries are detached phase-1 outputs)
Tensor key_loss(const Tensor& query, const std::vector<Tensor>& matched_keys);

double beta_schedule(const ScheduleState& state, BatchKind kind);

Tensor phase2_loss(const Tensor& scores, std::size_t label, const Tensor& query,
                   const std::vector<Tensor>& matched_keys, double beta,
                   const ClassCounts& counts, const GclConfig& cfg, std::mt19937_64& rng,
                   bool train);

Tensor mse_loss(const Tensor& w_moe, double target);

}  // namespace lpt
