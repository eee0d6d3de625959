#include "lpt/losses.hpp"

#include <cmath>

#include "lpt/ops.hpp"

namespace lpt {

using namespace ops;

namespace {
constexpr double kHalfNormalMean = 0.7978845608028654;  // sqrt(2/pi), E|N(0,1)|
constexpr double kLogFloor = 1e-12;
}  // namespace

std::size_t ClassCounts::n_max() const {
    if (n.empty()) throw std::invalid_argument("ClassCounts: empty");
    std::size_t mx = 0;
    for (auto c : n) {
        if (c < 1) throw std::invalid_argument("ClassCounts: every class count must be >= 1");
        mx = std::max(mx, c);
    }
    return mx;
}

Tensor gcl_adjust_with_eps(const Tensor& scores, const ClassCounts& counts, const GclConfig& cfg,
                           const std::vector<double>& eps) {
    const std::size_t C = counts.num_classes();
    if (scores.size() != C || eps.size() != C)
        throw std::invalid_argument("gcl_adjust: " + std::to_string(scores.size()) +
                                    " scores for " + std::to_string(C) + " classes");
    double log_nmax = std::log(double(counts.n_max()));
    Tensor offsets(scores.shape());
    for (std::size_t i = 0; i < C; ++i)
        offsets[i] = (log_nmax - std::log(double(counts.n[i]))) * eps[i];
    return scale(sub(scores, offsets), cfg.alpha);
}

Tensor gcl_adjust(const Tensor& scores, const ClassCounts& counts, const GclConfig& cfg,
                  std::mt19937_64& rng, bool train) {
    const std::size_t C = counts.num_classes();
    std::vector<double> eps(C, kHalfNormalMean);
    if (train && cfg.noise_enabled) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& e : eps) e = std::abs(normal(rng));
    }
    return gcl_adjust_with_eps(scores, counts, cfg, eps);
}

Tensor agcl_loss(const Tensor& adjusted, std::size_t label, const GclConfig& cfg) {
    const std::size_t C = adjusted.size();
    if (label >= C) throw std::invalid_argument("agcl_loss: label out of range");
    Tensor p = softmax(adjusted, 0);
    Tensor onehot(adjusted.shape());
    Tensor negmask(adjusted.shape(), 1.0);
    onehot[label] = 1.0;
    negmask[label] = 0.0;

    Tensor pj = sum_all(mul(p, onehot));
    Tensor pos = mul(pow_const(affine(pj, -1.0, 1.0), cfg.lambda_plus), log_clamped(pj, kLogFloor));

    Tensor neg_log = cfg.variant == GclVariant::asl_corrected
                         ? log_clamped(affine(p, -1.0, 1.0), kLogFloor)
                         : log_clamped(p, kLogFloor);
    Tensor negs = sum_all(mul(negmask, mul(pow_const(p, cfg.lambda_minus), neg_log)));
    return scale(add(pos, negs), -1.0);
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
    if (label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
    Tensor onehot(logits.shape());
    onehot[label] = 1.0;
    Tensor pj = sum_all(mul(softmax(logits, 0), onehot));
    return scale(log_clamped(pj, kLogFloor), -1.0);
}

Tensor key_loss(const Tensor& query, const std::vector<Tensor>& matched_keys) {
    if (matched_keys.empty()) throw std::invalid_argument("key_loss: no matched keys");
    auto norm = [](const Tensor& t) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
        return std::sqrt(s);
    };
    if (norm(query) < 1e-12) throw std::invalid_argument("key_loss: degenerate zero-norm query");
    Tensor acc;
    for (const auto& k : matched_keys) {
        if (norm(k) < 1e-12) throw std::invalid_argument("key_loss: degenerate zero-norm key");
        Tensor c = cosine_sim(query, k);
        acc = acc.defined() ? add(acc, c) : c;
    }
    return affine(acc, -1.0 / double(matched_keys.size()), 1.0);
}

double beta_schedule(const ScheduleState& state, BatchKind kind) {
    if (state.epoch > state.max_epochs)
        throw std::invalid_argument("beta_schedule: epoch past max_epochs");
    if (kind == BatchKind::balanced) return 1.0;
    return state.eta * double(state.max_epochs - state.epoch) / double(state.max_epochs);
}

Tensor phase2_loss(const Tensor& scores, std::size_t label, const Tensor& query,
                   const std::vector<Tensor>& matched_keys, double beta,
                   const ClassCounts& counts, const GclConfig& cfg, std::mt19937_64& rng,
                   bool train) {
    Tensor cls = agcl_loss(gcl_adjust(scores, counts, cfg, rng, train), label, cfg);
    return add(scale(cls, beta), key_loss(query, matched_keys));
}

Tensor mse_loss(const Tensor& w_moe, double target) {
    Tensor d = affine(w_moe, 1.0, -target);
    return mul(d, d);
}

}  // namespace lpt
