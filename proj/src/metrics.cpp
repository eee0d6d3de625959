#include "lpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lpt {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double na = std::max(std::sqrt(dot(a, a)), 1e-12);
    double nb = std::max(std::sqrt(dot(b, b)), 1e-12);
    return dot(a, b) / (na * nb);
}

double distance(const std::vector<double>& a, const std::vector<double>& b,
                ClusterMetric metric) {
    if (metric == ClusterMetric::euclidean) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    }
    return std::acos(std::clamp(cosine(a, b), -1.0, 1.0));
}

}  // namespace

SplitReport split_accuracy(const std::vector<std::size_t>& preds,
                           const std::vector<std::uint32_t>& labels,
                           const std::vector<ShotTag>& tags) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("split_accuracy: preds/labels length mismatch");
    const std::size_t C = tags.size();
    SplitReport rep;
    rep.per_class.assign(C, 0.0);
    rep.class_total.assign(C, 0);
    std::vector<std::size_t> correct(C, 0);
    std::size_t total_correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] >= C)
            throw std::invalid_argument("split_accuracy: label " + std::to_string(labels[i]) +
                                        " out of range");
        ++rep.class_total[labels[i]];
        if (preds[i] == labels[i]) {
            ++correct[labels[i]];
            ++total_correct;
        }
    }
    if (preds.empty()) throw std::invalid_argument("split_accuracy: no samples");
    rep.overall = 100.0 * double(total_correct) / double(preds.size());
    for (std::size_t c = 0; c < C; ++c)
        rep.per_class[c] =
            rep.class_total[c] ? 100.0 * double(correct[c]) / double(rep.class_total[c]) : 0.0;

    auto macro = [&](ShotTag tag) -> std::optional<double> {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < C; ++c) {
            if (tags[c] != tag || rep.class_total[c] == 0) continue;
            sum += rep.per_class[c];
            ++n;
        }
        if (n == 0) return std::nullopt;
        return sum / double(n);
    };
    rep.many = macro(ShotTag::many);
    rep.medium = macro(ShotTag::medium);
    rep.few = macro(ShotTag::few);
    return rep;
}

double knn_accuracy(const std::vector<std::vector<double>>& train_feats,
                    const std::vector<std::uint32_t>& train_labels,
                    const std::vector<std::vector<double>>& val_feats,
                    const std::vector<std::uint32_t>& val_labels, std::size_t k_nn) {
    if (train_feats.empty()) throw std::invalid_argument("knn_accuracy: empty train set");
    if (train_feats.size() != train_labels.size() || val_feats.size() != val_labels.size())
        throw std::invalid_argument("knn_accuracy: feature/label length mismatch");
    if (k_nn == 0) throw std::invalid_argument("knn_accuracy: k_nn must be >= 1");
    const std::size_t k = std::min(k_nn, train_feats.size());
    std::size_t correct = 0;
    std::vector<std::size_t> order(train_feats.size());
    std::vector<double> sims(train_feats.size());
    for (std::size_t v = 0; v < val_feats.size(); ++v) {
        for (std::size_t t = 0; t < train_feats.size(); ++t)
            sims[t] = cosine(val_feats[v], train_feats[t]);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
        std::unordered_map<std::uint32_t, std::size_t> votes;
        for (std::size_t i = 0; i < k; ++i) ++votes[train_labels[order[i]]];
        std::uint32_t best = 0;
        std::size_t best_n = 0;
        for (const auto& [cls, n] : votes)
            if (n > best_n || (n == best_n && cls < best)) {
                best = cls;
                best_n = n;
            }
        correct += best == val_labels[v];
    }
    return val_feats.empty() ? 0.0 : 100.0 * double(correct) / double(val_feats.size());
}

ClusterStats cluster_metrics(const std::vector<std::vector<double>>& feats,
                             const std::vector<std::uint32_t>& labels, std::size_t num_classes,
                             ClusterMetric metric) {
    if (feats.size() != labels.size())
        throw std::invalid_argument("cluster_metrics: feature/label length mismatch");
    if (num_classes < 2)
        throw std::invalid_argument(
            "cluster_metrics: inter-class distance needs at least two classes");
    if (feats.empty()) throw std::invalid_argument("cluster_metrics: no samples");
    const std::size_t dim = feats[0].size();
    std::vector<std::vector<double>> centers(num_classes, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < feats.size(); ++i) {
        if (labels[i] >= num_classes)
            throw std::invalid_argument("cluster_metrics: label out of range");
        for (std::size_t j = 0; j < dim; ++j) centers[labels[i]][j] += feats[i][j];
        ++counts[labels[i]];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0)
            throw std::invalid_argument("cluster_metrics: class " + std::to_string(c) +
                                        " has no samples");
        for (auto& v : centers[c]) v /= double(counts[c]);
    }

    ClusterStats stats;
    stats.R.assign(num_classes, 0.0);
    for (std::size_t i = 0; i < feats.size(); ++i)
        stats.R[labels[i]] += distance(feats[i], centers[labels[i]], metric);
    for (std::size_t c = 0; c < num_classes; ++c) stats.R[c] /= double(counts[c]);

    double dsum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < num_classes; ++a)
        for (std::size_t b = a + 1; b < num_classes; ++b) {
            dsum += distance(centers[a], centers[b], metric);
            ++pairs;
        }
    stats.D = dsum / double(pairs);
    double rsum = std::accumulate(stats.R.begin(), stats.R.end(), 0.0);
    stats.gamma = rsum / (double(num_classes) * stats.D);
    return stats;
}

}  // namespace lpt
