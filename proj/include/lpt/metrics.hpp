#pragma once

#include <optional>

#include "lpt/data.hpp"

namespace lpt {

struct SplitReport {
    double overall = 0.0;  // percent, sample weighted
    std::optional<double> many, medium, few;  // percent, macro over classes; absent if empty
    std::vector<double> per_class;            // percent per class
    std::vector<std::size_t> class_total;     // evaluated samples per class
};

/// Accuracy broken down by shot split; `tags` has one entry per class.
SplitReport split_accuracy(const std::vector<std::size_t>& preds,
                           const std::vector<std::uint32_t>& labels,
                           const std::vector<ShotTag>& tags);

/// Majority vote over the k_nn most cosine-similar train features; vote ties
/// go to the smallest class index.
double knn_accuracy(const std::vector<std::vector<double>>& train_feats,
                    const std::vector<std::uint32_t>& train_labels,
                    const std::vector<std::vector<double>>& val_feats,
                    const std::vector<std::uint32_t>& val_labels, std::size_t k_nn = 20);

enum class ClusterMetric { euclidean, cosine_angular };

struct ClusterStats {
    std::vector<double> R;  // mean distance of each class's samples to its center
    double D = 0.0;         // mean distance over unordered center pairs
    double gamma = 0.0;     // (1 / (C * D)) * sum_i R_i
};

ClusterStats cluster_metrics(const std::vector<std::vector<double>>& feats,
                             const std::vector<std::uint32_t>& labels, std::size_t num_classes,
                             ClusterMetric metric = ClusterMetric::euclidean);

}  // namespace lpt
