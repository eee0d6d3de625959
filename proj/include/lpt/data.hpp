#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lpt/losses.hpp"
#include "lpt/tensor.hpp"

namespace lpt {

struct DatasetSpec {
    std::size_t num_classes = 30;
    std::size_t n_max = 100;
    double imbalance = 100.0;  // rho = n_max / n_min
    std::size_t image_side = 16;
    std::size_t val_per_class = 10;
    double noise = 0.3;
    double domain_shift = 0.5;  // fraction of pixels permuted plus brightness offset
    std::uint64_t seed = 0;
};

enum class ShotTag { many, medium, few };

/// n_i = round(n_max * rho^(-(i-1)/(C-1))), nonincreasing
std::vector<std::size_t> imbalance_profile(std::size_t num_classes, std::size_t n_max, double rho);

struct LongTailDataset {
    std::size_t num_classes = 0;
    std::size_t image_side = 0;
    std::size_t channels = 1;
    std::vector<float> train_pixels;
    std::vector<std::uint32_t> train_labels;
    std::vector<float> val_pixels;  // class-balanced
    std::vector<std::uint32_t> val_labels;
    ClassCounts counts;  // train counts only

    std::size_t image_size() const { return image_side * image_side * channels; }
    std::size_t train_size() const { return train_labels.size(); }
    std::size_t val_size() const { return val_labels.size(); }
    Tensor train_image(std::size_t i) const;
    Tensor val_image(std::size_t i) const;
};

/// Source domain is class-balanced (n_max per class); the target applies a
/// fixed pixel permutation over a domain_shift fraction of pixels plus a
/// brightness offset, and follows the exponential imbalance profile.
std::pair<LongTailDataset, LongTailDataset> generate_dataset(const DatasetSpec& spec);

/// n >= t_many -> many; n <= t_few -> few; else medium
std::vector<ShotTag> shot_split(const ClassCounts& counts, std::size_t t_few, std::size_t t_many);

struct Minibatch {
    std::vector<std::size_t> indices;  // into the train split
    BatchKind kind = BatchKind::instance;
};

struct BatchPair {
    Minibatch ins;
    Minibatch bal;
};

Minibatch class_balanced_batch(const LongTailDataset& ds, std::size_t batch, std::mt19937_64& rng);
Minibatch instance_balanced_batch(const LongTailDataset& ds, std::size_t batch,
                                  std::mt19937_64& rng);
/// draws the instance batch first, then the balanced batch, from one stream
BatchPair dual_sample(const LongTailDataset& ds, std::size_t batch, std::mt19937_64& rng);

// binary format: magic "LTDS", version, C, image_side, channels,
// train counts, val counts, then raw float32 pixels and u32 labels;
// little-endian, byte-exact round trip
void save_dataset(const LongTailDataset& ds, const std::string& path);
LongTailDataset load_dataset(const std::string& path);

}  // namespace lpt
