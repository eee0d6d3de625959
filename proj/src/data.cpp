#include "lpt/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "lpt/binio.hpp"

namespace lpt {

namespace {

constexpr char kMagic[5] = "LTDS";
constexpr std::uint32_t kVersion = 1;

Tensor image_tensor(const std::vector<float>& pixels, std::size_t offset, std::size_t n) {
    Tensor t(Shape{n});
    for (std::size_t i = 0; i < n; ++i) t[i] = double(pixels[offset + i]);
    return t;
}

}  // namespace

std::vector<std::size_t> imbalance_profile(std::size_t num_classes, std::size_t n_max,
                                           double rho) {
    if (num_classes < 1 || n_max < 1 || rho < 1.0)
        throw std::invalid_argument("imbalance_profile: need C >= 1, n_max >= 1, rho >= 1");
    std::vector<std::size_t> n(num_classes);
    for (std::size_t i = 0; i < num_classes; ++i) {
        double expo = num_classes == 1 ? 0.0 : double(i) / double(num_classes - 1);
        n[i] = std::size_t(std::llround(double(n_max) * std::pow(rho, -expo)));
        if (n[i] < 1) n[i] = 1;
    }
    return n;
}

Tensor LongTailDataset::train_image(std::size_t i) const {
    return image_tensor(train_pixels, i * image_size(), image_size());
}

Tensor LongTailDataset::val_image(std::size_t i) const {
    return image_tensor(val_pixels, i * image_size(), image_size());
}

std::pair<LongTailDataset, LongTailDataset> generate_dataset(const DatasetSpec& spec) {
    const std::size_t C = spec.num_classes, px = spec.image_side * spec.image_side;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    // per-class prototype patterns, shared between domains
    std::vector<std::vector<float>> protos(C, std::vector<float>(px));
    for (auto& p : protos)
        for (auto& v : p) v = float(normal(rng));

    // fixed target-domain transform: permute a domain_shift fraction of the
    // pixels and add a brightness offset
    std::size_t n_perm = std::size_t(std::llround(double(px) * std::min(1.0, spec.domain_shift)));
    std::vector<std::size_t> perm(px);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i + 1 < n_perm; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_perm - 1);
        std::swap(perm[i], perm[pick(rng)]);
    }
    float brightness = float(0.25 * spec.domain_shift);

    std::vector<std::vector<float>> target_protos(C, std::vector<float>(px));
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < px; ++i)
            target_protos[c][i] = protos[c][perm[i]] + brightness;

    auto render = [&](LongTailDataset& ds, const std::vector<std::vector<float>>& pat,
                      const std::vector<std::size_t>& train_counts) {
        ds.num_classes = C;
        ds.image_side = spec.image_side;
        ds.channels = 1;
        ds.counts.n = train_counts;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < train_counts[c]; ++s) {
                for (std::size_t i = 0; i < px; ++i)
                    ds.train_pixels.push_back(pat[c][i] + float(spec.noise * normal(rng)));
                ds.train_labels.push_back(std::uint32_t(c));
            }
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < spec.val_per_class; ++s) {
                for (std::size_t i = 0; i < px; ++i)
                    ds.val_pixels.push_back(pat[c][i] + float(spec.noise * normal(rng)));
                ds.val_labels.push_back(std::uint32_t(c));
            }
    };

    LongTailDataset source, target;
    render(source, protos, std::vector<std::size_t>(C, spec.n_max));
    render(target, target_protos, imbalance_profile(C, spec.n_max, spec.imbalance));
    return {std::move(source), std::move(target)};
}

std::vector<ShotTag> shot_split(const ClassCounts& counts, std::size_t t_few,
                                std::size_t t_many) {
    if (t_few >= t_many) throw std::invalid_argument("shot_split: need t_few < t_many");
    std::vector<ShotTag> tags;
    tags.reserve(counts.n.size());
    for (auto n : counts.n)
        tags.push_back(n >= t_many ? ShotTag::many : (n <= t_few ? ShotTag::few : ShotTag::medium));
    return tags;
}

namespace {
std::vector<std::vector<std::size_t>> per_class_indices(const LongTailDataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.train_size(); ++i) by_class[ds.train_labels[i]].push_back(i);
    return by_class;
}
}  // namespace

Minibatch class_balanced_batch(const LongTailDataset& ds, std::size_t batch,
                               std::mt19937_64& rng) {
    if (ds.train_size() == 0) throw std::invalid_argument("class_balanced_batch: empty dataset");
    if (batch < 1) throw std::invalid_argument("class_balanced_batch: batch must be >= 1");
    auto by_class = per_class_indices(ds);
    std::uniform_int_distribution<std::size_t> pick_class(0, ds.num_classes - 1);
    Minibatch mb;
    mb.kind = BatchKind::balanced;
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t c = pick_class(rng);
        std::uniform_int_distribution<std::size_t> pick(0, by_class[c].size() - 1);
        mb.indices.push_back(by_class[c][pick(rng)]);
    }
    return mb;
}

Minibatch instance_balanced_batch(const LongTailDataset& ds, std::size_t batch,
                                  std::mt19937_64& rng) {
    if (ds.train_size() == 0)
        throw std::invalid_argument("instance_balanced_batch: empty dataset");
    if (batch < 1) throw std::invalid_argument("instance_balanced_batch: batch must be >= 1");
    std::uniform_int_distribution<std::size_t> pick(0, ds.train_size() - 1);
    Minibatch mb;
    mb.kind = BatchKind::instance;
    for (std::size_t b = 0; b < batch; ++b) mb.indices.push_back(pick(rng));
    return mb;
}

BatchPair dual_sample(const LongTailDataset& ds, std::size_t batch, std::mt19937_64& rng) {
    BatchPair pair;
    pair.ins = instance_balanced_batch(ds, batch, rng);
    pair.bal = class_balanced_batch(ds, batch, rng);
    return pair;
}

void save_dataset(const LongTailDataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    binio::write_magic(os, kMagic);
    binio::write_u32(os, kVersion);
    binio::write_u32(os, std::uint32_t(ds.num_classes));
    binio::write_u32(os, std::uint32_t(ds.image_side));
    binio::write_u32(os, std::uint32_t(ds.channels));
    for (auto n : ds.counts.n) binio::write_u32(os, std::uint32_t(n));
    binio::write_u32(os, std::uint32_t(ds.val_size() / std::max<std::size_t>(ds.num_classes, 1)));
    binio::write_vec(os, ds.train_pixels);
    binio::write_vec(os, ds.train_labels);
    binio::write_vec(os, ds.val_pixels);
    binio::write_vec(os, ds.val_labels);
    if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

LongTailDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
    binio::expect_magic(is, kMagic, "load_dataset");
    std::uint32_t version = binio::read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("load_dataset: unsupported version " + std::to_string(version));
    LongTailDataset ds;
    ds.num_classes = binio::read_u32(is);
    ds.image_side = binio::read_u32(is);
    ds.channels = binio::read_u32(is);
    ds.counts.n.resize(ds.num_classes);
    for (auto& n : ds.counts.n) n = binio::read_u32(is);
    (void)binio::read_u32(is);  // val per class, recoverable from labels
    ds.train_pixels = binio::read_vec<float>(is);
    ds.train_labels = binio::read_vec<std::uint32_t>(is);
    ds.val_pixels = binio::read_vec<float>(is);
    ds.val_labels = binio::read_vec<std::uint32_t>(is);
    return ds;
}

}  // namespace lpt
