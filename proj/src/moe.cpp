#include "lpt/moe.hpp"

#include <algorithm>
#include <numeric>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "lpt/binio.hpp"
#include "lpt/ops.hpp"

namespace lpt {

using namespace ops;

void ExpertScores::validate() const {
    if (vo.size() != vl.size() || vo.size() != labels.size())
        throw std::invalid_argument("ExpertScores: misaligned expert rows or labels");
    for (std::size_t i = 0; i < vo.size(); ++i)
        if (vo[i].size() != num_classes() || vl[i].size() != num_classes())
            throw std::invalid_argument("ExpertScores: ragged score row " + std::to_string(i));
}

namespace {

std::size_t eval_threads(std::size_t jobs) {
    std::size_t n = std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
    if (const char* env = std::getenv("LTPEFT_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            throw std::invalid_argument("LTPEFT_THREADS must be a positive integer");
        n = std::min<std::size_t>(n, std::size_t(v));
    }
    return std::min(n, std::max<std::size_t>(jobs, 1));
}

std::vector<double> softmax_values(const std::vector<double>& x) {
    double mx = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

Tensor scorer_input(const MoEScorerState& st, const std::vector<double>& vo,
                    const std::vector<double>& vl) {
    if (vo.size() != st.num_classes || vl.size() != st.num_classes)
        throw std::invalid_argument("scorer_forward: expected " + std::to_string(st.num_classes) +
                                    " classes, got " + std::to_string(vo.size()) + "/" +
                                    std::to_string(vl.size()));
    std::vector<double> x = softmax_values(vo);
    auto nvl = softmax_values(vl);
    x.insert(x.end(), nvl.begin(), nvl.end());
    const std::size_t n = x.size();
    return Tensor(Shape{1, n}, std::move(x));
}

/// offset as a length-1 tensor; differentiable when a tape is active
Tensor mlp_offset(const MoEScorerState& st, const Tensor& x) {
    Tensor h1 = activation(add_bias(matmul(x, st.w1), st.b1), Act::relu);
    Tensor h2 = activation(add_bias(matmul(h1, st.w2), st.b2), Act::relu);
    return reshape(add_bias(matmul(h2, st.w3), st.b3), Shape{1});
}

/// clamp to [0, 1] with pass-through gradient in the interior
Tensor clamp01(const Tensor& x) {
    Tensor over = activation(affine(x, 1.0, -1.0), Act::relu);
    Tensor under = activation(scale(x, -1.0), Act::relu);
    return add(sub(x, over), under);
}

}  // namespace

std::vector<std::vector<double>> expert_scores(const ExpertModel& model,
                                               const LongTailDataset& ds, Split split,
                                               Phase phase) {
    const std::size_t n = split == Split::train ? ds.train_size() : ds.val_size();
    std::vector<std::vector<double>> out(n);
    auto worker = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            Tensor img = split == Split::train ? ds.train_image(i) : ds.val_image(i);
            out[i] = forward_eval(model, img, phase).data();
        }
    };
    const std::size_t threads = eval_threads(n);
    if (threads <= 1) {
        worker(0, n);
        return out;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
        if (lo < hi) pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
    return out;
}

std::size_t score_argmax(const std::vector<double>& row) {
    if (row.empty()) throw std::invalid_argument("score_argmax: empty row");
    return std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<double> fuse(const std::vector<double>& vo, const std::vector<double>& vl, double w) {
    if (vo.size() != vl.size())
        throw std::invalid_argument("fuse: score length mismatch " + std::to_string(vo.size()) +
                                    " vs " + std::to_string(vl.size()));
    w = std::clamp(w, 0.0, 1.0);
    std::vector<double> out(vo.size());
    for (std::size_t i = 0; i < vo.size(); ++i) out[i] = w * vo[i] + (1.0 - w) * vl[i];
    return out;
}

double fused_accuracy_at(const ExpertScores& s, double w) {
    s.validate();
    if (s.size() == 0) throw std::invalid_argument("fused_accuracy_at: no samples");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        correct += score_argmax(fuse(s.vo[i], s.vl[i], w)) == s.labels[i];
    return double(correct) / double(s.size());
}

double search_w_base(const ExpertScores& s, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("search_w_base: eps must be > 0");
    double best_w = 0.0, best_acc = fused_accuracy_at(s, 0.0);
    for (int j = 1; j <= 32; ++j) {
        double w = double(j) / 32.0;
        double acc = fused_accuracy_at(s, w);
        if (acc > best_acc) {
            best_acc = acc;
            best_w = w;
        }
    }
    double lo = std::max(0.0, best_w - 1.0 / 32.0);
    double hi = std::min(1.0, best_w + 1.0 / 32.0);
    while (hi - lo > eps) {
        double mid = 0.5 * (lo + hi);
        double acc = fused_accuracy_at(s, mid);
        if (acc > best_acc || (acc == best_acc && mid < best_w)) {
            best_acc = acc;
            best_w = mid;
        }
        if (best_w <= mid)
            hi = mid;
        else
            lo = mid;
    }
    return 0.5 * (lo + hi);
}

double ConflictSet::balance() const {
    if (targets.empty()) return 0.0;
    double s = 0.0;
    for (double t : targets) s += t;
    return s / double(targets.size());
}

ConflictSet build_conflict_set(const ExpertScores& s) {
    s.validate();
    ConflictSet cs;
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::size_t pvo = score_argmax(s.vo[i]), pvl = score_argmax(s.vl[i]);
        if (pvo == pvl) continue;
        bool vo_right = pvo == s.labels[i], vl_right = pvl == s.labels[i];
        if (vo_right == vl_right) continue;
        cs.indices.push_back(i);
        cs.targets.push_back(vo_right ? 1.0 : 0.0);
    }
    return cs;
}

double scorer_forward(const MoEScorerState& st, const std::vector<double>& vo,
                      const std::vector<double>& vl) {
    if (st.inert) return std::clamp(st.w_base, 0.0, 1.0);
    Tensor x = scorer_input(st, vo, vl);
    double offset = mlp_offset(st, x)[0];
    return std::clamp(st.w_base + offset, 0.0, 1.0);
}

double fused_accuracy(const ExpertScores& s, const MoEScorerState& st) {
    s.validate();
    if (s.size() == 0) throw std::invalid_argument("fused_accuracy: no samples");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        double w = scorer_forward(st, s.vo[i], s.vl[i]);
        correct += score_argmax(fuse(s.vo[i], s.vl[i], w)) == s.labels[i];
    }
    return double(correct) / double(s.size());
}

MoEScorerState run_phase3(const ExpertScores& s_train, const Phase3Config& cfg) {
    s_train.validate();
    MoEScorerState st;
    st.w_base = search_w_base(s_train, cfg.epsilon);
    st.num_classes = s_train.num_classes();
    st.hidden = cfg.hidden;

    ConflictSet cs = build_conflict_set(s_train);
    if (cs.empty()) return st;  // inert scorer, w_base-only fusion

    const std::size_t in = 2 * st.num_classes, H = cfg.hidden;
    std::mt19937_64 rng(cfg.seed);
    st.w1 = Tensor::randn(Shape{in, H}, rng, std::sqrt(2.0 / double(in + H)));
    st.b1 = Tensor(Shape{H});
    st.w2 = Tensor::randn(Shape{H, H}, rng, std::sqrt(1.0 / double(H)));
    st.b2 = Tensor(Shape{H});
    st.w3 = Tensor(Shape{H, 1});  // zero: offset starts at 0, w_moe at w_base
    st.b3 = Tensor(Shape{1});
    auto params = st.params();
    for (auto& p : params) p.set_requires_grad(true);

    std::vector<Tensor> inputs;
    inputs.reserve(cs.indices.size());
    for (auto i : cs.indices) inputs.push_back(scorer_input(st, s_train.vo[i], s_train.vl[i]));

    TrainConfig opt_cfg;
    opt_cfg.momentum = cfg.momentum;
    opt_cfg.weight_decay = cfg.weight_decay;
    SgdState opt;
    // oversample the rarer outcome so the regression learns per-sample signal
    // instead of the conflict-set prior
    std::vector<std::size_t> ones, zeros;
    for (std::size_t i = 0; i < cs.targets.size(); ++i)
        (cs.targets[i] == 1.0 ? ones : zeros).push_back(i);
    std::vector<std::size_t> order;
    if (ones.empty() || zeros.empty()) {
        order.resize(inputs.size());
        std::iota(order.begin(), order.end(), 0);
    } else {
        std::size_t n = std::max(ones.size(), zeros.size());
        for (std::size_t j = 0; j < n; ++j) {
            order.push_back(ones[j % ones.size()]);
            order.push_back(zeros[j % zeros.size()]);
        }
    }
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
            Tape tape;
            Tensor acc;
            std::size_t hi = std::min(order.size(), b + cfg.batch);
            for (std::size_t p = b; p < hi; ++p) {
                std::size_t i = order[p];
                Tensor w_moe = clamp01(affine(mlp_offset(st, inputs[i]), 1.0, st.w_base));
                Tensor l = mse_loss(w_moe, cs.targets[i]);
                acc = p == b ? l : add(acc, l);
            }
            Tensor loss = scale(acc, 1.0 / double(hi - b));
            if (!std::isfinite(loss.value()))
                throw std::runtime_error("run_phase3: non-finite loss at epoch " +
                                         std::to_string(e));
            auto grads = tape.backward(loss);
            sgd_step(params, grads, opt, cfg.lr, opt_cfg);
        }
    }
    for (auto& p : params) p.set_requires_grad(false);
    st.inert = false;
    return st;
}

namespace {
constexpr char kScorerMagic[5] = "MOES";

void write_tensor(std::ostream& os, const Tensor& t) {
    binio::write_u64(os, t.shape().size());
    for (auto d : t.shape()) binio::write_u64(os, d);
    binio::write_vec(os, t.data());
}

Tensor read_tensor(std::istream& is) {
    Shape shape(binio::read_u64(is));
    for (auto& d : shape) d = binio::read_u64(is);
    auto data = binio::read_vec<double>(is);
    return Tensor(std::move(shape), std::move(data));
}
}  // namespace

void save_moe_scorer(const MoEScorerState& st, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_moe_scorer: cannot open " + path);
    binio::write_magic(os, kScorerMagic);
    binio::write_u32(os, 1);
    binio::write_f64(os, st.w_base);
    binio::write_u64(os, st.num_classes);
    binio::write_u64(os, st.hidden);
    binio::write_u32(os, st.inert ? 1u : 0u);
    if (!st.inert)
        for (const auto& t : st.params()) write_tensor(os, t);
    if (!os) throw std::runtime_error("save_moe_scorer: write failed for " + path);
}

MoEScorerState load_moe_scorer(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_moe_scorer: cannot open " + path);
    binio::expect_magic(is, kScorerMagic, "load_moe_scorer");
    if (auto v = binio::read_u32(is); v != 1)
        throw std::runtime_error("load_moe_scorer: unsupported version " + std::to_string(v));
    MoEScorerState st;
    st.w_base = binio::read_f64(is);
    st.num_classes = binio::read_u64(is);
    st.hidden = binio::read_u64(is);
    st.inert = binio::read_u32(is) != 0;
    if (!st.inert) {
        st.w1 = read_tensor(is);
        st.b1 = read_tensor(is);
        st.w2 = read_tensor(is);
        st.b2 = read_tensor(is);
        st.w3 = read_tensor(is);
        st.b3 = read_tensor(is);
    }
    return st;
}

void write_scores_csv(const std::string& path, const std::vector<std::vector<double>>& scores,
                      const std::vector<std::uint32_t>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("write_scores_csv: scores/labels length mismatch");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_scores_csv: cannot open " + path);
    const std::size_t C = scores.empty() ? 0 : scores[0].size();
    os << "sample_id,label";
    for (std::size_t c = 0; c < C; ++c) os << ",s_" << c;
    os << '\n';
    os << std::setprecision(17);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].size() != C)
            throw std::invalid_argument("write_scores_csv: ragged row " + std::to_string(i));
        os << i << ',' << labels[i];
        for (double v : scores[i]) os << ',' << v;
        os << '\n';
    }
    if (!os) throw std::runtime_error("write_scores_csv: write failed for " + path);
}

std::pair<std::vector<std::vector<double>>, std::vector<std::uint32_t>> read_scores_csv(
    const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_scores_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("sample_id,label", 0) != 0)
        throw std::runtime_error("read_scores_csv: missing header in " + path);
    std::vector<std::vector<double>> scores;
    std::vector<std::uint32_t> labels;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');  // sample_id, positional
        std::getline(ss, tok, ',');
        labels.push_back(std::uint32_t(std::stoul(tok)));
        std::vector<double> row;
        while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
        scores.push_back(std::move(row));
    }
    return {std::move(scores), std::move(labels)};
}

}  // namespace lpt
