#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "lpt/metrics.hpp"
#include "lpt/moe.hpp"
#include "lpt/trainer.hpp"

namespace {

using namespace lpt;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitNumerical = 4;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    DatasetSpec data;
    ModelConfig model;
    TrainConfig train;
    std::size_t pretrain_epochs = 15;
    std::size_t pretrain_batch = 16;
    double pretrain_lr_scale = 100.0;
    GclConfig gcl;
    Phase3Config moe;
    std::uint64_t expert2_backbone_seed = 1001;
    std::size_t expert2_dim = 48;
    std::uint64_t expert2_source_seed = 2001;
    std::size_t knn_k = 20;
    ClusterMetric cluster_metric = ClusterMetric::euclidean;
};

struct ConfigKey {
    std::string name;
    std::string def;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
T parse_num(const std::string& v) {
    std::istringstream ss(v);
    T out{};
    ss >> out;
    if (ss.fail() || !ss.eof()) throw ConfigError("invalid numeric value '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("invalid boolean '" + v + "' (use true/false)");
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"data.classes", "30", "number of classes in the synthetic benchmark",
         [](RunConfig& c, const std::string& v) { c.data.num_classes = parse_num<std::size_t>(v); }},
        {"data.n_max", "100", "training samples in the most frequent class",
         [](RunConfig& c, const std::string& v) { c.data.n_max = parse_num<std::size_t>(v); }},
        {"data.imbalance", "100", "ratio n_max/n_min of the exponential profile",
         [](RunConfig& c, const std::string& v) { c.data.imbalance = parse_num<double>(v); }},
        {"data.image_side", "16", "square image side in pixels",
         [](RunConfig& c, const std::string& v) { c.data.image_side = parse_num<std::size_t>(v); }},
        {"data.val_per_class", "10", "balanced validation samples per class",
         [](RunConfig& c, const std::string& v) {
             c.data.val_per_class = parse_num<std::size_t>(v);
         }},
        {"data.noise", "0.3", "pixel noise around class prototypes",
         [](RunConfig& c, const std::string& v) { c.data.noise = parse_num<double>(v); }},
        {"data.domain_shift", "0.5", "pixel permutation fraction and brightness shift of target",
         [](RunConfig& c, const std::string& v) { c.data.domain_shift = parse_num<double>(v); }},
        {"data.seed", "0", "dataset generation seed",
         [](RunConfig& c, const std::string& v) { c.data.seed = parse_num<std::uint64_t>(v); }},
        {"vit.layers", "4", "transformer depth L",
         [](RunConfig& c, const std::string& v) { c.model.vit.layers = parse_num<std::size_t>(v); }},
        {"vit.dim", "32", "embedding width d",
         [](RunConfig& c, const std::string& v) { c.model.vit.dim = parse_num<std::size_t>(v); }},
        {"vit.heads", "2", "attention heads",
         [](RunConfig& c, const std::string& v) { c.model.vit.heads = parse_num<std::size_t>(v); }},
        {"vit.patch", "4", "patch side in pixels",
         [](RunConfig& c, const std::string& v) { c.model.vit.patch = parse_num<std::size_t>(v); }},
        {"vit.p_len", "10", "prompt tokens per layer",
         [](RunConfig& c, const std::string& v) { c.model.vit.p_len = parse_num<std::size_t>(v); }},
        {"vit.shared_layers", "2", "blocks K driven by the shared prompt only",
         [](RunConfig& c, const std::string& v) {
             c.model.vit.shared_layers = parse_num<std::size_t>(v);
         }},
        {"vit.ffn_mult", "4", "FFN expansion factor",
         [](RunConfig& c, const std::string& v) {
             c.model.vit.ffn_mult = parse_num<std::size_t>(v);
         }},
        {"model.pool_size", "20", "group prompt pool size m",
         [](RunConfig& c, const std::string& v) {
             c.model.pool_size = parse_num<std::size_t>(v);
         }},
        {"model.ensemble_k", "2", "matched prompts averaged per sample",
         [](RunConfig& c, const std::string& v) {
             c.model.ensemble_k = parse_num<std::size_t>(v);
         }},
        {"model.adapter_hidden", "8", "adapter bottleneck width",
         [](RunConfig& c, const std::string& v) {
             c.model.adapter_hidden = parse_num<std::size_t>(v);
         }},
        {"model.adapter_scale", "0.1", "adapter branch scale s",
         [](RunConfig& c, const std::string& v) {
             c.model.adapter_scale = parse_num<double>(v);
         }},
        {"model.sigma", "16", "cosine classifier logit scale",
         [](RunConfig& c, const std::string& v) { c.model.sigma = parse_num<double>(v); }},
        {"train.batch", "16", "minibatch size B (each of the two dual batches)",
         [](RunConfig& c, const std::string& v) { c.train.batch = parse_num<std::size_t>(v); }},
        {"train.epochs", "40", "epochs E per phase",
         [](RunConfig& c, const std::string& v) { c.train.epochs = parse_num<std::size_t>(v); }},
        {"train.warmup", "5", "linear warmup epochs",
         [](RunConfig& c, const std::string& v) {
             c.train.warmup_epochs = parse_num<std::size_t>(v);
         }},
        {"train.lr_scale", "1", "multiplier on the 0.002*B/256 base rate",
         [](RunConfig& c, const std::string& v) { c.train.lr_scale = parse_num<double>(v); }},
        {"train.weight_decay", "0.01", "weight decay rate",
         [](RunConfig& c, const std::string& v) {
             c.train.weight_decay = parse_num<double>(v);
         }},
        {"train.momentum", "0.9", "SGD momentum",
         [](RunConfig& c, const std::string& v) { c.train.momentum = parse_num<double>(v); }},
        {"train.eta", "0.5", "initial weight of the instance-balanced batch",
         [](RunConfig& c, const std::string& v) { c.train.eta = parse_num<double>(v); }},
        {"train.seed", "0", "training and initialization seed",
         [](RunConfig& c, const std::string& v) { c.train.seed = parse_num<std::uint64_t>(v); }},
        {"pretrain.epochs", "15", "backbone pretraining epochs",
         [](RunConfig& c, const std::string& v) {
             c.pretrain_epochs = parse_num<std::size_t>(v);
         }},
        {"pretrain.batch", "16", "backbone pretraining batch size",
         [](RunConfig& c, const std::string& v) {
             c.pretrain_batch = parse_num<std::size_t>(v);
         }},
        {"pretrain.lr_scale", "100", "pretraining multiplier on the base rate",
         [](RunConfig& c, const std::string& v) {
             c.pretrain_lr_scale = parse_num<double>(v);
         }},
        {"gcl.alpha", "1", "logit rescale slope",
         [](RunConfig& c, const std::string& v) { c.gcl.alpha = parse_num<double>(v); }},
        {"gcl.lambda_plus", "0", "focusing exponent on the ground-truth class",
         [](RunConfig& c, const std::string& v) { c.gcl.lambda_plus = parse_num<double>(v); }},
        {"gcl.lambda_minus", "4", "focusing exponent on negative classes",
         [](RunConfig& c, const std::string& v) {
             c.gcl.lambda_minus = parse_num<double>(v);
         }},
        {"gcl.noise", "true", "sample the per-class margin noise during training",
         [](RunConfig& c, const std::string& v) { c.gcl.noise_enabled = parse_bool(v); }},
        {"gcl.variant", "asl_corrected", "negative-term form: asl_corrected or paper_literal",
         [](RunConfig& c, const std::string& v) {
             if (v == "asl_corrected")
                 c.gcl.variant = GclVariant::asl_corrected;
             else if (v == "paper_literal")
                 c.gcl.variant = GclVariant::paper_literal;
             else
                 throw ConfigError("gcl.variant must be asl_corrected or paper_literal");
         }},
        {"moe.epochs", "50", "scorer training epochs",
         [](RunConfig& c, const std::string& v) { c.moe.epochs = parse_num<std::size_t>(v); }},
        {"moe.batch", "8", "scorer minibatch size",
         [](RunConfig& c, const std::string& v) { c.moe.batch = parse_num<std::size_t>(v); }},
        {"moe.lr", "0.01", "scorer learning rate",
         [](RunConfig& c, const std::string& v) { c.moe.lr = parse_num<double>(v); }},
        {"moe.momentum", "0.9", "scorer SGD momentum",
         [](RunConfig& c, const std::string& v) { c.moe.momentum = parse_num<double>(v); }},
        {"moe.weight_decay", "0.01", "scorer weight decay",
         [](RunConfig& c, const std::string& v) { c.moe.weight_decay = parse_num<double>(v); }},
        {"moe.hidden", "128", "scorer MLP hidden width",
         [](RunConfig& c, const std::string& v) { c.moe.hidden = parse_num<std::size_t>(v); }},
        {"moe.epsilon", "0.001", "base weight search stop width",
         [](RunConfig& c, const std::string& v) { c.moe.epsilon = parse_num<double>(v); }},
        {"moe.seed", "0", "scorer initialization seed",
         [](RunConfig& c, const std::string& v) { c.moe.seed = parse_num<std::uint64_t>(v); }},
        {"expert2.backbone_seed", "1001", "backbone init seed of the second expert",
         [](RunConfig& c, const std::string& v) {
             c.expert2_backbone_seed = parse_num<std::uint64_t>(v);
         }},
        {"expert2.dim", "48", "embedding width of the second expert",
         [](RunConfig& c, const std::string& v) {
             c.expert2_dim = parse_num<std::size_t>(v);
         }},
        {"expert2.source_seed", "2001", "source rendering seed of the second expert",
         [](RunConfig& c, const std::string& v) {
             c.expert2_source_seed = parse_num<std::uint64_t>(v);
         }},
        {"analysis.knn_k", "20", "neighbors for the K-NN probe",
         [](RunConfig& c, const std::string& v) { c.knn_k = parse_num<std::size_t>(v); }},
        {"analysis.cluster_metric", "euclidean", "cluster distance: euclidean or cosine_angular",
         [](RunConfig& c, const std::string& v) {
             if (v == "euclidean")
                 c.cluster_metric = ClusterMetric::euclidean;
             else if (v == "cosine_angular")
                 c.cluster_metric = ClusterMetric::cosine_angular;
             else
                 throw ConfigError("analysis.cluster_metric must be euclidean or cosine_angular");
         }},
    };
    return keys;
}

std::string config_key_help() {
    std::ostringstream ss;
    ss << "Config file keys (key=value lines, '#' comments):\n";
    for (const auto& k : config_keys())
        ss << "  " << std::left << std::setw(26) << k.name << " default " << std::setw(14)
           << k.def << k.help << '\n';
    return ss.str();
}

RunConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string_view sv(line);
        if (auto h = sv.find('#'); h != std::string_view::npos) sv = sv.substr(0, h);
        while (!sv.empty() && std::isspace((unsigned char)sv.back())) sv.remove_suffix(1);
        while (!sv.empty() && std::isspace((unsigned char)sv.front())) sv.remove_prefix(1);
        if (sv.empty()) continue;
        auto eq = sv.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key(sv.substr(0, eq)), value(sv.substr(eq + 1));
        const ConfigKey* found = nullptr;
        for (const auto& k : config_keys())
            if (k.name == key) {
                found = &k;
                break;
            }
        if (!found)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        try {
            found->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.model.vit.image = cfg.data.image_side;
    cfg.model.num_classes = cfg.data.num_classes;
    try {
        cfg.model.vit.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return cfg;
}

/// canonical key=value text stored in checkpoints for provenance
std::string config_echo(const std::string& path) {
    std::ifstream is(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

ModelConfig expert_model_config(const RunConfig& cfg, int expert) {
    ModelConfig mc = cfg.model;
    if (expert == 2) mc.vit.dim = cfg.expert2_dim;
    return mc;
}

TrainConfig pretrain_train_config(const RunConfig& cfg, int expert) {
    TrainConfig t = cfg.train;
    t.epochs = cfg.pretrain_epochs;
    t.batch = cfg.pretrain_batch;
    t.lr_scale = cfg.pretrain_lr_scale;
    t.warmup_epochs = std::min(t.warmup_epochs, t.epochs / 3);
    t.seed = expert == 2 ? cfg.expert2_backbone_seed : cfg.train.seed;
    return t;
}

LongTailDataset load_required_dataset(const std::string& dir, const std::string& name) {
    auto path = std::filesystem::path(dir) / name;
    if (!std::filesystem::exists(path))
        throw DependencyError("missing dataset file " + path.string() +
                              " (run gen-data first)");
    return load_dataset(path.string());
}

Checkpoint load_stage_input(const std::string& path, Phase expected,
                            const std::string& producer) {
    if (!std::filesystem::exists(path))
        throw DependencyError("missing checkpoint " + path + " (run " + producer + " first)");
    Checkpoint ck = load_checkpoint(path);
    if (ck.phase != expected)
        throw DependencyError("checkpoint " + path + " is not a " + producer + " output");
    return ck;
}

void write_metrics_csv(const Checkpoint& ck, const std::string& ckpt_path) {
    std::ofstream os(ckpt_path + ".metrics.csv", std::ios::trunc);
    os << "epoch,loss_bal,loss_ins,lr\n";
    for (const auto& row : ck.metrics) os << row << '\n';
}

std::vector<std::size_t> predictions(const std::vector<std::vector<double>>& scores) {
    std::vector<std::size_t> preds;
    preds.reserve(scores.size());
    for (const auto& row : scores) preds.push_back(score_argmax(row));
    return preds;
}

void print_split_report(std::ostream& os, const std::string& tag, const SplitReport& rep) {
    os << std::setprecision(17);
    os << tag << ",overall," << rep.overall << '\n';
    auto line = [&](const char* name, const std::optional<double>& v) {
        if (v) os << tag << ',' << name << ',' << *v << '\n';
    };
    line("many", rep.many);
    line("medium", rep.medium);
    line("few", rep.few);
    for (std::size_t c = 0; c < rep.per_class.size(); ++c)
        os << tag << ",class_" << c << ',' << rep.per_class[c] << '\n';
}

std::vector<ShotTag> shot_tags(const RunConfig& cfg, const LongTailDataset& target) {
    return shot_split(target.counts, cfg.data.n_max / 5, cfg.data.n_max);
}

int cmd_gen_data(const std::string& config, const std::string& out) {
    RunConfig cfg = parse_config(config);
    auto [source, target] = generate_dataset(cfg.data);
    std::filesystem::create_directories(out);
    save_dataset(source, (std::filesystem::path(out) / "source.bin").string());
    save_dataset(target, (std::filesystem::path(out) / "target.bin").string());
    std::cout << "wrote " << out << "/source.bin (" << source.train_size() << " train) and "
              << out << "/target.bin (" << target.train_size() << " train)\n";
    return kExitOk;
}

int cmd_pretrain(const std::string& config, const std::string& data, const std::string& out,
                 int expert) {
    RunConfig cfg = parse_config(config);
    ModelConfig mc = expert_model_config(cfg, expert);
    LongTailDataset source;
    if (expert == 2) {
        DatasetSpec spec = cfg.data;
        spec.seed = cfg.expert2_source_seed;
        source = generate_dataset(spec).first;
    } else {
        source = load_required_dataset(data, "source.bin");
    }
    Checkpoint ck;
    ck.phase = Phase::pretrained;
    ck.model.cfg = mc;
    ck.model.backbone = pretrain_backbone(source, mc, pretrain_train_config(cfg, expert));
    ck.backbone_digest = ck.model.backbone_digest();
    ck.config_echo = config_echo(config);
    save_checkpoint(ck, out);
    std::cout << "pretrained backbone digest " << std::hex << ck.backbone_digest << std::dec
              << " -> " << out << '\n';
    return kExitOk;
}

int cmd_phase1(const std::string& config, const std::string& data, const std::string& in,
               const std::string& out) {
    RunConfig cfg = parse_config(config);
    Checkpoint pre = load_stage_input(in, Phase::pretrained, "pretrain");
    LongTailDataset target = load_required_dataset(data, "target.bin");
    Checkpoint ck = run_phase1(std::move(pre.model.backbone), pre.model.cfg, target, cfg.train,
                               cfg.gcl);
    ck.config_echo = config_echo(config);
    save_checkpoint(ck, out);
    write_metrics_csv(ck, out);
    std::cout << "phase 1 done: " << ck.epochs_done << " epochs -> " << out << '\n';
    return kExitOk;
}

int cmd_phase2(const std::string& config, const std::string& data, const std::string& in,
               const std::string& out) {
    RunConfig cfg = parse_config(config);
    Checkpoint ck = load_stage_input(in, Phase::phase1, "phase1");
    LongTailDataset target = load_required_dataset(data, "target.bin");
    run_phase2(ck, target, cfg.train, cfg.gcl);
    ck.config_echo = config_echo(config);
    save_checkpoint(ck, out);
    write_metrics_csv(ck, out);
    std::cout << "phase 2 done: " << ck.epochs_done << " epochs -> " << out << '\n';
    return kExitOk;
}

int cmd_phase3(const std::string& config, const std::string& data, const std::string& in,
               const std::string& in2, const std::string& out) {
    RunConfig cfg = parse_config(config);
    Checkpoint e1 = load_stage_input(in, Phase::phase2, "phase2");
    Checkpoint e2 = load_stage_input(in2, Phase::phase2, "phase2");
    LongTailDataset target = load_required_dataset(data, "target.bin");

    ExpertScores s;
    s.vo = expert_scores(e1.model, target, Split::train);
    s.vl = expert_scores(e2.model, target, Split::train);
    s.labels = target.train_labels;
    write_scores_csv(out + ".vo.csv", s.vo, s.labels);
    write_scores_csv(out + ".vl.csv", s.vl, s.labels);

    std::uint64_t d1 = digest(e1.model.pool.params()), d2 = digest(e2.model.pool.params());
    MoEScorerState st = run_phase3(s, cfg.moe);
    if (digest(e1.model.pool.params()) != d1 || digest(e2.model.pool.params()) != d2)
        throw std::runtime_error("phase3 mutated expert parameters");
    save_moe_scorer(st, out);
    ConflictSet cs = build_conflict_set(s);
    std::cout << "phase 3 done: w_base " << st.w_base << ", " << cs.indices.size()
              << " conflict samples (balance " << cs.balance() << ")"
              << (st.inert ? ", scorer inert" : "") << " -> " << out << '\n';
    return kExitOk;
}

int cmd_eval(const std::string& config, const std::string& data, const std::string& ckpt,
             const std::string& ckpt2, const std::string& moe_path, const std::string& out) {
    RunConfig cfg = parse_config(config);
    if (!std::filesystem::exists(ckpt))
        throw DependencyError("missing checkpoint " + ckpt);
    Checkpoint ck = load_checkpoint(ckpt);
    LongTailDataset target = load_required_dataset(data, "target.bin");
    auto tags = shot_tags(cfg, target);

    std::ostringstream report;
    report << "model,split,accuracy\n";
    auto scores = expert_scores(ck.model, target, Split::val, ck.phase);
    print_split_report(report, "expert", split_accuracy(predictions(scores),
                                                        target.val_labels, tags));

    if (!moe_path.empty()) {
        if (ckpt2.empty())
            throw DependencyError("--moe requires --ckpt2 with the second expert");
        if (!std::filesystem::exists(ckpt2))
            throw DependencyError("missing checkpoint " + ckpt2);
        Checkpoint ck2 = load_checkpoint(ckpt2);
        MoEScorerState st = load_moe_scorer(moe_path);
        ExpertScores s;
        s.vo = scores;
        s.vl = expert_scores(ck2.model, target, Split::val, ck2.phase);
        s.labels = target.val_labels;
        std::vector<std::size_t> fused_preds;
        for (std::size_t i = 0; i < s.size(); ++i) {
            double w = scorer_forward(st, s.vo[i], s.vl[i]);
            fused_preds.push_back(score_argmax(fuse(s.vo[i], s.vl[i], w)));
        }
        print_split_report(report, "moe",
                           split_accuracy(fused_preds, target.val_labels, tags));
    }

    if (out.empty()) {
        std::cout << report.str();
    } else {
        std::ofstream os(out, std::ios::trunc);
        os << report.str();
        std::cout << "wrote " << out << '\n';
    }
    return kExitOk;
}

int cmd_analyze(const std::string& config, const std::string& data, const std::string& ckpt,
                const std::string& out) {
    RunConfig cfg = parse_config(config);
    if (!std::filesystem::exists(ckpt))
        throw DependencyError("missing checkpoint " + ckpt);
    Checkpoint ck = load_checkpoint(ckpt);
    LongTailDataset target = load_required_dataset(data, "target.bin");

    auto collect = [&](bool adapted, Split split) {
        std::size_t n = split == Split::train ? target.train_size() : target.val_size();
        std::vector<std::vector<double>> feats(n);
        for (std::size_t i = 0; i < n; ++i) {
            Tensor img = split == Split::train ? target.train_image(i) : target.val_image(i);
            Tensor f = adapted ? adapted_feature(ck.model, img, ck.phase)
                               : frozen_feature(ck.model, img);
            feats[i] = f.data();
        }
        return feats;
    };

    std::ostringstream report;
    report << "features,metric,value\n" << std::setprecision(17);
    for (bool adapted : {false, true}) {
        const char* tag = adapted ? "adapted" : "frozen";
        auto train_f = collect(adapted, Split::train);
        auto val_f = collect(adapted, Split::val);
        auto stats = cluster_metrics(val_f, target.val_labels, target.num_classes,
                                     cfg.cluster_metric);
        report << tag << ",gamma," << stats.gamma << '\n';
        report << tag << ",inter_class_d," << stats.D << '\n';
        report << tag << ",knn_accuracy,"
               << knn_accuracy(train_f, target.train_labels, val_f, target.val_labels, cfg.knn_k)
               << '\n';
    }
    if (out.empty()) {
        std::cout << report.str();
    } else {
        std::ofstream os(out, std::ios::trunc);
        os << report.str();
        std::cout << "wrote " << out << '\n';
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-tailed prompt tuning pipeline"};
    app.footer(config_key_help());
    app.require_subcommand(1);

    std::string config, data, in, in2, out, ckpt, ckpt2, moe_path;
    int expert = 1;

    auto* gen = app.add_subcommand("gen-data", "generate the source/target benchmark files");
    gen->add_option("--config", config, "run configuration file")->required();
    gen->add_option("--out", out, "output directory")->required();

    auto* pre = app.add_subcommand("pretrain", "train and freeze a backbone on the source");
    pre->add_option("--config", config)->required();
    pre->add_option("--data", data, "dataset directory from gen-data")->required();
    pre->add_option("--out", out, "checkpoint path")->required();
    pre->add_option("--expert", expert, "1 or 2; expert 2 changes seed and width")
        ->check(CLI::Range(1, 2));

    auto* p1 = app.add_subcommand("phase1", "shared prompt + adapter training");
    p1->add_option("--config", config)->required();
    p1->add_option("--data", data)->required();
    p1->add_option("--in", in, "pretrain checkpoint")->required();
    p1->add_option("--out", out)->required();

    auto* p2 = app.add_subcommand("phase2", "group prompt pool training");
    p2->add_option("--config", config)->required();
    p2->add_option("--data", data)->required();
    p2->add_option("--in", in, "phase1 checkpoint")->required();
    p2->add_option("--out", out)->required();

    auto* p3 = app.add_subcommand("phase3", "mixture-of-experts scorer training");
    p3->add_option("--config", config)->required();
    p3->add_option("--data", data)->required();
    p3->add_option("--in", in, "first expert phase2 checkpoint")->required();
    p3->add_option("--in2", in2, "second expert phase2 checkpoint")->required();
    p3->add_option("--out", out, "scorer path")->required();

    auto* ev = app.add_subcommand("eval", "shot-split accuracy report");
    ev->add_option("--config", config)->required();
    ev->add_option("--data", data)->required();
    ev->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required();
    ev->add_option("--ckpt2", ckpt2, "second expert checkpoint (with --moe)");
    ev->add_option("--moe", moe_path, "scorer file for fused evaluation");
    ev->add_option("--out", out, "report path (default stdout)");

    auto* an = app.add_subcommand("analyze", "cluster and K-NN feature report");
    an->add_option("--config", config)->required();
    an->add_option("--data", data)->required();
    an->add_option("--ckpt", ckpt)->required();
    an->add_option("--out", out, "report path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config, out);
        if (pre->parsed()) return cmd_pretrain(config, data, out, expert);
        if (p1->parsed()) return cmd_phase1(config, data, in, out);
        if (p2->parsed()) return cmd_phase2(config, data, in, out);
        if (p3->parsed()) return cmd_phase3(config, data, in, in2, out);
        if (ev->parsed()) return cmd_eval(config, data, ckpt, ckpt2, moe_path, out);
        if (an->parsed()) return cmd_analyze(config, data, ckpt, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << '\n';
        return kExitDependency;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitOk;
}
