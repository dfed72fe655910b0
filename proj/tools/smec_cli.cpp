// smec: train, evaluate and analyze sequential Matryoshka embedding compressors.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "smec/smec.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kNumericError = 3 };

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string file_digest(const std::string& path) { return hex64(smec::fnv1a64(smec::detail::read_all(path))); }

std::vector<std::size_t> parse_dims(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != tok.size()) throw std::invalid_argument("bad dimension list '" + s + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty dimension list");
    return out;
}

std::string join_dims(const std::vector<std::size_t>& dims) {
    std::string s;
    for (auto d : dims) s += (s.empty() ? "" : ",") + std::to_string(d);
    return s;
}

/// Collects outputs of one command and writes the manifest at the end.
class Run {
public:
    Run(std::string command, std::vector<std::string> argv) : command_(std::move(command)), argv_(std::move(argv)) {}

    void set_out(const std::string& dir) {
        out_ = dir;
        fs::create_directories(out_);
    }
    const std::string& out() const { return out_; }

    void input(const std::string& role, const std::string& path) {
        inputs_[role] = {{"path", path}, {"digest", file_digest(path)}};
    }

    void write(const std::string& name, const std::string& bytes, bool deterministic = true) {
        smec::write_file((fs::path(out_) / name).string(), bytes);
        artifacts_.push_back({{"path", name}, {"digest", hex64(smec::fnv1a64(bytes))}, {"deterministic", deterministic}});
        std::cout << "wrote " << (fs::path(out_) / name).string() << "\n";
    }

    json& config() { return config_; }

    void finish() {
        json m;
        m["tool_version"] = kToolVersion;
        m["command"] = command_;
        m["argv"] = argv_;
        if (config_.contains("seed")) m["seed"] = config_["seed"];
        m["config"] = config_;
        m["inputs"] = inputs_;
        m["artifacts"] = artifacts_;
        smec::write_file((fs::path(out_) / "manifest.json").string(), m.dump(2) + "\n");
    }

private:
    std::string command_;
    std::vector<std::string> argv_;
    std::string out_;
    json config_ = json::object();
    json inputs_ = json::object();
    json artifacts_ = json::array();
};

struct DataArgs {
    std::string queries, docs, qrels;
    double val_fraction = 0.1;
};

struct TrainArgs {
    std::string mode = "smrl";
    std::string trajectory;
    std::uint64_t seed = 42;
    double alpha = smec::kDefaultAlpha;
    std::size_t memory_size = 5000;
    std::size_t neighbor_k = 10;
    std::size_t pair_top_k = 64;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double logit_lr = 0.05;
    std::size_t patience = 3;
    double min_delta = 1e-4;
    std::size_t epoch_cap = 20;
    bool no_ads = false;
    bool no_xbm = false;
};

void add_data_options(CLI::App* app, DataArgs& d) {
    app->add_option("--queries", d.queries, "query embeddings (.smec or .jsonl)")->required();
    app->add_option("--docs", d.docs, "document embeddings (.smec or .jsonl)")->required();
    app->add_option("--qrels", d.qrels, "relevance judgments (TSV: query doc gain)")->required();
    app->add_option("--val-fraction", d.val_fraction, "share of queries held out for validation");
}

void add_train_options(CLI::App* app, TrainArgs& t, bool with_mode) {
    if (with_mode) app->add_option("--mode", t.mode, "smrl or mrl")->check(CLI::IsMember({"smrl", "mrl"}));
    app->add_option("--trajectory", t.trajectory, "comma separated dims, e.g. 64,32,16")->required();
    app->add_option("--seed", t.seed, "random seed");
    app->add_option("--alpha", t.alpha, "weight of the similarity-preservation loss");
    app->add_option("--memory-size", t.memory_size, "S-XBM capacity");
    app->add_option("--neighbor-k", t.neighbor_k, "memory neighbors per anchor");
    app->add_option("--pair-top-k", t.pair_top_k, "in-batch pairs kept when S-XBM is off");
    app->add_option("--batch-size", t.batch_size, "queries per batch");
    app->add_option("--lr", t.lr, "Adam learning rate for dense parameters");
    app->add_option("--logit-lr", t.logit_lr, "Adam learning rate for selection logits");
    app->add_option("--patience", t.patience, "validation evaluations without improvement before stopping");
    app->add_option("--min-delta", t.min_delta, "relative validation improvement that resets patience");
    app->add_option("--epoch-cap", t.epoch_cap, "max epochs per stage");
    app->add_flag("--no-ads", t.no_ads, "prefix truncation instead of learned selection");
    app->add_flag("--no-xbm", t.no_xbm, "in-batch top-k pairs instead of the memory bank");
}

smec::TrainConfig make_config(const TrainArgs& t) {
    smec::TrainConfig c;
    c.mode = t.mode == "mrl" ? smec::TrainMode::mrl : smec::TrainMode::smrl;
    c.trajectory = parse_dims(t.trajectory);
    c.seed = t.seed;
    c.alpha = t.alpha;
    c.memory_capacity = t.memory_size;
    c.neighbor_k = t.neighbor_k;
    c.pair_top_k = t.pair_top_k;
    c.batch_size = t.batch_size;
    c.learning_rate = t.lr;
    c.logit_learning_rate = t.logit_lr;
    c.patience = t.patience;
    c.min_delta = t.min_delta;
    c.epoch_cap = t.epoch_cap;
    c.use_ads = !t.no_ads;
    c.use_xbm = !t.no_xbm;
    c.threads = smec::worker_count();
    c.validate();
    return c;
}

json config_json(const smec::TrainConfig& c) {
    return {{"mode", smec::to_string(c.mode)},
            {"trajectory", c.trajectory},
            {"seed", c.seed},
            {"alpha", c.alpha},
            {"memory_size", c.memory_capacity},
            {"neighbor_k", c.neighbor_k},
            {"pair_top_k", c.pair_top_k},
            {"batch_size", c.batch_size},
            {"lr", c.learning_rate},
            {"logit_lr", c.logit_learning_rate},
            {"patience", c.patience},
            {"min_delta", c.min_delta},
            {"epoch_cap", c.epoch_cap},
            {"ads", c.use_ads},
            {"xbm", c.use_xbm},
            {"tau_start", c.tau_start},
            {"tau_end", c.tau_end}};
}

smec::TrainData load_data(const DataArgs& d, Run& run) {
    auto q = smec::load_embeddings(d.queries);
    auto docs = smec::load_embeddings(d.docs);
    auto qrels = smec::load_qrels(d.qrels);
    run.input("queries", d.queries);
    run.input("docs", d.docs);
    run.input("qrels", d.qrels);
    if (q.dim() != docs.dim()) {
        throw smec::FormatError("query dim " + std::to_string(q.dim()) + " != doc dim " + std::to_string(docs.dim()));
    }
    try {
        return smec::TrainData::from(std::move(q), std::move(docs), std::move(qrels), d.val_fraction);
    } catch (const std::invalid_argument& e) {
        throw smec::FormatError(e.what());
    }
}

void log_stage(const smec::StageReport& r) {
    std::cout << "stage " << r.in_dim << "->" << r.out_dim << ": " << r.steps << " steps, " << r.epochs
              << " epochs, val loss " << r.initial_val_loss << " -> " << r.final_val_loss
              << (r.converged ? " (converged)" : "") << "\n";
}

// ---------------------------------------------------------------------------

int cmd_synth(Run& run, std::size_t dim, std::size_t signal, double noise, std::size_t nq, std::size_t nd,
              std::size_t negatives, std::uint64_t seed) {
    smec::PlantedSpec spec;
    spec.total_dim = dim;
    spec.signal_dims = smec::random_subset(dim, signal, smec::mix_seed(seed, 7));
    spec.noise_scale = noise;
    spec.n_queries = nq;
    spec.n_docs = nd;
    spec.judged_negatives = negatives;
    spec.seed = seed;
    const auto data = smec::synth_planted(spec);
    run.config() = {{"dim", dim}, {"signal", signal}, {"noise", noise}, {"queries", nq}, {"docs", nd},
                    {"negatives", negatives}, {"seed", seed}};
    std::ostringstream q, d;
    smec::write_embeddings_binary(q, data.queries);
    smec::write_embeddings_binary(d, data.docs);
    run.write("queries.smec", q.str());
    run.write("docs.smec", d.str());
    std::string qrels;
    for (const auto& [qid, judged] : data.qrels) {
        for (const auto& [doc, gain] : judged) qrels += qid + "\t" + doc + "\t" + smec::format_number(gain) + "\n";
    }
    run.write("qrels.tsv", qrels);
    run.write("signal_dims.json", json(spec.signal_dims).dump() + "\n");
    return kOk;
}

int cmd_train(Run& run, const DataArgs& d, const TrainArgs& t, const std::string& resume) {
    auto cfg = make_config(t);
    run.config() = config_json(cfg);
    const auto data = load_data(d, run);
    std::cout << "seed " << cfg.seed << "\n";
    if (cfg.mode == smec::TrainMode::mrl) {
        if (!resume.empty()) throw std::invalid_argument("--resume applies to smrl mode only");
        auto [adapter, rep] = smec::train_mrl(data, cfg);
        log_stage(rep);
        run.write("mrl.ckpt", smec::serialize_mrl(adapter));
        run.write("report_mrl.csv", smec::stage_report_table(rep).str());
        return kOk;
    }
    smec::AdapterStack stack;
    if (!resume.empty()) {
        stack = smec::load_stack(resume);
        run.input("resume", resume);
    }
    const std::size_t first = stack.stages.size();
    std::size_t idx = first;
    smec::train_smrl(stack, data, cfg, [&](const smec::AdapterStack& s, const smec::StageReport& r) {
        log_stage(r);
        run.write("stage_" + std::to_string(idx) + ".ckpt", smec::serialize_stack(s));
        run.write("report_stage_" + std::to_string(idx) + ".csv", smec::stage_report_table(r).str());
        ++idx;
    });
    if (idx == first) std::cout << "checkpoint already covers the trajectory; nothing to train\n";
    return kOk;
}

int cmd_eval(Run& run, const DataArgs& d, const std::string& checkpoint, std::size_t dim) {
    auto queries = smec::load_embeddings(d.queries);
    auto docs = smec::load_embeddings(d.docs);
    const auto qrels = smec::load_qrels(d.qrels);
    run.input("queries", d.queries);
    run.input("docs", d.docs);
    run.input("qrels", d.qrels);
    smec::Encoder enc;
    std::vector<std::size_t> dims;
    std::optional<smec::AdapterStack> stack;
    std::optional<smec::MrlAdapter> mrl;
    if (checkpoint.empty()) {
        dims = {queries.dim()};
        enc = [](smec::ConstSpan z) { return smec::Vector(z.begin(), z.end()); };
    } else if (smec::is_mrl_checkpoint(checkpoint)) {
        mrl = smec::load_mrl(checkpoint);
        dims = mrl->head_dims;
        enc = [&, dim](smec::ConstSpan z) { return smec::mrl_encode(*mrl, z, dim); };
    } else {
        stack = smec::load_stack(checkpoint);
        dims = stack->dims();
        enc = [&, dim](smec::ConstSpan z) { return smec::encode_at_dim(*stack, z, dim); };
    }
    if (!checkpoint.empty()) run.input("checkpoint", checkpoint);
    if (dim == 0) dim = dims.back();
    if (std::find(dims.begin(), dims.end(), dim) == dims.end()) {
        throw std::invalid_argument("dim " + std::to_string(dim) + " not available; checkpoint dims: " + join_dims(dims));
    }
    if (queries.dim() != dims.front() && !mrl) {
        throw smec::FormatError("embedding dim " + std::to_string(queries.dim()) + " does not match checkpoint input dim " +
                                std::to_string(dims.front()));
    }
    run.config() = {{"dim", dim}, {"checkpoint", checkpoint}};
    const auto qe = smec::encode_set(queries, enc);
    const auto de = smec::encode_set(docs, enc);
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < queries.size(); ++r) {
        if (qrels.count(queries.ids()[r])) rows.push_back(r);
    }
    const auto rep = smec::evaluate_retrieval(qe, de, qrels, rows, 10);
    std::cout << "nDCG@10 at dim " << dim << ": " << rep.mean << " over " << rows.size() << " queries";
    if (rep.zero_relevant) std::cout << " (" << rep.zero_relevant << " without relevant docs)";
    std::cout << "\n";
    run.write("eval_d" + std::to_string(dim) + ".csv", smec::retrieval_table(rep).str());
    return kOk;
}

int cmd_analyze_gradients(Run& run, const DataArgs& d, const TrainArgs& t) {
    auto cfg = make_config(t);
    cfg.mode = smec::TrainMode::smrl;
    run.config() = config_json(cfg);
    const auto data = load_data(d, run);
    std::cout << "seed " << cfg.seed << "\n";
    smec::AdapterStack stack;
    const auto smrl_reports = smec::train_smrl(stack, data, cfg);
    for (const auto& r : smrl_reports) log_stage(r);
    auto mc = cfg;
    mc.mode = smec::TrainMode::mrl;
    mc.epoch_cap = smec::total_epochs(smrl_reports);
    mc.early_stop = false;
    auto [adapter, mrl_report] = smec::train_mrl(data, mc);
    log_stage(mrl_report);
    run.write("fig4_gradients_smrl.csv", smec::gradient_table(smrl_reports).str());
    run.write("fig4_gradients_mrl.csv", smec::gradient_table({mrl_report}).str());
    run.write("fig4_val_loss_smrl.csv", smec::val_loss_table(smrl_reports).str());
    run.write("fig4_val_loss_mrl.csv", smec::val_loss_table({mrl_report}).str());
    return kOk;
}

int cmd_analyze_ware(Run& run, const std::string& embeddings, std::size_t sample, std::uint64_t seed,
                     const std::string& checkpoint) {
    const auto set = smec::load_embeddings(embeddings);
    run.input("embeddings", embeddings);
    run.config() = {{"sample", sample}, {"seed", seed}, {"checkpoint", checkpoint}};
    std::cout << "seed " << seed << "\n";
    const auto rep = smec::ware_per_dimension(set, sample, seed);
    run.write("ware.json", smec::ware_json(rep));
    smec::CsvTable t({"dim", "ware", "rank"});
    std::vector<std::size_t> rank_of(rep.values.size());
    for (std::size_t r = 0; r < rep.ranking.size(); ++r) rank_of[rep.ranking[r]] = r + 1;
    for (std::size_t c = 0; c < rep.values.size(); ++c) {
        t.add({smec::format_number(c), smec::format_number(rep.values[c]), smec::format_number(rank_of[c])});
    }
    run.write("table3_ware.csv", t.str());
    if (!checkpoint.empty()) {
        run.input("checkpoint", checkpoint);
        const auto stack = smec::load_stack(checkpoint);
        if (stack.input_dim != set.dim()) throw smec::FormatError("checkpoint input dim does not match embeddings");
        smec::CsvTable a({"dim", "achievement_rate"});
        for (std::size_t s = 1; s <= stack.stages.size(); ++s) {
            const auto sel = smec::composed_selection(stack, s);
            const double rate = smec::achievement_rate(sel, rep.ranking);
            std::cout << "achievement rate at dim " << sel.size() << ": " << rate << "\n";
            a.add({smec::format_number(sel.size()), smec::format_number(rate)});
        }
        run.write("table3_achievement.csv", a.str());
    }
    return kOk;
}

int cmd_analyze_ablation(Run& run, const DataArgs& d, const TrainArgs& t) {
    auto cfg = make_config(t);
    run.config() = config_json(cfg);
    const auto data = load_data(d, run);
    std::cout << "seed " << cfg.seed << "\n";
    const auto rows = smec::run_ablation(data, cfg);
    run.write("table1_ablation.csv", smec::ablation_table(rows).str());
    return kOk;
}

int cmd_analyze_memory(Run& run, const DataArgs& d, const TrainArgs& t, const std::string& sizes_arg) {
    auto cfg = make_config(t);
    const auto sizes = parse_dims(sizes_arg);
    run.config() = config_json(cfg);
    run.config()["sizes"] = sizes;
    const auto data = load_data(d, run);
    std::cout << "seed " << cfg.seed << "\n";
    const auto rows = smec::run_memory_sweep(data, cfg, sizes);
    smec::CsvTable metric({"memory_size", "ndcg@10", "peak_occupancy"});
    smec::CsvTable timing({"memory_size", "mean_step_seconds"});
    for (const auto& r : rows) {
        std::cout << "memory " << r.size << ": " << r.mean_step_seconds << " s/step, nDCG@10 " << r.ndcg << "\n";
        metric.add({smec::format_number(r.size), smec::format_number(r.ndcg), smec::format_number(r.peak_occupancy)});
        timing.add({smec::format_number(r.size), smec::format_number(r.mean_step_seconds)});
    }
    run.write("table2_memory.csv", metric.str());
    run.write("table2_timing.csv", timing.str(), false);
    return kOk;
}

int cmd_analyze_scaling(Run& run, const std::string& dims_arg, const std::string& loss, std::size_t trials,
                        std::uint64_t seed) {
    const auto dims = parse_dims(dims_arg);
    const auto kind = smec::parse_loss_kind(loss);
    run.config() = {{"dims", dims}, {"loss", loss}, {"trials", trials}, {"seed", seed}};
    std::cout << "seed " << seed << "\n";
    const auto res = smec::scaling_probe(dims, kind, trials, seed);
    for (const auto& r : res.ratios) {
        std::cout << "grad(" << r.dim_a << ")/grad(" << r.dim_b << ") = " << r.measured << ", predicted " << r.predicted
                  << "\n";
    }
    run.write("scaling.csv", smec::scaling_table(res).str());
    run.write("scaling_ratios.csv", smec::scaling_ratio_table(res).str());
    return kOk;
}

int dispatch(std::vector<std::string> argv);

int cmd_rerun(const std::string& manifest_path, std::string out) {
    json m;
    try {
        m = json::parse(smec::detail::read_all(manifest_path));
    } catch (const json::exception& e) {
        throw smec::FormatError("manifest " + manifest_path + ": " + e.what());
    }
    for (const auto& [role, in] : m.at("inputs").items()) {
        const auto path = in.at("path").get<std::string>();
        if (file_digest(path) != in.at("digest").get<std::string>()) {
            throw smec::FormatError("input '" + path + "' changed since the recorded run");
        }
    }
    auto argv = m.at("argv").get<std::vector<std::string>>();
    std::string old_out;
    for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
        if (argv[i] == "--out") old_out = argv[i + 1];
    }
    if (out.empty()) out = old_out + "_rerun";
    for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
        if (argv[i] == "--out") argv[i + 1] = out;
    }
    if (const int rc = dispatch(argv); rc != kOk) return rc;
    std::size_t same = 0, checked = 0;
    for (const auto& a : m.at("artifacts")) {
        if (!a.at("deterministic").get<bool>()) continue;
        ++checked;
        const auto path = (fs::path(out) / a.at("path").get<std::string>()).string();
        const bool ok = fs::exists(path) && file_digest(path) == a.at("digest").get<std::string>();
        if (ok) {
            ++same;
        } else {
            std::cout << "MISMATCH " << a.at("path").get<std::string>() << "\n";
        }
    }
    std::cout << "reproduced " << same << "/" << checked << " artifacts\n";
    return same == checked ? kOk : kNumericError;
}

int dispatch(std::vector<std::string> argv) {
    CLI::App app{"Sequential Matryoshka embedding compression"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    std::string out = "run";

    auto* synth = app.add_subcommand("synth", "generate a planted synthetic retrieval task");
    std::size_t s_dim = 64, s_signal = 16, s_queries = 200, s_docs = 2000, s_neg = 15;
    double s_noise = 0.05;
    std::uint64_t s_seed = 42;
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--dim", s_dim, "embedding dim");
    synth->add_option("--signal", s_signal, "number of signal dims");
    synth->add_option("--noise", s_noise, "noise scale on every dim");
    synth->add_option("--n-queries", s_queries, "number of queries");
    synth->add_option("--n-docs", s_docs, "number of documents");
    synth->add_option("--negatives", s_neg, "judged non-relevant docs per query");
    synth->add_option("--seed", s_seed, "random seed");

    auto* train = app.add_subcommand("train", "train an adapter stack (smrl) or a parallel adapter (mrl)");
    DataArgs train_data;
    TrainArgs train_args;
    std::string resume;
    add_data_options(train, train_data);
    add_train_options(train, train_args, true);
    train->add_option("--out", out, "output directory")->required();
    train->add_option("--resume", resume, "continue from a stage checkpoint");

    auto* eval = app.add_subcommand("eval", "nDCG@10 of compressed embeddings");
    DataArgs eval_data;
    std::string checkpoint;
    std::size_t dim = 0;
    add_data_options(eval, eval_data);
    eval->add_option("--checkpoint", checkpoint, "stage or mrl checkpoint; omit for raw embeddings");
    eval->add_option("--dim", dim, "compressed dim (default: smallest)");
    eval->add_option("--out", out, "output directory")->required();

    auto* analyze = app.add_subcommand("analyze", "figure and table reproductions");
    analyze->require_subcommand(1);
    auto* grads = analyze->add_subcommand("gradients", "gradient statistics of SMRL vs MRL training");
    DataArgs g_data;
    TrainArgs g_args;
    add_data_options(grads, g_data);
    add_train_options(grads, g_args, false);
    grads->add_option("--out", out, "output directory")->required();

    auto* ware = analyze->add_subcommand("ware", "per-dimension importance");
    std::string embeddings, w_checkpoint;
    std::size_t sample = 10000;
    std::uint64_t w_seed = 42;
    ware->add_option("--embeddings", embeddings, "embedding file")->required();
    ware->add_option("--sample", sample, "number of random pairs");
    ware->add_option("--seed", w_seed, "pair sampling seed");
    ware->add_option("--checkpoint", w_checkpoint, "stage checkpoint for achievement rates");
    ware->add_option("--out", out, "output directory")->required();

    auto* ablation = analyze->add_subcommand("ablation", "component ablation grid");
    DataArgs a_data;
    TrainArgs a_args;
    add_data_options(ablation, a_data);
    add_train_options(ablation, a_args, false);
    ablation->add_option("--out", out, "output directory")->required();

    auto* memory = analyze->add_subcommand("memory-sweep", "step time and quality per memory size");
    DataArgs m_data;
    TrainArgs m_args;
    std::string sizes = "100,1000,5000";
    add_data_options(memory, m_data);
    add_train_options(memory, m_args, false);
    memory->add_option("--sizes", sizes, "comma separated memory sizes");
    memory->add_option("--out", out, "output directory")->required();

    auto* scaling = analyze->add_subcommand("scaling", "gradient magnitude vs compared dim");
    std::string dims = "16,32,64,128", loss = "mse";
    std::size_t trials = 500;
    std::uint64_t sc_seed = 42;
    scaling->add_option("--dims", dims, "ascending dims");
    scaling->add_option("--loss", loss, "rank, mse or ce");
    scaling->add_option("--trials", trials, "random trials");
    scaling->add_option("--seed", sc_seed, "random seed");
    scaling->add_option("--out", out, "output directory")->required();

    auto* rerun = app.add_subcommand("rerun", "repeat a run from its manifest and compare outputs");
    std::string manifest;
    std::string rerun_out;
    rerun->add_option("--manifest", manifest, "manifest.json of an earlier run")->required();
    rerun->add_option("--out", rerun_out, "output directory (default: <original>_rerun)");

    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    if (*rerun) return cmd_rerun(manifest, rerun_out);

    std::string command = app.get_subcommands().front()->get_name();
    if (*analyze) command += " " + analyze->get_subcommands().front()->get_name();
    Run run(command, argv);
    run.set_out(out);
    int rc = kOk;
    if (*synth) {
        rc = cmd_synth(run, s_dim, s_signal, s_noise, s_queries, s_docs, s_neg, s_seed);
    } else if (*train) {
        rc = cmd_train(run, train_data, train_args, resume);
    } else if (*eval) {
        rc = cmd_eval(run, eval_data, checkpoint, dim);
    } else if (*grads) {
        rc = cmd_analyze_gradients(run, g_data, g_args);
    } else if (*ware) {
        rc = cmd_analyze_ware(run, embeddings, sample, w_seed, w_checkpoint);
    } else if (*ablation) {
        rc = cmd_analyze_ablation(run, a_data, a_args);
    } else if (*memory) {
        rc = cmd_analyze_memory(run, m_data, m_args, sizes);
    } else if (*scaling) {
        rc = cmd_analyze_scaling(run, dims, loss, trials, sc_seed);
    }
    run.finish();
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return dispatch(args);
    } catch (const smec::NumericAbort& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumericError;
    } catch (const smec::IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const smec::FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const smec::DegenerateInput& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
}
