#include "attempt/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "attempt/util.hpp"

namespace attempt {

using nlohmann::json;
namespace fs = std::filesystem;

WorkdirLock::WorkdirLock(const std::string& workdir) {
    fs::create_directories(workdir);
    path_ = (fs::path(workdir) / ".lock").string();
    if (fs::exists(path_))
        fail("workdir is locked by another invocation (remove " + path_ +
             " if that process is gone)");
    std::ofstream out(path_);
    if (!out) fail("cannot create lock file " + path_);
    out << "locked\n";
}

WorkdirLock::~WorkdirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

namespace {

struct Paths {
    std::string hash;
    fs::path work, data, vocab_dir, pretrain, finetune, runs, reports;

    explicit Paths(const ExperimentConfig& cfg) : hash(config_hash8(cfg)), work(cfg.workdir) {
        data = work / "data";
        vocab_dir = work / "vocab";
        pretrain = work / "pretrain";
        finetune = work / "finetune";
        runs = work / "runs";
        reports = work / "reports";
    }

    std::string tag(uint64_t seed) const { return hash + "_s" + std::to_string(seed); }
    fs::path vocab_file() const { return vocab_dir / ("vocab_" + hash + ".json"); }
    fs::path pretrain_ckpt(uint64_t seed, int epoch) const {
        return pretrain / (tag(seed) + "_e" + std::to_string(epoch));
    }
    fs::path finetune_ckpt(uint64_t seed, int epoch) const {
        return finetune / (tag(seed) + "_e" + std::to_string(epoch));
    }
    fs::path test_run(uint64_t seed) const { return runs / ("test_" + tag(seed) + ".trec"); }
    fs::path seed_report(uint64_t seed) const {
        return reports / ("metrics_" + tag(seed) + ".json");
    }
    fs::path summary() const { return reports / ("summary_" + hash + ".json"); }
};

std::string resolve_path(const std::string& p, const fs::path& workdir) {
    if (p.empty()) return "";
    fs::path path(p);
    if (path.is_absolute()) return p;
    return (workdir / path).string();
}

bool checkpoint_exists(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

struct LoadedData {
    AspectSchema schema;
    std::vector<Record> items, queries;
    std::vector<Qrel> qrels;
    SplitSpec split;
};

// Ensures the four data files exist (generating them when a synth block is
// configured) and loads them.
LoadedData ensure_data(const ExperimentConfig& cfg, const Paths& paths, std::ostream& log) {
    DataConfig d = cfg.data;
    d.items = resolve_path(d.items.empty() ? "data/items.jsonl" : d.items, paths.work);
    d.queries = resolve_path(d.queries.empty() ? "data/queries.jsonl" : d.queries, paths.work);
    d.qrels = resolve_path(d.qrels.empty() ? "data/qrels.tsv" : d.qrels, paths.work);
    d.splits = resolve_path(d.splits.empty() ? "data/splits.json" : d.splits, paths.work);

    bool all_exist = file_exists(d.items) && file_exists(d.queries) && file_exists(d.qrels) &&
                     file_exists(d.splits);
    LoadedData out;
    out.schema.names = cfg.data.aspects;
    if (!all_exist) {
        if (!cfg.has_synth)
            fail("missing input data files and no [synth] block to generate them (items=" +
                 d.items + ")");
        log << "[data] generating synthetic dataset (seed " << cfg.synth_seed << ")\n";
        SynthData synth = generate_synthetic(cfg.synth, cfg.synth_seed);
        if (synth.schema.names != out.schema.names)
            fail("config data.aspects must be [\"category\", \"brand\"] when generating "
                 "synthetic data");
        fs::create_directories(fs::path(d.items).parent_path());
        write_records(d.items, synth.items, synth.schema);
        write_records(d.queries, synth.queries, synth.schema);
        write_qrels(d.qrels, synth.qrels);
        save_splits(d.splits, synth.split);
    } else {
        log << "[data] reusing existing data files\n";
    }
    out.items = load_records(d.items, out.schema, RecordKind::item);
    out.queries = load_records(d.queries, out.schema, RecordKind::query);
    out.qrels = load_qrels(d.qrels);
    out.split = load_splits(d.splits);
    return out;
}

std::vector<Record> pick_queries(const std::vector<Record>& queries,
                                 const std::vector<std::string>& ids) {
    std::map<std::string, const Record*> by_id;
    for (const auto& q : queries) by_id[q.id] = &q;
    std::vector<Record> out;
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) fail("split references unknown query '" + id + "'");
        out.push_back(*it->second);
    }
    return out;
}

std::vector<Qrel> qrels_for(const std::vector<Qrel>& qrels, const std::vector<Record>& queries) {
    std::set<std::string> ids;
    for (const auto& q : queries) ids.insert(q.id);
    std::vector<Qrel> out;
    for (const auto& q : qrels)
        if (ids.count(q.query_id)) out.push_back(q);
    return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream& log,
                                Stage stop_after) {
    cfg.validate();
    Paths paths(cfg);
    WorkdirLock lock(cfg.workdir);
    for (const auto& dir :
         {paths.data, paths.vocab_dir, paths.pretrain, paths.finetune, paths.runs, paths.reports})
        fs::create_directories(dir);

    // Refuse to mix artifacts from different configurations in one workdir.
    fs::path hash_file = paths.work / "config.hash";
    if (fs::exists(hash_file)) {
        std::string prior = read_file(hash_file.string());
        if (!prior.empty() && prior.back() == '\n') prior.pop_back();
        if (prior != paths.hash)
            fail("workdir " + cfg.workdir + " was produced by config " + prior +
                 ", current config is " + paths.hash + "; use a fresh workdir");
    } else {
        write_file(hash_file.string(), paths.hash + "\n");
    }
    log << "config_hash=" << paths.hash << "\n";

    LoadedData data = ensure_data(cfg, paths, log);
    ExperimentResult result;
    result.config_hash = paths.hash;
    if (stop_after == Stage::data) return result;

    std::vector<Record> train_queries = pick_queries(data.queries, data.split.train);
    std::vector<Record> val_queries = pick_queries(data.queries, data.split.val);
    std::vector<Record> test_queries = pick_queries(data.queries, data.split.test);

    // Vocabulary from the pre-training corpus: items plus training queries.
    Vocabulary vocab;
    if (fs::exists(paths.vocab_file())) {
        vocab = load_vocab(paths.vocab_file().string());
        log << "[vocab] reusing " << paths.vocab_file().string() << "\n";
    } else {
        vocab = build_vocab({std::span<const Record>(data.items),
                             std::span<const Record>(train_queries)},
                            data.schema.k(), cfg.vocab.min_freq, cfg.vocab.max_size);
        save_vocab(paths.vocab_file().string(), vocab);
        log << "[vocab] built " << vocab.size() << " tokens -> " << paths.vocab_file().string()
            << "\n";
    }

    if (stop_after == Stage::vocab) return result;

    build_value_vocabs(data.schema, data.items);

    std::vector<Record> pretrain_corpus = data.items;
    pretrain_corpus.insert(pretrain_corpus.end(), train_queries.begin(), train_queries.end());

    std::vector<Qrel> train_qrels = qrels_for(data.qrels, train_queries);
    std::vector<Qrel> val_qrels = qrels_for(data.qrels, val_queries);
    std::vector<Qrel> test_qrels = qrels_for(data.qrels, test_queries);

    MetricSpec select = parse_metric(cfg.select_metric);

    std::vector<std::string> item_ids, test_query_ids;
    for (const auto& r : data.items) item_ids.push_back(r.id);
    for (const auto& r : test_queries) test_query_ids.push_back(r.id);

    for (uint64_t seed : cfg.seeds) {
        log << "[seed " << seed << "] starting\n";
        SeedRunResult run;
        run.seed = seed;

        fs::path report_path = paths.seed_report(seed);
        if (fs::exists(report_path) && fs::exists(report_path.string() + ".meta")) {
            log << "[seed " << seed << "] reusing " << report_path.string() << "\n";
            auto metrics = load_metric_report(report_path.string());
            run.test_metrics = std::move(metrics);
            json extra = json::parse(read_file((report_path.string() + ".meta")));
            run.best_checkpoint_epoch = extra.at("best_epoch").get<int>();
            result.runs.push_back(std::move(run));
            continue;
        }

        ModelConfig model_cfg = cfg.model;
        model_cfg.vocab_size = vocab.size();
        model_cfg.seed = seed;

        TrainConfig pre_cfg = cfg.pretrain;
        pre_cfg.seed = seed;
        TrainConfig ft_cfg = cfg.finetune;
        ft_cfg.seed = seed;

        // Pre-train (or reuse every cadence checkpoint).
        std::vector<int> ckpt_epochs;
        for (int e = 1; e <= pre_cfg.epochs; ++e)
            if (e % pre_cfg.checkpoint_every == 0 || e == pre_cfg.epochs)
                ckpt_epochs.push_back(e);
        bool all_pre = true;
        for (int e : ckpt_epochs) all_pre &= checkpoint_exists(paths.pretrain_ckpt(seed, e));
        std::vector<Checkpoint> pre_ckpts;
        if (all_pre) {
            log << "[seed " << seed << "] reusing pre-trained checkpoints\n";
            for (int e : ckpt_epochs)
                pre_ckpts.push_back(load_checkpoint(paths.pretrain_ckpt(seed, e).string()));
        } else {
            log << "[seed " << seed << "] pre-training scheme "
                << to_string(pre_cfg.scheme.mode) << " for " << pre_cfg.epochs << " epochs\n";
            PretrainResult pre = pretrain(pretrain_corpus, vocab, data.schema, model_cfg, pre_cfg);
            for (size_t c = 0; c < pre.checkpoints.size(); ++c)
                save_checkpoint(pre.checkpoints[c],
                                paths.pretrain_ckpt(seed, pre.checkpoint_epochs[c]).string());
            save_training_log((paths.pretrain / (paths.tag(seed) + "_log.jsonl")).string(),
                              pre.log);
            pre_ckpts = std::move(pre.checkpoints);
            ckpt_epochs = pre.checkpoint_epochs;
        }
        if (stop_after == Stage::pretrain) {
            result.runs.push_back(std::move(run));
            continue;
        }

        // Fine-tune every pre-training checkpoint identically.
        FinetunePairs pairs = build_finetune_pairs(train_queries, data.items, train_qrels, seed);
        std::vector<Checkpoint> ft_ckpts;
        for (size_t c = 0; c < pre_ckpts.size(); ++c) {
            fs::path ft_dir = paths.finetune_ckpt(seed, ckpt_epochs[c]);
            if (checkpoint_exists(ft_dir)) {
                log << "[seed " << seed << "] reusing fine-tuned checkpoint e"
                    << ckpt_epochs[c] << "\n";
                ft_ckpts.push_back(load_checkpoint(ft_dir.string()));
                continue;
            }
            log << "[seed " << seed << "] fine-tuning checkpoint e" << ckpt_epochs[c] << " ("
                << pairs.pairs.size() << " pairs, " << pairs.skipped_queries << " skipped)\n";
            FinetuneResult ft = finetune(pairs, train_queries, data.items, vocab, data.schema,
                                         pre_ckpts[c], ft_cfg);
            save_checkpoint(ft.checkpoint, ft_dir.string());
            save_training_log(
                (paths.finetune / (paths.tag(seed) + "_e" + std::to_string(ckpt_epochs[c]) +
                                   "_log.jsonl"))
                    .string(),
                ft.log);
            ft_ckpts.push_back(std::move(ft.checkpoint));
        }
        if (stop_after == Stage::finetune) {
            result.runs.push_back(std::move(run));
            continue;
        }

        // Validation selection, then test retrieval with the winner.
        size_t best = select_best(ft_ckpts, val_queries, data.items, val_qrels, select, vocab,
                                  data.schema, cfg.eval.gains);
        run.best_checkpoint_epoch = ckpt_epochs[best];
        log << "[seed " << seed << "] selected fine-tuned checkpoint e"
            << run.best_checkpoint_epoch << " by " << cfg.select_metric << "\n";

        RunFile test_run;
        if (fs::exists(paths.test_run(seed))) {
            test_run = load_run_trec(paths.test_run(seed).string());
        } else {
            Tensor<float> q_embs = encode_corpus(ft_ckpts[best], test_queries,
                                                 TemplateMode::aspects_empty, vocab, data.schema);
            Tensor<float> i_embs = encode_corpus(ft_ckpts[best], data.items,
                                                 TemplateMode::with_aspects, vocab, data.schema);
            test_run = search(q_embs, test_query_ids, i_embs, item_ids, cfg.eval.run_depth,
                              to_string(cfg.pretrain.scheme.mode) + "_s" + std::to_string(seed));
            save_run_trec(paths.test_run(seed).string(), test_run);
        }

        auto relevant = binarize(test_qrels);
        for (int k : cfg.eval.recall_ks)
            run.test_metrics["recall@" + std::to_string(k)] = recall_at_k(test_run, relevant, k);
        run.test_metrics["ndcg@" + std::to_string(cfg.eval.ndcg_k)] =
            ndcg_at_k(test_run, test_qrels, cfg.eval.ndcg_k, cfg.eval.gains);

        save_metric_report(report_path.string(), run.test_metrics);
        write_file(report_path.string() + ".meta",
                   json{{"best_epoch", run.best_checkpoint_epoch}, {"seed", seed}}.dump() + "\n");
        for (const auto& [name, m] : run.test_metrics)
            log << "[seed " << seed << "] test " << name << " = " << m.mean << "\n";
        result.runs.push_back(std::move(run));
    }

    if (stop_after != Stage::full) return result;

    // Cross-seed aggregation.
    json summary;
    summary["config_hash"] = paths.hash;
    summary["scheme"] = to_string(cfg.pretrain.scheme.mode);
    summary["seeds"] = cfg.seeds;
    json metrics_json = json::object();
    std::vector<std::string> metric_names;
    for (const auto& [name, m] : result.runs.front().test_metrics) metric_names.push_back(name);
    for (const auto& name : metric_names) {
        double mean = 0;
        std::map<std::string, double> per_query_sum;
        std::map<std::string, int> per_query_n;
        json per_seed = json::array();
        for (const auto& run : result.runs) {
            const auto& m = run.test_metrics.at(name);
            mean += m.mean;
            per_seed.push_back(m.mean);
            for (const auto& [qid, v] : m.per_query) {
                per_query_sum[qid] += v;
                per_query_n[qid] += 1;
            }
        }
        mean /= static_cast<double>(result.runs.size());
        result.mean_metrics[name] = mean;
        json per_query = json::object();
        for (const auto& [qid, s] : per_query_sum)
            per_query[qid] = s / static_cast<double>(per_query_n[qid]);
        metrics_json[name] = {
            {"mean", mean}, {"per_seed_means", per_seed}, {"per_query_mean", per_query}};
        log << "[summary] " << name << " mean over " << result.runs.size() << " seeds = " << mean
            << "\n";
    }
    summary["metrics"] = metrics_json;
    write_file(paths.summary().string(), summary.dump(2) + "\n");
    result.summary_path = paths.summary().string();
    log << "[summary] written to " << result.summary_path << "\n";
    return result;
}

std::string find_summary(const std::string& path_or_workdir) {
    if (fs::is_regular_file(path_or_workdir)) return path_or_workdir;
    fs::path reports = fs::path(path_or_workdir) / "reports";
    if (fs::is_directory(reports)) {
        std::vector<std::string> found;
        for (const auto& entry : fs::directory_iterator(reports)) {
            std::string name = entry.path().filename().string();
            if (name.rfind("summary_", 0) == 0 && entry.path().extension() == ".json")
                found.push_back(entry.path().string());
        }
        if (found.size() == 1) return found.front();
        if (found.size() > 1)
            fail("multiple summaries under " + reports.string() + "; pass the file explicitly");
    }
    fail("no experiment summary found at " + path_or_workdir);
}

CompareTable compare_runs(
    const std::vector<std::pair<std::string, std::string>>& labeled_summaries) {
    if (labeled_summaries.size() < 2) fail("compare: need at least two runs");
    std::vector<json> summaries;
    for (const auto& [label, path] : labeled_summaries)
        summaries.push_back(json::parse(read_file(path)));

    CompareTable table;
    for (const auto& [label, path] : labeled_summaries) table.methods.push_back(label);
    for (auto& [name, entry] : summaries.front().at("metrics").items())
        table.metrics.push_back(name);

    for (size_t m = 0; m < summaries.size(); ++m) {
        std::vector<CompareCell> row;
        for (const auto& metric : table.metrics) {
            if (!summaries[m].at("metrics").contains(metric))
                fail("compare: run '" + table.methods[m] + "' lacks metric " + metric);
            const auto& mine = summaries[m].at("metrics").at(metric);
            CompareCell cell;
            cell.mean = mine.at("mean").get<double>();
            if (m == 0) {
                cell.p_vs_baseline = 1.0;
            } else {
                const auto& base = summaries[0].at("metrics").at(metric).at("per_query_mean");
                const auto& ours = mine.at("per_query_mean");
                std::vector<double> a, b;
                for (auto& [qid, v] : ours.items())
                    if (base.contains(qid)) {
                        a.push_back(v.get<double>());
                        b.push_back(base.at(qid).get<double>());
                    }
                if (a.size() >= 2) {
                    cell.p_vs_baseline = paired_t_test(a, b).p;
                } else {
                    cell.p_vs_baseline = 1.0;
                }
                cell.significant = cell.p_vs_baseline <= 0.05;
            }
            row.push_back(cell);
        }
        table.cells.push_back(std::move(row));
    }
    return table;
}

std::string CompareTable::to_text() const {
    std::ostringstream out;
    size_t name_w = 6;
    for (const auto& m : methods) name_w = std::max(name_w, m.size());
    out << std::left;
    out.width(static_cast<std::streamsize>(name_w + 2));
    out << "method";
    for (const auto& metric : metrics) {
        out.width(16);
        out << metric;
    }
    out << "\n";
    for (size_t m = 0; m < methods.size(); ++m) {
        out.width(static_cast<std::streamsize>(name_w + 2));
        out << methods[m];
        for (size_t j = 0; j < metrics.size(); ++j) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f%s", cells[m][j].mean,
                          cells[m][j].significant ? "*" : "");
            out.width(16);
            out << buf;
        }
        out << "\n";
    }
    out << "(* = p <= 0.05 against " << methods.front() << ")\n";
    return out.str();
}

std::string CompareTable::to_csv() const {
    std::ostringstream out;
    out << "method";
    for (const auto& metric : metrics) out << "," << metric << "," << metric << "_p";
    out << "\n";
    for (size_t m = 0; m < methods.size(); ++m) {
        out << methods[m];
        for (size_t j = 0; j < metrics.size(); ++j)
            out << "," << cells[m][j].mean << "," << cells[m][j].p_vs_baseline;
        out << "\n";
    }
    return out.str();
}

}  // namespace attempt
