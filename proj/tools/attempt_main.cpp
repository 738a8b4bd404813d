// Command-line front end: dataset generation, vocabulary building, the two
// training phases, encoding/search/eval as standalone file-to-file steps, the
// end-to-end experiment pipeline, and run comparison.

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "attempt/experiment.hpp"
#include "attempt/model_impl.hpp"
#include "attempt/util.hpp"

using namespace attempt;
using nlohmann::json;

namespace {

ExperimentConfig load_experiment_config(const std::string& config_path,
                                        const std::string& seeds_csv, uint64_t seed_override,
                                        bool has_seed_override) {
    ExperimentConfig cfg = experiment_config_from_json(load_config_file(config_path));
    if (const char* env = std::getenv("ATTEMPT_WORKDIR"); env && *env) cfg.workdir = env;
    if (!seeds_csv.empty()) {
        cfg.seeds.clear();
        std::istringstream ss(seeds_csv);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) cfg.seeds.push_back(std::stoull(part));
        if (cfg.seeds.empty()) fail("--seeds produced an empty seed list");
    }
    if (has_seed_override) cfg.seeds = {seed_override};
    return cfg;
}

// File-driven commands hash their resolved arguments so reruns are auditable
// the same way config-driven ones are.
void print_args_hash(const json& resolved) {
    std::cout << "config_hash=" << to_hex(fnv1a64(resolved.dump())).substr(8) << "\n";
}

GainMap parse_gains(const std::string& spec) {
    if (spec == "esci" || spec.empty()) return GainMap{};
    std::vector<double> g;
    std::istringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ',')) g.push_back(std::stod(part));
    if (g.size() != 4) fail("--gains expects 'esci' or four comma-separated values (E,S,C,I)");
    return GainMap{g[0], g[1], g[2], g[3]};
}

AspectSchema schema_from_csv(const std::string& aspects_csv) {
    AspectSchema schema;
    std::istringstream ss(aspects_csv);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) schema.names.push_back(part);
    schema.validate();
    return schema;
}

int run_stage_command(const std::string& config_path, const std::string& seeds_csv,
                      uint64_t seed_override, bool has_seed, Stage stage) {
    ExperimentConfig cfg = load_experiment_config(config_path, seeds_csv, seed_override, has_seed);
    run_experiment(cfg, std::cout, stage);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-aspect dense retrieval workbench"};
    app.require_subcommand(1);

    std::string config_path, seeds_csv;
    uint64_t seed_override = 0;
    bool json_output = false;

    auto add_config_opts = [&](CLI::App* cmd, bool seed_opts = true) {
        cmd->add_option("--config", config_path, "experiment config (.toml or .json)")
            ->required();
        if (seed_opts) {
            cmd->add_option("--seeds", seeds_csv, "comma-separated seed list override");
            cmd->add_option("--seed", seed_override, "single seed override");
        }
    };

    auto* synth_cmd = app.add_subcommand("synth", "generate the configured synthetic dataset");
    add_config_opts(synth_cmd, false);
    auto* vocab_cmd = app.add_subcommand("vocab", "build the vocabulary for a config");
    add_config_opts(vocab_cmd, false);
    auto* pretrain_cmd = app.add_subcommand("pretrain", "pre-train checkpoints for a config");
    add_config_opts(pretrain_cmd);
    auto* finetune_cmd =
        app.add_subcommand("finetune", "fine-tune every pre-training checkpoint");
    add_config_opts(finetune_cmd);
    auto* experiment_cmd =
        app.add_subcommand("experiment", "run the full pipeline and aggregate seeds");
    add_config_opts(experiment_cmd);

    // encode
    std::string enc_ckpt, enc_records, enc_mode = "with_aspects", enc_vocab, enc_aspects,
                enc_out;
    int enc_batch = 64;
    auto* encode_cmd = app.add_subcommand("encode", "embed records with a checkpoint");
    encode_cmd->add_option("--ckpt", enc_ckpt, "checkpoint directory")->required();
    encode_cmd->add_option("--records", enc_records, "records JSONL")->required();
    encode_cmd->add_option("--mode", enc_mode, "with_aspects|aspects_empty (queries)");
    encode_cmd->add_option("--vocab", enc_vocab, "vocab.json")->required();
    encode_cmd->add_option("--aspects", enc_aspects, "comma-separated aspect names")->required();
    encode_cmd->add_option("--out", enc_out, "output prefix (.bin/.json)")->required();
    encode_cmd->add_option("--batch-size", enc_batch, "encoding batch size");

    // search
    std::string srch_queries, srch_items, srch_out, srch_tag = "run";
    int srch_k = 100;
    auto* search_cmd = app.add_subcommand("search", "exhaustive dot-product retrieval");
    search_cmd->add_option("--queries", srch_queries, "query embedding prefix")->required();
    search_cmd->add_option("--items", srch_items, "item embedding prefix")->required();
    search_cmd->add_option("--k", srch_k, "ranking depth");
    search_cmd->add_option("--out", srch_out, "output TREC run file")->required();
    search_cmd->add_option("--tag", srch_tag, "run tag");

    // eval
    std::string ev_run, ev_qrels, ev_gains = "esci", ev_out;
    std::vector<int> ev_recall_ks{100, 500};
    int ev_ndcg_k = 50;
    auto* eval_cmd = app.add_subcommand("eval", "score a run file against qrels");
    eval_cmd->add_option("--run", ev_run, "TREC run file")->required();
    eval_cmd->add_option("--qrels", ev_qrels, "qrels TSV")->required();
    eval_cmd->add_option("--k", ev_recall_ks, "recall cutoffs");
    eval_cmd->add_option("--ndcg-k", ev_ndcg_k, "ndcg cutoff");
    eval_cmd->add_option("--gains", ev_gains, "'esci' or E,S,C,I gains");
    eval_cmd->add_option("--out", ev_out, "write the JSON report here too");
    eval_cmd->add_flag("--json", json_output, "print the JSON report");

    // compare
    std::vector<std::string> cmp_runs;
    std::string cmp_csv;
    auto* compare_cmd =
        app.add_subcommand("compare", "methods x metrics table with t-tests vs the first run");
    compare_cmd->add_option("runs", cmp_runs, "summary files or workdirs (label=path accepted)")
        ->required()
        ->expected(-2);
    compare_cmd->add_option("--csv", cmp_csv, "also write CSV here");
    compare_cmd->add_flag("--json", json_output, "print JSON instead of the text table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth_cmd) return run_stage_command(config_path, "", 0, false, Stage::data);
        if (*vocab_cmd) return run_stage_command(config_path, "", 0, false, Stage::vocab);
        if (*pretrain_cmd)
            return run_stage_command(config_path, seeds_csv, seed_override,
                                     pretrain_cmd->count("--seed") > 0, Stage::pretrain);
        if (*finetune_cmd)
            return run_stage_command(config_path, seeds_csv, seed_override,
                                     finetune_cmd->count("--seed") > 0, Stage::finetune);
        if (*experiment_cmd) {
            ExperimentConfig cfg = load_experiment_config(
                config_path, seeds_csv, seed_override, experiment_cmd->count("--seed") > 0);
            ExperimentResult res = run_experiment(cfg, std::cout, Stage::full);
            std::cout << "summary: " << res.summary_path << "\n";
            return 0;
        }

        if (*encode_cmd) {
            json resolved = {{"cmd", "encode"},   {"ckpt", enc_ckpt}, {"records", enc_records},
                             {"mode", enc_mode},  {"vocab", enc_vocab}, {"aspects", enc_aspects},
                             {"out", enc_out},    {"batch", enc_batch}};
            print_args_hash(resolved);
            for (const auto& p : {enc_ckpt + "/manifest.json", enc_records, enc_vocab})
                if (!file_exists(p)) fail("missing input file: " + p);
            AspectSchema schema = schema_from_csv(enc_aspects);
            Vocabulary vocab = load_vocab(enc_vocab);
            Checkpoint ckpt = load_checkpoint(enc_ckpt);
            TemplateMode mode;
            RecordKind kind;
            if (enc_mode == "with_aspects") {
                mode = TemplateMode::with_aspects;
                kind = RecordKind::item;
            } else if (enc_mode == "aspects_empty") {
                mode = TemplateMode::aspects_empty;
                kind = RecordKind::query;
            } else {
                fail("--mode must be with_aspects or aspects_empty");
            }
            auto records = load_records(enc_records, schema, kind);
            Tensor<float> embs = encode_corpus(ckpt, records, mode, vocab, schema, enc_batch);
            std::vector<std::string> ids;
            for (const auto& r : records) ids.push_back(r.id);
            save_embeddings(enc_out, embs, ids);
            std::cout << "encoded " << ids.size() << " records -> " << enc_out << ".bin\n";
            return 0;
        }

        if (*search_cmd) {
            json resolved = {{"cmd", "search"}, {"queries", srch_queries}, {"items", srch_items},
                             {"k", srch_k},     {"out", srch_out},         {"tag", srch_tag}};
            print_args_hash(resolved);
            for (const auto& p : {srch_queries + ".bin", srch_items + ".bin"})
                if (!file_exists(p)) fail("missing input file: " + p);
            auto [q_embs, q_ids] = load_embeddings(srch_queries);
            auto [i_embs, i_ids] = load_embeddings(srch_items);
            RunFile run = search(q_embs, q_ids, i_embs, i_ids, srch_k, srch_tag);
            save_run_trec(srch_out, run);
            std::cout << "ranked " << q_ids.size() << " queries -> " << srch_out << "\n";
            return 0;
        }

        if (*eval_cmd) {
            json resolved = {{"cmd", "eval"},        {"run", ev_run},
                             {"qrels", ev_qrels},    {"recall_ks", ev_recall_ks},
                             {"ndcg_k", ev_ndcg_k},  {"gains", ev_gains}};
            print_args_hash(resolved);
            for (const auto& p : {ev_run, ev_qrels})
                if (!file_exists(p)) fail("missing input file: " + p);
            RunFile run = load_run_trec(ev_run);
            auto qrels = load_qrels(ev_qrels);
            GainMap gains = parse_gains(ev_gains);
            std::map<std::string, MetricResult> metrics;
            auto relevant = binarize(qrels);
            for (int k : ev_recall_ks)
                metrics["recall@" + std::to_string(k)] = recall_at_k(run, relevant, k);
            metrics["ndcg@" + std::to_string(ev_ndcg_k)] =
                ndcg_at_k(run, qrels, ev_ndcg_k, gains);
            if (!ev_out.empty()) save_metric_report(ev_out, metrics);
            if (json_output) {
                json out = json::object();
                for (const auto& [name, m] : metrics) {
                    json per = json::object();
                    for (const auto& [qid, v] : m.per_query) per[qid] = v;
                    out[name] = {{"mean", m.mean}, {"per_query", per}};
                }
                std::cout << out.dump(2) << "\n";
            } else {
                for (const auto& [name, m] : metrics)
                    std::cout << name << " mean=" << m.mean << " (" << m.per_query.size()
                              << " queries";
                if (!metrics.empty()) std::cout << ")\n";
                for (const auto& [name, m] : metrics)
                    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
            }
            return 0;
        }

        if (*compare_cmd) {
            json resolved = {{"cmd", "compare"}, {"runs", cmp_runs}};
            print_args_hash(resolved);
            std::vector<std::pair<std::string, std::string>> labeled;
            for (const auto& arg : cmp_runs) {
                auto eq = arg.find('=');
                std::string label = eq == std::string::npos ? arg : arg.substr(0, eq);
                std::string path = eq == std::string::npos ? arg : arg.substr(eq + 1);
                labeled.emplace_back(label, find_summary(path));
            }
            CompareTable table = compare_runs(labeled);
            if (json_output) {
                json out = json::array();
                for (size_t m = 0; m < table.methods.size(); ++m) {
                    json row = {{"method", table.methods[m]}};
                    for (size_t j = 0; j < table.metrics.size(); ++j)
                        row[table.metrics[j]] = {{"mean", table.cells[m][j].mean},
                                                 {"p", table.cells[m][j].p_vs_baseline}};
                    out.push_back(row);
                }
                std::cout << out.dump(2) << "\n";
            } else {
                std::cout << table.to_text();
            }
            if (!cmp_csv.empty()) write_file(cmp_csv, table.to_csv());
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
