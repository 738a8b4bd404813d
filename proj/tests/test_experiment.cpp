#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "attempt/experiment.hpp"
#include "attempt/util.hpp"

using namespace attempt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("attempt_exp_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig tiny_config(const std::string& workdir) {
    ExperimentConfig cfg;
    cfg.workdir = workdir;
    cfg.seeds = {1};
    cfg.select_metric = "recall@5";
    cfg.data.aspects = {"category", "brand"};
    cfg.has_synth = true;
    cfg.synth.n_items = 120;
    cfg.synth.n_queries = 30;
    cfg.synth.n_categories = 4;
    cfg.synth.n_brands = 4;
    cfg.synth.words_per_category = 30;
    cfg.synth.n_noise_words = 40;
    cfg.synth_seed = 3;
    cfg.model.hidden_dim = 16;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.ffn_dim = 32;
    cfg.model.max_len = 32;
    cfg.pretrain.epochs = 2;
    cfg.pretrain.batch_size = 16;
    cfg.pretrain.checkpoint_every = 1;  // two cadence checkpoints
    cfg.pretrain.max_len = 32;
    cfg.finetune.epochs = 1;
    cfg.finetune.batch_size = 8;
    cfg.finetune.max_len = 32;
    cfg.eval.recall_ks = {5};
    cfg.eval.ndcg_k = 5;
    cfg.eval.run_depth = 10;
    return cfg;
}

size_t count_lines(std::istringstream&& ss, const std::string& needle) {
    size_t n = 0;
    std::string line;
    while (std::getline(ss, line))
        if (line.find(needle) != std::string::npos) ++n;
    return n;
}

}  // namespace

TEST_CASE("experiment runs end to end and aggregates metrics") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_config((tmp.path / "run").string());
    std::ostringstream log;
    ExperimentResult res = run_experiment(cfg, log);
    REQUIRE(res.runs.size() == 1);
    CHECK(res.mean_metrics.count("recall@5") == 1);
    CHECK(res.mean_metrics.count("ndcg@5") == 1);
    CHECK(res.mean_metrics["recall@5"] >= 0.0);
    CHECK(fs::exists(res.summary_path));

    // Cadence produced two pre-training checkpoints and two fine-tunes.
    size_t pretrain_ckpts = 0, finetune_ckpts = 0;
    for (const auto& e : fs::directory_iterator(tmp.path / "run" / "pretrain"))
        pretrain_ckpts += fs::is_directory(e.path());
    for (const auto& e : fs::directory_iterator(tmp.path / "run" / "finetune"))
        finetune_ckpts += fs::is_directory(e.path());
    CHECK(pretrain_ckpts == 2);
    CHECK(finetune_ckpts == 2);

    // The resolved config hash is printed for auditability.
    CHECK(count_lines(std::istringstream(log.str()), "config_hash=") == 1);
}

TEST_CASE("experiment is resumable: only deleted downstream artifacts recompute") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_config((tmp.path / "run").string());
    std::ostringstream first_log;
    ExperimentResult first = run_experiment(cfg, first_log);

    std::string run_path =
        (tmp.path / "run" / "runs" / ("test_" + first.config_hash + "_s1.trec")).string();
    std::string run_bytes = read_file(run_path);

    // Rerun with everything in place: data, vocab and the final report are
    // reused and no training happens.
    std::ostringstream reuse_log;
    run_experiment(cfg, reuse_log);
    CHECK(count_lines(std::istringstream(reuse_log.str()), "reusing") == 3);
    CHECK(count_lines(std::istringstream(reuse_log.str()), "pre-training scheme") == 0);

    // Delete only the run file and the report: retrieval and eval recompute,
    // checkpoints and vocab are reused, and the run file comes back identical.
    fs::remove(run_path);
    fs::remove(tmp.path / "run" / "reports" / ("metrics_" + first.config_hash + "_s1.json"));
    fs::remove(tmp.path / "run" / "reports" / ("metrics_" + first.config_hash + "_s1.json.meta"));
    std::ostringstream partial_log;
    run_experiment(cfg, partial_log);
    CHECK(count_lines(std::istringstream(partial_log.str()), "pre-training scheme") == 0);
    CHECK(count_lines(std::istringstream(partial_log.str()), "reusing pre-trained") == 1);
    CHECK(read_file(run_path) == run_bytes);
}

TEST_CASE("experiment rejects a workdir produced by a different config") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_config((tmp.path / "run").string());
    std::ostringstream log;
    run_experiment(cfg, log);

    ExperimentConfig other = cfg;
    other.pretrain.scheme.lambda_weight = 0.25;
    CHECK_THROWS_WITH_AS(run_experiment(other, log), doctest::Contains("config"),
                         std::runtime_error);
}

TEST_CASE("workdir lock guards concurrent invocations") {
    TempDir tmp;
    std::string workdir = (tmp.path / "run").string();
    WorkdirLock lock(workdir);
    auto take_again = [&]() { WorkdirLock second(workdir); };
    CHECK_THROWS_WITH_AS(take_again(), doctest::Contains("locked"), std::runtime_error);
    // Released on destruction.
    {
        WorkdirLock inner((tmp.path / "other").string());
    }
    WorkdirLock again((tmp.path / "other").string());
}

TEST_CASE("compare produces a table with p-values against the baseline") {
    TempDir tmp;
    ExperimentConfig cfg_a = tiny_config((tmp.path / "runA").string());
    ExperimentConfig cfg_b = tiny_config((tmp.path / "runB").string());
    cfg_b.pretrain.scheme.mode = SchemeMode::BIBERT;
    std::ostringstream log;
    ExperimentResult res_a = run_experiment(cfg_a, log);
    ExperimentResult res_b = run_experiment(cfg_b, log);

    CompareTable table = compare_runs(
        {{"attempt", res_a.summary_path}, {"bibert", res_b.summary_path}});
    REQUIRE(table.methods.size() == 2);
    REQUIRE(!table.metrics.empty());
    CHECK(table.cells[0][0].p_vs_baseline == 1.0);
    for (size_t j = 0; j < table.metrics.size(); ++j) {
        CHECK(table.cells[1][j].p_vs_baseline >= 0.0);
        CHECK(table.cells[1][j].p_vs_baseline <= 1.0);
    }
    std::string text = table.to_text();
    CHECK(text.find("attempt") != std::string::npos);
    CHECK(text.find("bibert") != std::string::npos);
    std::string csv = table.to_csv();
    CHECK(csv.find("method,") == 0);

    // Degenerate comparison: a run against itself has zero deltas and p = 1.
    CompareTable self = compare_runs(
        {{"a", res_a.summary_path}, {"again", res_a.summary_path}});
    for (size_t j = 0; j < self.metrics.size(); ++j) {
        CHECK(self.cells[0][j].mean == self.cells[1][j].mean);
        CHECK(self.cells[1][j].p_vs_baseline == 1.0);
        CHECK(!self.cells[1][j].significant);
    }

    // find_summary resolves a workdir to its summary file.
    CHECK(find_summary((tmp.path / "runA").string()) == res_a.summary_path);
    CHECK_THROWS_AS(find_summary((tmp.path / "nowhere").string()), std::runtime_error);
}
