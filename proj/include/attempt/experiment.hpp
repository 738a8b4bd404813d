#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "attempt/config.hpp"

namespace attempt {

// End-to-end pipeline for one config: data -> vocab -> pretrain ->
// per-checkpoint fine-tune -> validation selection -> test retrieval ->
// metrics, once per seed, plus a cross-seed summary. Every stage is skipped
// when its artifacts already exist, so deleting a downstream artifact
// recomputes exactly that stage onward.
struct SeedRunResult {
    uint64_t seed = 0;
    int best_checkpoint_epoch = 0;
    std::map<std::string, MetricResult> test_metrics;  // keyed "recall@10", "ndcg@50", ...
};

struct ExperimentResult {
    std::string config_hash;
    std::vector<SeedRunResult> runs;
    std::map<std::string, double> mean_metrics;  // mean over seeds of per-seed means
    std::string summary_path;
};

// How far to drive the pipeline; the dedicated CLI subcommands stop early.
enum class Stage { data, vocab, pretrain, finetune, full };

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream& log,
                                Stage stop_after = Stage::full);

// Holds an exclusive advisory lock on a workdir for the lifetime of the object.
class WorkdirLock {
public:
    explicit WorkdirLock(const std::string& workdir);
    ~WorkdirLock();
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

private:
    std::string path_;
};

// Methods x metrics comparison across experiment summaries. The first entry
// is the baseline for the paired t-tests (per-query values averaged over
// seeds, aligned on shared query ids).
struct CompareCell {
    double mean = 0;
    double p_vs_baseline = 1.0;
    bool significant = false;  // p <= 0.05 and not the baseline row
};

struct CompareTable {
    std::vector<std::string> methods;
    std::vector<std::string> metrics;
    std::vector<std::vector<CompareCell>> cells;  // [method][metric]

    std::string to_text() const;
    std::string to_csv() const;
};

CompareTable compare_runs(const std::vector<std::pair<std::string, std::string>>& labeled_summaries);

// Resolves a user argument to a summary path: either a summary JSON file or a
// workdir containing reports/summary_*.json.
std::string find_summary(const std::string& path_or_workdir);

}  // namespace attempt
