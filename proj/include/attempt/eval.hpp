#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "attempt/checkpoint.hpp"
#include "attempt/corpus.hpp"
#include "attempt/textproc.hpp"

namespace attempt {

// Ranked results per query, scores non-increasing, ids unique.
struct RunFile {
    std::string tag = "run";
    std::map<std::string, std::vector<std::pair<std::string, float>>> ranked;
};

struct GainMap {
    double e = 1.0, s = 0.1, c = 0.01, i = 0.0;
    double of(char label) const;
};

// CLS embeddings, one row per record, id-aligned with `records`. Queries must
// be encoded with TemplateMode::aspects_empty, items with with_aspects.
// Output is independent of batch partitioning.
Tensor<float> encode_corpus(const Checkpoint& ckpt, const std::vector<Record>& records,
                            TemplateMode mode, const Vocabulary& vocab,
                            const AspectSchema& schema, int batch_size = 64);

// Exhaustive dot-product retrieval; ties broken by ascending item id.
RunFile search(const Tensor<float>& query_embs, const std::vector<std::string>& query_ids,
               const Tensor<float>& item_embs, const std::vector<std::string>& item_ids, int k,
               const std::string& tag = "run");

struct MetricResult {
    double mean = 0;
    std::map<std::string, double> per_query;
    std::vector<std::string> warnings;  // queries excluded from the mean
};

MetricResult recall_at_k(const RunFile& run,
                         const std::map<std::string, std::set<std::string>>& relevant, int k);

// DCG with gain(label)/log2(rank+1); unjudged retrieved items gain 0; queries
// whose ideal DCG is 0 are excluded with a warning.
MetricResult ndcg_at_k(const RunFile& run, const std::vector<Qrel>& qrels, int k,
                       const GainMap& gains);

struct TTestResult {
    double t = 0;
    double p = 1.0;
    int64_t df = 0;
};

// Two-tailed paired Student t. All-zero differences give p=1; zero variance
// with nonzero mean gives p=0.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// TREC format: query_id Q0 item_id rank score tag.
void save_run_trec(const std::string& path, const RunFile& run);
RunFile load_run_trec(const std::string& path);

// {"metric": {"mean": ..., "per_query": {...}}, ...}
void save_metric_report(const std::string& path,
                        const std::map<std::string, MetricResult>& metrics);
std::map<std::string, MetricResult> load_metric_report(const std::string& path);

// Embedding files: <prefix>.bin (row-major f32) + <prefix>.json (ids, dim).
void save_embeddings(const std::string& prefix, const Tensor<float>& embs,
                     const std::vector<std::string>& ids);
std::pair<Tensor<float>, std::vector<std::string>> load_embeddings(const std::string& prefix);

}  // namespace attempt
