#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "attempt/eval.hpp"
#include "attempt/model.hpp"
#include "attempt/synth.hpp"
#include "attempt/train.hpp"

namespace attempt {

struct DataConfig {
    std::string items, queries, qrels, splits;  // resolved against the workdir when relative
    std::vector<std::string> aspects;
};

struct VocabConfig {
    int min_freq = 1;
    int max_size = 50000;
};

struct EvalConfig {
    std::vector<int> recall_ks = {10, 100};
    int ndcg_k = 50;
    GainMap gains;
    int run_depth = 100;  // ranking depth written to run files
};

struct ExperimentConfig {
    std::string workdir = "work";
    std::vector<uint64_t> seeds = {1};
    std::string select_metric = "recall@10";

    DataConfig data;
    bool has_synth = false;
    SynthConfig synth;
    uint64_t synth_seed = 7;

    VocabConfig vocab;
    ModelConfig model;     // vocab_size filled in at run time
    TrainConfig pretrain;  // scheme included
    TrainConfig finetune;

    EvalConfig eval;

    void validate() const;
};

// Accepts .json or .toml (a pragmatic TOML subset: tables, dotted tables,
// key = value with strings/ints/floats/bools and single-line scalar arrays).
nlohmann::json load_config_file(const std::string& path);
nlohmann::json parse_toml(const std::string& text);

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

// Stable 8-hex-digit hash of the resolved config with seeds removed; seeds
// are appended to artifact names separately.
std::string config_hash8(const ExperimentConfig& cfg);

}  // namespace attempt
