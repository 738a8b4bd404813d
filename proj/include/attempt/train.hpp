#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attempt/checkpoint.hpp"
#include "attempt/corpus.hpp"
#include "attempt/objectives.hpp"
#include "attempt/textproc.hpp"

namespace attempt {

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 5;
    int batch_size = 32;
    double warmup_fraction = 0.1;
    uint64_t seed = 1;
    int checkpoint_every = 2;  // epochs between emitted checkpoints
    int max_len = 48;
    PretrainScheme scheme;

    void validate() const;
};

struct StepLog {
    int64_t step = 0;
    double loss = 0, mlm = 0, a2c = 0, c2a = 0, cls = 0;
    double lr = 0;
};

struct TrainingLog {
    std::vector<StepLog> steps;
    uint64_t seed = 0;
    std::string config_hash;
    int skipped_queries = 0;  // fine-tuning: queries without any E item
    double wall_seconds = 0;
};

void save_training_log(const std::string& path, const TrainingLog& log);

struct PretrainResult {
    std::vector<Checkpoint> checkpoints;  // one per cadence epoch (final always included)
    std::vector<int> checkpoint_epochs;
    TrainingLog log;
};

// Pre-trains from random initialization with the configured scheme. Items and
// queries may be mixed; each record is corrupted at its own kind's ratio.
PretrainResult pretrain(const std::vector<Record>& records, const Vocabulary& vocab,
                        const AspectSchema& schema, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg);

struct FinetunePair {
    int query_idx = -1;
    int positive_idx = -1;
    int hard_negative_idx = -1;
};

struct FinetunePairs {
    std::vector<FinetunePair> pairs;
    int skipped_queries = 0;
};

// One pair per query holding a judged E item: a seeded E positive plus a hard
// negative (judged non-E for that query when available, otherwise a random
// corpus item not judged E).
FinetunePairs build_finetune_pairs(const std::vector<Record>& queries,
                                   const std::vector<Record>& items,
                                   const std::vector<Qrel>& qrels, uint64_t seed);

struct FinetuneResult {
    Checkpoint checkpoint;
    TrainingLog log;
};

// Contrastive fine-tuning of a shared encoder over (query, positive, hard
// negative) pairs with in-batch negatives. Queries are encoded with blank
// aspects, items with their aspect strings.
FinetuneResult finetune(const FinetunePairs& pairs, const std::vector<Record>& queries,
                        const std::vector<Record>& items, const Vocabulary& vocab,
                        const AspectSchema& schema, const Checkpoint& init,
                        const TrainConfig& train_cfg);

struct MetricSpec {
    std::string name = "recall";  // recall | ndcg
    int k = 10;
};

MetricSpec parse_metric(const std::string& spec);  // e.g. "recall@10"

// Evaluates each checkpoint on the validation split and returns the argmax
// index; exact ties go to the earliest checkpoint.
size_t select_best(const std::vector<Checkpoint>& checkpoints,
                   const std::vector<Record>& val_queries, const std::vector<Record>& items,
                   const std::vector<Qrel>& val_qrels, const MetricSpec& metric,
                   const Vocabulary& vocab, const AspectSchema& schema,
                   const GainMap& gains = GainMap{});

}  // namespace attempt
