#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace attempt {

// Ordered aspect names plus, when built, the per-aspect value vocabulary
// used by the classification baselines.
struct AspectSchema {
    std::vector<std::string> names;
    std::vector<std::vector<std::string>> value_vocab;  // sorted unique non-empty values per aspect

    size_t k() const { return names.size(); }
    int index_of(const std::string& name) const;
    void validate() const;  // k >= 1, unique non-empty names
};

enum class RecordKind { item, query };

// An item or query: content text plus one (possibly empty) value per schema aspect.
struct Record {
    std::string id;
    RecordKind kind = RecordKind::item;
    std::string content;
    std::vector<std::string> aspects;  // aligned with schema.names; "" when absent
};

struct Qrel {
    std::string query_id;
    std::string item_id;
    char label = 'I';  // one of E, S, C, I
};

struct SplitSpec {
    std::vector<std::string> train, val, test;
    uint64_t seed = 0;
};

// JSONL: one {"id":..., "content":..., "aspects":{...}} object per line.
std::vector<Record> load_records(const std::string& path, const AspectSchema& schema,
                                 RecordKind kind);
void write_records(const std::string& path, const std::vector<Record>& records,
                   const AspectSchema& schema);

// TSV: query_id \t item_id \t label; label in {E,S,C,I}.
std::vector<Qrel> load_qrels(const std::string& path);
void write_qrels(const std::string& path, const std::vector<Qrel>& qrels);

// E is relevant, everything else is not.
std::map<std::string, std::set<std::string>> binarize(const std::vector<Qrel>& qrels);

// Deterministic query-wise partition. fractions must be positive and sum to 1.
SplitSpec split_by_query(std::vector<std::string> query_ids,
                         const std::vector<double>& fractions, uint64_t seed);

void save_splits(const std::string& path, const SplitSpec& split);
SplitSpec load_splits(const std::string& path);

// Collect sorted unique non-empty aspect values from records into schema.value_vocab.
void build_value_vocabs(AspectSchema& schema, const std::vector<Record>& records);

}  // namespace attempt
