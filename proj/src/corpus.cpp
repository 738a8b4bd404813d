#include "attempt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "attempt/rng.hpp"
#include "attempt/util.hpp"

namespace attempt {

using nlohmann::json;

int AspectSchema::index_of(const std::string& name) const {
    for (size_t j = 0; j < names.size(); ++j)
        if (names[j] == name) return static_cast<int>(j);
    return -1;
}

void AspectSchema::validate() const {
    if (names.empty()) fail("aspect schema: k must be >= 1");
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) fail("aspect schema: empty aspect name");
        if (!seen.insert(n).second) fail("aspect schema: duplicate aspect name '" + n + "'");
    }
}

std::vector<Record> load_records(const std::string& path, const AspectSchema& schema,
                                 RecordKind kind) {
    schema.validate();
    std::ifstream in(path);
    if (!in) fail("cannot open records file: " + path);

    std::vector<Record> out;
    std::unordered_set<std::string> ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const std::exception& e) {
            fail(path + ":" + std::to_string(line_no) + ": malformed JSON line: " + e.what());
        }
        if (!obj.is_object() || !obj.contains("id") || !obj.contains("content"))
            fail(path + ":" + std::to_string(line_no) + ": record must have id and content");

        Record r;
        r.kind = kind;
        r.id = obj.at("id").get<std::string>();
        r.content = obj.at("content").get<std::string>();
        r.aspects.assign(schema.k(), "");
        if (obj.contains("aspects")) {
            for (auto& [key, val] : obj.at("aspects").items()) {
                int j = schema.index_of(key);
                if (j < 0)
                    fail(path + ":" + std::to_string(line_no) + ": aspect '" + key +
                         "' not in schema");
                r.aspects[static_cast<size_t>(j)] = val.get<std::string>();
            }
        }
        if (r.id.empty()) fail(path + ":" + std::to_string(line_no) + ": empty record id");
        if (!ids.insert(r.id).second)
            fail(path + ": duplicate record id '" + r.id + "' at line " + std::to_string(line_no));
        out.push_back(std::move(r));
    }
    return out;
}

void write_records(const std::string& path, const std::vector<Record>& records,
                   const AspectSchema& schema) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail("cannot open records file for writing: " + path);
    for (const auto& r : records) {
        json aspects = json::object();
        for (size_t j = 0; j < schema.k(); ++j) aspects[schema.names[j]] = r.aspects[j];
        json obj = {{"id", r.id}, {"content", r.content}, {"aspects", aspects}};
        out << obj.dump() << "\n";
    }
    if (!out) fail("short write: " + path);
}

std::vector<Qrel> load_qrels(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open qrels file: " + path);
    std::vector<Qrel> out;
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        Qrel q;
        std::string label;
        if (!std::getline(ss, q.query_id, '\t') || !std::getline(ss, q.item_id, '\t') ||
            !std::getline(ss, label))
            fail(path + ":" + std::to_string(line_no) + ": expected query_id\\titem_id\\tlabel");
        if (label.size() != 1 || std::string("ESCI").find(label[0]) == std::string::npos)
            fail(path + ":" + std::to_string(line_no) + ": unknown label '" + label + "'");
        q.label = label[0];
        if (!seen.insert({q.query_id, q.item_id}).second)
            fail(path + ":" + std::to_string(line_no) + ": duplicate pair (" + q.query_id + ", " +
                 q.item_id + ")");
        out.push_back(std::move(q));
    }
    return out;
}

void write_qrels(const std::string& path, const std::vector<Qrel>& qrels) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail("cannot open qrels file for writing: " + path);
    for (const auto& q : qrels) out << q.query_id << "\t" << q.item_id << "\t" << q.label << "\n";
    if (!out) fail("short write: " + path);
}

std::map<std::string, std::set<std::string>> binarize(const std::vector<Qrel>& qrels) {
    std::map<std::string, std::set<std::string>> rel;
    for (const auto& q : qrels)
        if (q.label == 'E') rel[q.query_id].insert(q.item_id);
    return rel;
}

SplitSpec split_by_query(std::vector<std::string> query_ids,
                         const std::vector<double>& fractions, uint64_t seed) {
    if (fractions.size() != 3) fail("split_by_query: expected 3 fractions (train, val, test)");
    double sum = 0.0;
    for (double f : fractions) {
        if (f <= 0.0) fail("split_by_query: fractions must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail("split_by_query: fractions must sum to 1");
    if (query_ids.size() < fractions.size())
        fail("split_by_query: fewer queries than splits");

    // Sort before shuffling so the partition depends only on the id set and seed,
    // not on input order.
    std::sort(query_ids.begin(), query_ids.end());
    query_ids.erase(std::unique(query_ids.begin(), query_ids.end()), query_ids.end());
    Rng rng(seed);
    rng.shuffle(query_ids);

    const size_t n = query_ids.size();
    auto boundary = [&](double cum) {
        return static_cast<size_t>(std::floor(cum * static_cast<double>(n) + 1e-9));
    };
    size_t b1 = boundary(fractions[0]);
    size_t b2 = boundary(fractions[0] + fractions[1]);

    SplitSpec split;
    split.seed = seed;
    split.train.assign(query_ids.begin(), query_ids.begin() + static_cast<long>(b1));
    split.val.assign(query_ids.begin() + static_cast<long>(b1),
                     query_ids.begin() + static_cast<long>(b2));
    split.test.assign(query_ids.begin() + static_cast<long>(b2), query_ids.end());
    return split;
}

void save_splits(const std::string& path, const SplitSpec& split) {
    json obj = {{"train", split.train},
                {"val", split.val},
                {"test", split.test},
                {"seed", split.seed}};
    write_file(path, obj.dump(2) + "\n");
}

SplitSpec load_splits(const std::string& path) {
    json obj = json::parse(read_file(path));
    SplitSpec split;
    split.train = obj.at("train").get<std::vector<std::string>>();
    split.val = obj.at("val").get<std::vector<std::string>>();
    split.test = obj.at("test").get<std::vector<std::string>>();
    split.seed = obj.at("seed").get<uint64_t>();
    return split;
}

void build_value_vocabs(AspectSchema& schema, const std::vector<Record>& records) {
    schema.validate();
    std::vector<std::set<std::string>> values(schema.k());
    for (const auto& r : records) {
        if (r.aspects.size() != schema.k()) fail("record '" + r.id + "' does not match schema");
        for (size_t j = 0; j < schema.k(); ++j)
            if (!r.aspects[j].empty()) values[j].insert(r.aspects[j]);
    }
    schema.value_vocab.clear();
    for (auto& s : values) schema.value_vocab.emplace_back(s.begin(), s.end());
}

}  // namespace attempt
