#include "attempt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "attempt/model_impl.hpp"
#include "attempt/util.hpp"

namespace attempt {

using nlohmann::json;

double GainMap::of(char label) const {
    double g;
    switch (label) {
        case 'E': g = e; break;
        case 'S': g = s; break;
        case 'C': g = c; break;
        case 'I': g = i; break;
        default: fail(std::string("gain map: unknown label '") + label + "'");
    }
    if (!std::isfinite(g) || g < 0.0) fail("gain map: gains must be finite and non-negative");
    return g;
}

Tensor<float> encode_corpus(const Checkpoint& ckpt, const std::vector<Record>& records,
                            TemplateMode mode, const Vocabulary& vocab,
                            const AspectSchema& schema, int batch_size) {
    require_fingerprint(ckpt, vocab.fingerprint);
    if (batch_size < 1) fail("encode_corpus: batch_size must be >= 1");
    Model<float> model = model_from_checkpoint(ckpt);
    const int d = model.cfg.hidden_dim;
    Tensor<float> out({static_cast<int>(records.size()), d});

    for (size_t start = 0; start < records.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(records.size(), start + static_cast<size_t>(batch_size));
        std::vector<EncoderInput> inputs;
        inputs.reserve(end - start);
        for (size_t i = start; i < end; ++i)
            inputs.push_back(build_input(records[i], schema, vocab, mode, model.cfg.max_len));
        std::vector<const EncoderInput*> ptrs;
        for (const auto& in : inputs) ptrs.push_back(&in);

        Tape<float> tape;
        ModelVars<float> vars = register_params(tape, model);
        PackedBatch batch = pack_batch(ptrs, model.cfg.max_len);
        Var states = encoder_states(tape, vars, model.cfg, batch, false, nullptr);
        Var cls = cls_embeddings(tape, states, batch);
        const auto& cv = tape.val(cls);
        for (size_t i = start; i < end; ++i)
            for (int j = 0; j < d; ++j)
                out.at(static_cast<int>(i), j) = cv.at(static_cast<int>(i - start), j);
    }
    return out;
}

RunFile search(const Tensor<float>& query_embs, const std::vector<std::string>& query_ids,
               const Tensor<float>& item_embs, const std::vector<std::string>& item_ids, int k,
               const std::string& tag) {
    if (k < 1) fail("search: k must be >= 1");
    if (query_embs.cols() != item_embs.cols())
        fail("search: embedding dimensions differ (" + std::to_string(query_embs.cols()) +
             " vs " + std::to_string(item_embs.cols()) + ")");
    if (query_embs.rows() != static_cast<int>(query_ids.size()) ||
        item_embs.rows() != static_cast<int>(item_ids.size()))
        fail("search: id list does not match embedding count");

    RunFile run;
    run.tag = tag;
    const int n_items = item_embs.rows();
    const int depth = std::min(k, n_items);
    std::vector<int> order(static_cast<size_t>(n_items));
    std::vector<float> scores(static_cast<size_t>(n_items));
    for (int q = 0; q < query_embs.rows(); ++q) {
        for (int i = 0; i < n_items; ++i) {
            float s = 0;
            for (int j = 0; j < query_embs.cols(); ++j)
                s += query_embs.at(q, j) * item_embs.at(i, j);
            scores[static_cast<size_t>(i)] = s;
        }
        for (int i = 0; i < n_items; ++i) order[static_cast<size_t>(i)] = i;
        auto cmp = [&](int a, int b) {
            if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
                return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
            return item_ids[static_cast<size_t>(a)] < item_ids[static_cast<size_t>(b)];
        };
        std::partial_sort(order.begin(), order.begin() + depth, order.end(), cmp);
        auto& ranked = run.ranked[query_ids[static_cast<size_t>(q)]];
        ranked.reserve(static_cast<size_t>(depth));
        for (int r = 0; r < depth; ++r)
            ranked.emplace_back(item_ids[static_cast<size_t>(order[static_cast<size_t>(r)])],
                                scores[static_cast<size_t>(order[static_cast<size_t>(r)])]);
    }
    return run;
}

MetricResult recall_at_k(const RunFile& run,
                         const std::map<std::string, std::set<std::string>>& relevant, int k) {
    if (k < 1) fail("recall_at_k: k must be >= 1");
    MetricResult res;
    double sum = 0;
    size_t n = 0;
    for (const auto& [qid, ranked] : run.ranked) {
        auto it = relevant.find(qid);
        if (it == relevant.end() || it->second.empty()) {
            res.warnings.push_back("query " + qid + " has no relevant items; excluded");
            continue;
        }
        size_t hits = 0;
        int depth = std::min<int>(k, static_cast<int>(ranked.size()));
        for (int r = 0; r < depth; ++r)
            if (it->second.count(ranked[static_cast<size_t>(r)].first)) ++hits;
        double value = static_cast<double>(hits) / static_cast<double>(it->second.size());
        res.per_query[qid] = value;
        sum += value;
        ++n;
    }
    res.mean = n ? sum / static_cast<double>(n) : 0.0;
    return res;
}

MetricResult ndcg_at_k(const RunFile& run, const std::vector<Qrel>& qrels, int k,
                       const GainMap& gains) {
    if (k < 1) fail("ndcg_at_k: k must be >= 1");
    std::map<std::string, std::map<std::string, char>> judged;
    for (const auto& q : qrels) judged[q.query_id][q.item_id] = q.label;

    MetricResult res;
    double sum = 0;
    size_t n = 0;
    for (const auto& [qid, ranked] : run.ranked) {
        auto it = judged.find(qid);
        std::vector<double> ideal;
        if (it != judged.end())
            for (const auto& [iid, label] : it->second) ideal.push_back(gains.of(label));
        std::sort(ideal.begin(), ideal.end(), std::greater<>());

        double idcg = 0;
        for (size_t r = 0; r < ideal.size() && r < static_cast<size_t>(k); ++r)
            idcg += ideal[r] / std::log2(static_cast<double>(r) + 2.0);
        if (idcg <= 0.0) {
            res.warnings.push_back("query " + qid + " has zero ideal DCG; excluded");
            continue;
        }
        double dcg = 0;
        int depth = std::min<int>(k, static_cast<int>(ranked.size()));
        for (int r = 0; r < depth; ++r) {
            double g = 0;
            if (it != judged.end()) {
                auto jt = it->second.find(ranked[static_cast<size_t>(r)].first);
                if (jt != it->second.end()) g = gains.of(jt->second);
            }
            dcg += g / std::log2(static_cast<double>(r) + 2.0);
        }
        double value = dcg / idcg;
        res.per_query[qid] = value;
        sum += value;
        ++n;
    }
    res.mean = n ? sum / static_cast<double>(n) : 0.0;
    return res;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) fail("paired_t_test: length mismatch");
    if (a.size() < 2) fail("paired_t_test: need at least 2 paired values");
    const size_t n = a.size();
    double mean = 0;
    for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (size_t i = 0; i < n; ++i) {
        double d = (a[i] - b[i]) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n - 1);

    TTestResult res;
    res.df = static_cast<int64_t>(n - 1);
    if (var == 0.0) {
        // Degenerate: identical vectors are maximally insignificant, a
        // constant nonzero shift maximally significant.
        res.t = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        res.p = mean == 0.0 ? 1.0 : 0.0;
        return res;
    }
    res.t = mean / std::sqrt(var / static_cast<double>(n));
    boost::math::students_t dist(static_cast<double>(res.df));
    res.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(res.t)));
    return res;
}

void save_run_trec(const std::string& path, const RunFile& run) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail("cannot open run file for writing: " + path);
    for (const auto& [qid, ranked] : run.ranked) {
        int rank = 1;
        for (const auto& [iid, score] : ranked) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(score));
            out << qid << " Q0 " << iid << " " << rank << " " << buf << " " << run.tag << "\n";
            ++rank;
        }
    }
    if (!out) fail("short write: " + path);
}

RunFile load_run_trec(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open run file: " + path);
    RunFile run;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string qid, q0, iid, rank_s, score_s, tag;
        if (!(ss >> qid >> q0 >> iid >> rank_s >> score_s >> tag))
            fail(path + ":" + std::to_string(line_no) + ": malformed TREC run line");
        run.tag = tag;
        auto& ranked = run.ranked[qid];
        float score = std::stof(score_s);
        if (!ranked.empty() && ranked.back().second < score)
            fail(path + ":" + std::to_string(line_no) + ": scores must be non-increasing for " +
                 qid);
        ranked.emplace_back(iid, score);
    }
    return run;
}

void save_metric_report(const std::string& path,
                        const std::map<std::string, MetricResult>& metrics) {
    json obj = json::object();
    for (const auto& [name, m] : metrics) {
        json per = json::object();
        for (const auto& [qid, v] : m.per_query) per[qid] = v;
        obj[name] = {{"mean", m.mean}, {"per_query", per}, {"warnings", m.warnings}};
    }
    write_file(path, obj.dump(2) + "\n");
}

std::map<std::string, MetricResult> load_metric_report(const std::string& path) {
    json obj = json::parse(read_file(path));
    std::map<std::string, MetricResult> out;
    for (auto& [name, entry] : obj.items()) {
        MetricResult m;
        m.mean = entry.at("mean").get<double>();
        for (auto& [qid, v] : entry.at("per_query").items()) m.per_query[qid] = v.get<double>();
        if (entry.contains("warnings"))
            m.warnings = entry.at("warnings").get<std::vector<std::string>>();
        out[name] = std::move(m);
    }
    return out;
}

void save_embeddings(const std::string& prefix, const Tensor<float>& embs,
                     const std::vector<std::string>& ids) {
    if (embs.rows() != static_cast<int>(ids.size()))
        fail("save_embeddings: id count does not match rows");
    std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) fail("cannot open " + prefix + ".bin for writing");
    bin.write(reinterpret_cast<const char*>(embs.data.data()),
              static_cast<std::streamsize>(embs.data.size() * sizeof(float)));
    if (!bin) fail("short write: " + prefix + ".bin");
    json meta = {{"ids", ids}, {"dim", embs.cols()}, {"count", embs.rows()}};
    write_file(prefix + ".json", meta.dump() + "\n");
}

std::pair<Tensor<float>, std::vector<std::string>> load_embeddings(const std::string& prefix) {
    json meta = json::parse(read_file(prefix + ".json"));
    auto ids = meta.at("ids").get<std::vector<std::string>>();
    int dim = meta.at("dim").get<int>();
    int count = meta.at("count").get<int>();
    if (count != static_cast<int>(ids.size())) fail("load_embeddings: corrupt metadata");
    Tensor<float> embs({count, dim});
    std::string payload = read_file(prefix + ".bin");
    if (payload.size() != embs.data.size() * sizeof(float))
        fail("load_embeddings: payload size mismatch for " + prefix + ".bin");
    std::memcpy(embs.data.data(), payload.data(), payload.size());
    return {std::move(embs), std::move(ids)};
}

}  // namespace attempt
