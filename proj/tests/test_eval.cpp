#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "attempt/eval.hpp"
#include "attempt/model_impl.hpp"
#include "attempt/rng.hpp"

using namespace attempt;
namespace fs = std::filesystem;

namespace {

// Brute-force references, computed with independent code paths.
double bf_recall(const std::vector<std::string>& ranked, const std::set<std::string>& relevant,
                 int k) {
    int hits = 0;
    for (int r = 0; r < k && r < static_cast<int>(ranked.size()); ++r)
        hits += relevant.count(ranked[static_cast<size_t>(r)]) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double bf_dcg(const std::vector<double>& gains_in_rank_order) {
    double dcg = 0;
    for (size_t r = 0; r < gains_in_rank_order.size(); ++r)
        dcg += gains_in_rank_order[r] / (std::log(static_cast<double>(r) + 2.0) / std::log(2.0));
    return dcg;
}

struct Fixture {
    AspectSchema schema;
    std::vector<Record> records;
    Vocabulary vocab;
    Checkpoint ckpt;

    Fixture() {
        schema.names = {"brand", "color"};
        records.push_back({"i1", RecordKind::item, "air max 90", {"nike", "red"}});
        records.push_back({"i2", RecordKind::item, "trail runner", {"adidas", ""}});
        records.push_back({"i3", RecordKind::item, "court classic", {"puma", "white"}});
        vocab = build_vocab({std::span<const Record>(records)}, schema.k(), 1, 1000);
        ModelConfig cfg;
        cfg.vocab_size = vocab.size();
        cfg.hidden_dim = 8;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.ffn_dim = 16;
        cfg.max_len = 16;
        cfg.seed = 4;
        Model<float> model = init_model<float>(cfg);
        ckpt = checkpoint_from_model(model, vocab.fingerprint, 0);
    }
};

}  // namespace

TEST_CASE("encode_corpus: empty input, duplicates, and the query inference rule") {
    Fixture f;
    Tensor<float> none = encode_corpus(f.ckpt, {}, TemplateMode::with_aspects, f.vocab, f.schema);
    CHECK(none.rows() == 0);

    std::vector<Record> twice{f.records[0], f.records[0]};
    twice[1].id = "copy";
    Tensor<float> dup = encode_corpus(f.ckpt, twice, TemplateMode::with_aspects, f.vocab,
                                      f.schema);
    for (int j = 0; j < dup.cols(); ++j) CHECK(dup.at(0, j) == dup.at(1, j));

    // A query with aspects and the same query with aspects deleted encode
    // identically: query encoding always blanks the aspect text.
    Record with = f.records[0];
    with.kind = RecordKind::query;
    Record without = with;
    for (auto& a : without.aspects) a.clear();
    Tensor<float> a =
        encode_corpus(f.ckpt, {with}, TemplateMode::aspects_empty, f.vocab, f.schema);
    Tensor<float> b =
        encode_corpus(f.ckpt, {without}, TemplateMode::aspects_empty, f.vocab, f.schema);
    CHECK(a.data == b.data);
}

TEST_CASE("encode_corpus is independent of the batch partition") {
    Fixture f;
    std::vector<Record> many;
    for (int i = 0; i < 7; ++i) {
        Record r = f.records[static_cast<size_t>(i) % f.records.size()];
        r.id = "r" + std::to_string(i);
        if (i % 2) r.content += " extra words here";
        many.push_back(r);
    }
    Tensor<float> one = encode_corpus(f.ckpt, many, TemplateMode::with_aspects, f.vocab,
                                      f.schema, 1);
    Tensor<float> big = encode_corpus(f.ckpt, many, TemplateMode::with_aspects, f.vocab,
                                      f.schema, 64);
    Tensor<float> odd = encode_corpus(f.ckpt, many, TemplateMode::with_aspects, f.vocab,
                                      f.schema, 3);
    CHECK(one.data == big.data);
    CHECK(one.data == odd.data);
}

TEST_CASE("encode_corpus rejects a fingerprint mismatch") {
    Fixture f;
    Checkpoint wrong = f.ckpt;
    wrong.vocab_fingerprint = "0000000000000000";
    CHECK_THROWS_WITH_AS(
        encode_corpus(wrong, f.records, TemplateMode::with_aspects, f.vocab, f.schema),
        doctest::Contains("fingerprint"), std::runtime_error);
}

TEST_CASE("search: exhaustive ranking, identity match, documented tie-break") {
    Tensor<float> items({3, 2});
    // ids deliberately unsorted relative to scores
    items.data = {1.0f, 0.0f, 1.0f, 0.0f, 0.0f, 1.0f};
    std::vector<std::string> item_ids{"b", "a", "c"};
    Tensor<float> queries({1, 2});
    queries.data = {2.0f, 1.0f};  // scores: b=2, a=2, c=1
    RunFile run = search(queries, {"q1"}, items, item_ids, 2, "t");
    REQUIRE(run.ranked.at("q1").size() == 2);
    CHECK(run.ranked.at("q1")[0].first == "a");
    CHECK(run.ranked.at("q1")[1].first == "b");

    // k >= corpus size returns the full ranking.
    RunFile full = search(queries, {"q1"}, items, item_ids, 10, "t");
    CHECK(full.ranked.at("q1").size() == 3);
    CHECK(full.ranked.at("q1")[2].first == "c");

    // A query equal to one embedding with others orthogonal retrieves it first.
    Tensor<float> target({1, 2});
    target.data = {0.0f, 1.0f};
    RunFile hit = search(target, {"q2"}, items, item_ids, 1, "t");
    CHECK(hit.ranked.at("q2")[0].first == "c");

    Tensor<float> wrong_d({1, 3});
    CHECK_THROWS_AS(search(wrong_d, {"q"}, items, item_ids, 1, "t"), std::runtime_error);
    CHECK_THROWS_AS(search(queries, {"q"}, items, item_ids, 0, "t"), std::runtime_error);
}

TEST_CASE("search is invariant under permutations of the item rows") {
    Rng rng(12);
    const int n = 9, d = 4;
    Tensor<float> items({n, d});
    for (auto& v : items.data) v = static_cast<float>(rng.normal());
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back("item" + std::to_string(i));
    Tensor<float> queries({2, d});
    for (auto& v : queries.data) v = static_cast<float>(rng.normal());

    RunFile base = search(queries, {"qa", "qb"}, items, ids, 5, "t");

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    Rng shuffler(99);
    shuffler.shuffle(perm);
    Tensor<float> shuffled({n, d});
    std::vector<std::string> shuffled_ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        shuffled_ids[static_cast<size_t>(i)] = ids[static_cast<size_t>(perm[i])];
        for (int j = 0; j < d; ++j) shuffled.at(i, j) = items.at(perm[static_cast<size_t>(i)], j);
    }
    RunFile permuted = search(queries, {"qa", "qb"}, shuffled, shuffled_ids, 5, "t");
    for (const auto& [qid, ranked] : base.ranked) {
        const auto& other = permuted.ranked.at(qid);
        REQUIRE(other.size() == ranked.size());
        for (size_t r = 0; r < ranked.size(); ++r) CHECK(other[r].first == ranked[r].first);
    }
}

TEST_CASE("recall: hand examples") {
    RunFile run;
    run.ranked["q1"] = {{"i1", 3.f}, {"i2", 2.f}, {"i3", 1.f}};
    run.ranked["q2"] = {{"i4", 3.f}, {"i5", 2.f}};
    std::map<std::string, std::set<std::string>> rel{{"q1", {"i1", "i2"}},
                                                     {"q2", {"i5", "i9"}}};
    MetricResult r3 = recall_at_k(run, rel, 3);
    CHECK(r3.per_query["q1"] == 1.0);
    CHECK(r3.per_query["q2"] == 0.5);
    CHECK(r3.mean == doctest::Approx(0.75));

    std::map<std::string, std::set<std::string>> none{{"q1", {"zz"}}, {"q2", {"i5", "i9"}}};
    MetricResult r0 = recall_at_k(run, none, 3);
    CHECK(r0.per_query["q1"] == 0.0);

    // Queries with no relevant item are excluded with a warning.
    std::map<std::string, std::set<std::string>> partial{{"q1", {"i1"}}};
    MetricResult rw = recall_at_k(run, partial, 3);
    CHECK(rw.per_query.size() == 1);
    CHECK(rw.warnings.size() == 1);
    CHECK_THROWS_AS(recall_at_k(run, rel, 0), std::runtime_error);
}

TEST_CASE("ndcg: the hand-computed E/I/S example and the symmetric case") {
    RunFile run;
    run.ranked["q1"] = {{"d1", 3.f}, {"d3", 2.f}, {"d2", 1.f}};
    std::vector<Qrel> qrels{{"q1", "d1", 'E'}, {"q1", "d2", 'S'}, {"q1", "d3", 'I'}};
    MetricResult res = ndcg_at_k(run, qrels, 3, GainMap{});
    double idcg = 1.0 + 0.1 / (std::log(3.0) / std::log(2.0));
    double expected = 1.05 / idcg;
    CHECK(res.per_query["q1"] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(res.per_query["q1"] == doctest::Approx(0.98768).epsilon(1e-4));

    // Perfect ranking of judged items.
    RunFile perfect;
    perfect.ranked["q1"] = {{"d1", 3.f}, {"d2", 2.f}, {"d3", 1.f}};
    CHECK(ndcg_at_k(perfect, qrels, 3, GainMap{}).per_query["q1"] ==
          doctest::Approx(1.0).epsilon(1e-12));

    // Equal gains, all judged relevant: any permutation of exactly k judged
    // items scores 1.
    std::vector<Qrel> all_e{{"q1", "d1", 'E'}, {"q1", "d2", 'E'}, {"q1", "d3", 'E'}};
    for (const RunFile& r : {run, perfect})
        CHECK(ndcg_at_k(r, all_e, 3, GainMap{}).per_query["q1"] ==
              doctest::Approx(1.0).epsilon(1e-12));

    // IDCG-0 queries are excluded with a warning.
    std::vector<Qrel> irrelevant{{"q1", "d1", 'I'}};
    MetricResult excluded = ndcg_at_k(run, irrelevant, 3, GainMap{});
    CHECK(excluded.per_query.empty());
    CHECK(excluded.warnings.size() == 1);
}

TEST_CASE("recall and ndcg agree with a brute-force reference on 200 random instances") {
    Rng rng(777);
    const char labels[4] = {'E', 'S', 'C', 'I'};
    for (int inst = 0; inst < 200; ++inst) {
        int n_queries = 1 + static_cast<int>(rng.bounded(10));
        int n_items = 2 + static_cast<int>(rng.bounded(19));
        int k = 1 + static_cast<int>(rng.bounded(25));

        std::vector<std::string> item_ids;
        for (int i = 0; i < n_items; ++i) item_ids.push_back("i" + std::to_string(i));

        RunFile run;
        std::vector<Qrel> qrels;
        std::map<std::string, std::map<std::string, char>> judged;
        for (int q = 0; q < n_queries; ++q) {
            std::string qid = "q" + std::to_string(q);
            // Random scores; sort with the same tie-break contract.
            std::vector<std::pair<std::string, float>> scored;
            for (const auto& iid : item_ids)
                scored.emplace_back(iid, static_cast<float>(rng.bounded(5)));
            std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second > b.second;
                return a.first < b.first;
            });
            scored.resize(static_cast<size_t>(std::min(k, n_items)));
            run.ranked[qid] = scored;
            for (const auto& iid : item_ids) {
                if (rng.uniform() < 0.6) {
                    char label = labels[rng.bounded(4)];
                    qrels.push_back({qid, iid, label});
                    judged[qid][iid] = label;
                }
            }
        }

        auto relevant = binarize(qrels);
        MetricResult recall = recall_at_k(run, relevant, k);
        MetricResult ndcg = ndcg_at_k(run, qrels, k, GainMap{});

        double recall_sum = 0, ndcg_sum = 0;
        int recall_n = 0, ndcg_n = 0;
        for (const auto& [qid, ranked] : run.ranked) {
            std::vector<std::string> ranked_ids;
            for (const auto& [iid, score] : ranked) ranked_ids.push_back(iid);

            auto rel_it = relevant.find(qid);
            if (rel_it != relevant.end() && !rel_it->second.empty()) {
                double expect = bf_recall(ranked_ids, rel_it->second, k);
                REQUIRE(recall.per_query.count(qid) == 1);
                CHECK(std::abs(recall.per_query[qid] - expect) <= 1e-9);
                recall_sum += expect;
                ++recall_n;
            } else {
                CHECK(recall.per_query.count(qid) == 0);
            }

            GainMap gains;
            std::vector<double> run_gains, ideal_gains;
            for (int r = 0; r < k && r < static_cast<int>(ranked_ids.size()); ++r) {
                auto jt = judged[qid].find(ranked_ids[static_cast<size_t>(r)]);
                run_gains.push_back(jt == judged[qid].end() ? 0.0 : gains.of(jt->second));
            }
            for (const auto& [iid, label] : judged[qid]) ideal_gains.push_back(gains.of(label));
            std::sort(ideal_gains.rbegin(), ideal_gains.rend());
            if (static_cast<int>(ideal_gains.size()) > k)
                ideal_gains.resize(static_cast<size_t>(k));
            double idcg = bf_dcg(ideal_gains);
            if (idcg > 0) {
                double expect = bf_dcg(run_gains) / idcg;
                REQUIRE(ndcg.per_query.count(qid) == 1);
                CHECK(std::abs(ndcg.per_query[qid] - expect) <= 1e-9);
                ndcg_sum += expect;
                ++ndcg_n;
            } else {
                CHECK(ndcg.per_query.count(qid) == 0);
            }
        }
        if (recall_n) CHECK(std::abs(recall.mean - recall_sum / recall_n) <= 1e-9);
        if (ndcg_n) CHECK(std::abs(ndcg.mean - ndcg_sum / ndcg_n) <= 1e-9);
        for (const auto& [qid, v] : recall.per_query) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (const auto& [qid, v] : ndcg.per_query) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("scaling all embeddings by a positive constant leaves rankings unchanged") {
    Rng rng(5);
    Tensor<float> items({12, 6}), queries({3, 6});
    for (auto& v : items.data) v = static_cast<float>(rng.normal());
    for (auto& v : queries.data) v = static_cast<float>(rng.normal());
    std::vector<std::string> iids, qids{"a", "b", "c"};
    for (int i = 0; i < 12; ++i) iids.push_back("i" + std::to_string(i));

    RunFile base = search(queries, qids, items, iids, 6, "t");
    Tensor<float> items2 = items;
    Tensor<float> queries2 = queries;
    for (auto& v : items2.data) v *= 4.0f;
    for (auto& v : queries2.data) v *= 0.5f;
    RunFile scaled = search(queries2, qids, items2, iids, 6, "t");
    for (const auto& [qid, ranked] : base.ranked)
        for (size_t r = 0; r < ranked.size(); ++r)
            CHECK(scaled.ranked.at(qid)[r].first == ranked[r].first);
}

TEST_CASE("paired t-test: degenerate rules and the reference example") {
    std::vector<double> a{0.5, 0.6, 0.7};
    CHECK(paired_t_test(a, a).p == 1.0);

    std::vector<double> b{0.4, 0.5, 0.6};
    CHECK(paired_t_test(a, b).p == 0.0);  // constant +0.1 shift

    // diffs (0.1, 0.2, 0.0, 0.1): t = 2.449, df = 3, p = 0.0917.
    std::vector<double> x{0.6, 0.7, 0.3, 0.5};
    std::vector<double> y{0.5, 0.5, 0.3, 0.4};
    TTestResult t = paired_t_test(x, y);
    CHECK(t.df == 3);
    CHECK(t.t == doctest::Approx(2.449489742783178).epsilon(1e-9));
    CHECK(t.p == doctest::Approx(0.0917).epsilon(1e-2));
    CHECK(std::abs(t.p - 0.0917) < 1e-3);

    CHECK_THROWS_AS(paired_t_test(a, {0.1}), std::runtime_error);
    CHECK_THROWS_AS(paired_t_test({0.1}, {0.1}), std::runtime_error);
}

TEST_CASE("TREC run files round-trip") {
    fs::path tmp = fs::temp_directory_path() / ("attempt_run_" + std::to_string(::getpid()));
    fs::create_directories(tmp);
    RunFile run;
    run.tag = "demo";
    run.ranked["q1"] = {{"i3", 1.5f}, {"i1", 1.25f}};
    run.ranked["q2"] = {{"i2", -0.5f}};
    save_run_trec((tmp / "run.trec").string(), run);
    RunFile loaded = load_run_trec((tmp / "run.trec").string());
    CHECK(loaded.tag == "demo");
    REQUIRE(loaded.ranked.size() == 2);
    CHECK(loaded.ranked["q1"][0].first == "i3");
    CHECK(loaded.ranked["q1"][1].first == "i1");
    CHECK(loaded.ranked["q2"][0].first == "i2");

    std::string text = read_file((tmp / "run.trec").string());
    CHECK(text.find("q1 Q0 i3 1 1.500000 demo") != std::string::npos);
    fs::remove_all(tmp);
}

TEST_CASE("metric reports and embedding files round-trip") {
    fs::path tmp = fs::temp_directory_path() / ("attempt_rep_" + std::to_string(::getpid()));
    fs::create_directories(tmp);
    std::map<std::string, MetricResult> metrics;
    MetricResult m;
    m.mean = 0.5;
    m.per_query = {{"q1", 0.25}, {"q2", 0.75}};
    metrics["recall@10"] = m;
    save_metric_report((tmp / "report.json").string(), metrics);
    auto loaded = load_metric_report((tmp / "report.json").string());
    CHECK(loaded["recall@10"].mean == 0.5);
    CHECK(loaded["recall@10"].per_query["q2"] == 0.75);

    Tensor<float> embs({2, 3});
    embs.data = {1.f, 2.f, 3.f, 4.f, 5.f, 6.f};
    save_embeddings((tmp / "embs").string(), embs, {"a", "b"});
    auto [loaded_embs, ids] = load_embeddings((tmp / "embs").string());
    CHECK(loaded_embs.data == embs.data);
    CHECK(ids == std::vector<std::string>{"a", "b"});
    fs::remove_all(tmp);
}
