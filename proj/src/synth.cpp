#include "attempt/synth.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>

#include "attempt/rng.hpp"
#include "attempt/util.hpp"

namespace attempt {

namespace {

std::string item_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "i%05d", i);
    return buf;
}

std::string query_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "q%05d", i);
    return buf;
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& cfg, uint64_t seed) {
    if (cfg.n_categories < 2 || cfg.n_brands < 1 || cfg.words_per_category < 1 ||
        cfg.n_noise_words < 1)
        fail("generate_synthetic: pools too small for requested sizes");
    if (cfg.n_items < 1 || cfg.n_queries < 1)
        fail("generate_synthetic: need at least one item and one query");
    if (cfg.content_len_min < 2 || cfg.content_len_max < cfg.content_len_min)
        fail("generate_synthetic: bad content length range");
    if (cfg.aspect_dropout < 0.0 || cfg.aspect_dropout >= 1.0)
        fail("generate_synthetic: aspect_dropout must be in [0, 1)");

    SynthData data;
    data.schema.names = {"category", "brand"};

    // Disjoint per-category word pools plus a shared noise pool.
    std::vector<std::vector<std::string>> pool(static_cast<size_t>(cfg.n_categories));
    for (int c = 0; c < cfg.n_categories; ++c)
        for (int w = 0; w < cfg.words_per_category; ++w)
            pool[static_cast<size_t>(c)].push_back("c" + std::to_string(c) + "w" +
                                                   std::to_string(w));
    std::vector<std::string> noise;
    for (int w = 0; w < cfg.n_noise_words; ++w) noise.push_back("noise" + std::to_string(w));

    std::unordered_set<std::string> noise_set(noise.begin(), noise.end());

    Rng rng(seed);
    Rng item_rng = rng.child("items");
    Rng query_rng = rng.child("queries");
    Rng qrel_rng = rng.child("qrels");

    // Items: category and brand uniform; content drawn 0.5 own pool,
    // 0.2 adjacent pool, 0.3 noise.
    std::vector<std::vector<std::string>> item_tokens(static_cast<size_t>(cfg.n_items));
    data.item_category.resize(static_cast<size_t>(cfg.n_items));
    for (int i = 0; i < cfg.n_items; ++i) {
        int c = static_cast<int>(item_rng.bounded(static_cast<size_t>(cfg.n_categories)));
        int b = static_cast<int>(item_rng.bounded(static_cast<size_t>(cfg.n_brands)));
        data.item_category[static_cast<size_t>(i)] = c;
        int adj = (c + 1) % cfg.n_categories;
        int len = cfg.content_len_min +
                  static_cast<int>(item_rng.bounded(
                      static_cast<size_t>(cfg.content_len_max - cfg.content_len_min + 1)));
        std::vector<std::string> toks;
        for (int t = 0; t < len; ++t) {
            double u = item_rng.uniform();
            const std::vector<std::string>* src;
            if (u < 0.5)
                src = &pool[static_cast<size_t>(c)];
            else if (u < 0.7)
                src = &pool[static_cast<size_t>(adj)];
            else
                src = &noise;
            toks.push_back((*src)[item_rng.bounded(src->size())]);
        }
        Record r;
        r.id = item_id(i);
        r.kind = RecordKind::item;
        std::ostringstream content;
        for (size_t t = 0; t < toks.size(); ++t) content << (t ? " " : "") << toks[t];
        r.content = content.str();
        r.aspects = {"cat" + std::to_string(c), "brand" + std::to_string(b)};
        for (auto& a : r.aspects)
            if (item_rng.uniform() < cfg.aspect_dropout) a.clear();
        item_tokens[static_cast<size_t>(i)] = std::move(toks);
        data.items.push_back(std::move(r));
    }

    // Queries: 2-5 distinct non-noise tokens sampled from an anchor item.
    data.query_anchor.resize(static_cast<size_t>(cfg.n_queries));
    std::vector<std::vector<std::string>> query_tokens(static_cast<size_t>(cfg.n_queries));
    for (int qi = 0; qi < cfg.n_queries; ++qi) {
        std::vector<std::string> signal;
        int anchor = -1;
        for (int attempt_no = 0; attempt_no < 1000; ++attempt_no) {
            anchor = static_cast<int>(query_rng.bounded(static_cast<size_t>(cfg.n_items)));
            std::set<std::string> uniq;
            for (const auto& t : item_tokens[static_cast<size_t>(anchor)])
                if (!noise_set.count(t)) uniq.insert(t);
            if (uniq.size() >= 2) {
                signal.assign(uniq.begin(), uniq.end());
                break;
            }
            signal.clear();
        }
        if (signal.empty())
            fail("generate_synthetic: could not find an anchor with enough signal tokens");
        query_rng.shuffle(signal);
        size_t want = 2 + query_rng.bounded(4);  // 2..5
        if (want > signal.size()) want = signal.size();
        signal.resize(want);

        Record r;
        r.id = query_id(qi);
        r.kind = RecordKind::query;
        std::ostringstream content;
        for (size_t t = 0; t < signal.size(); ++t) content << (t ? " " : "") << signal[t];
        r.content = content.str();
        r.aspects.assign(data.schema.k(), "");
        data.query_anchor[static_cast<size_t>(qi)] = anchor;
        query_tokens[static_cast<size_t>(qi)] = std::move(signal);
        data.queries.push_back(std::move(r));
    }

    // Qrels. E: same category as the anchor and shares a query token.
    // S: adjacent category and shares a query token. I: random sample of the rest.
    for (int qi = 0; qi < cfg.n_queries; ++qi) {
        const auto& qtoks = query_tokens[static_cast<size_t>(qi)];
        std::unordered_set<std::string> qset(qtoks.begin(), qtoks.end());
        int anchor_cat = data.item_category[static_cast<size_t>(data.query_anchor[qi])];
        int prev = (anchor_cat + cfg.n_categories - 1) % cfg.n_categories;
        int next = (anchor_cat + 1) % cfg.n_categories;

        std::unordered_set<int> judged;
        for (int i = 0; i < cfg.n_items; ++i) {
            bool shares = false;
            for (const auto& t : item_tokens[static_cast<size_t>(i)])
                if (qset.count(t)) { shares = true; break; }
            if (!shares) continue;
            int c = data.item_category[static_cast<size_t>(i)];
            char label = 0;
            if (c == anchor_cat)
                label = 'E';
            else if (c == prev || c == next)
                label = 'S';
            else
                continue;
            data.qrels.push_back({query_id(qi), item_id(i), label});
            judged.insert(i);
        }
        int want_irrelevant = cfg.judged_irrelevant;
        int guard = 0;
        while (want_irrelevant > 0 && guard < cfg.n_items * 20) {
            ++guard;
            int i = static_cast<int>(qrel_rng.bounded(static_cast<size_t>(cfg.n_items)));
            if (judged.count(i)) continue;
            judged.insert(i);
            data.qrels.push_back({query_id(qi), item_id(i), 'I'});
            --want_irrelevant;
        }
    }

    // The anchor always yields one E; the I sample guarantees a non-E judgment.
    {
        std::map<std::string, int> n_e, n_other;
        for (const auto& q : data.qrels)
            (q.label == 'E' ? n_e : n_other)[q.query_id]++;
        for (const auto& q : data.queries)
            if (n_e[q.id] < 1 || n_other[q.id] < 1)
                fail("generate_synthetic: query " + q.id + " lacks judged diversity");
    }

    std::vector<std::string> qids;
    for (const auto& q : data.queries) qids.push_back(q.id);
    data.split = split_by_query(qids, cfg.split_fractions, seed);
    return data;
}

}  // namespace attempt
