#include "attempt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "attempt/eval.hpp"
#include "attempt/model_impl.hpp"
#include "attempt/objectives_impl.hpp"
#include "attempt/optim.hpp"
#include "attempt/util.hpp"

namespace attempt {

using nlohmann::json;

void TrainConfig::validate() const {
    if (learning_rate < 0.0) fail("train config: learning_rate must be >= 0");
    if (epochs < 1) fail("train config: epochs must be >= 1");
    if (batch_size < 1) fail("train config: batch_size must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        fail("train config: warmup_fraction must be in [0, 1)");
    if (checkpoint_every < 1) fail("train config: checkpoint_every must be >= 1");
    scheme.validate();
}

void save_training_log(const std::string& path, const TrainingLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail("cannot open training log for writing: " + path);
    for (const auto& s : log.steps) {
        json line = {{"step", s.step}, {"loss", s.loss},       {"loss_mlm", s.mlm},
                     {"loss_a2c", s.a2c}, {"loss_c2a", s.c2a}, {"loss_cls", s.cls},
                     {"lr", s.lr}};
        out << line.dump() << "\n";
    }
    json tail = {{"seed", log.seed},
                 {"config_hash", log.config_hash},
                 {"skipped_queries", log.skipped_queries},
                 {"wall_seconds", log.wall_seconds}};
    out << tail.dump() << "\n";
    if (!out) fail("short write: " + path);
}

namespace {

Checkpoint make_checkpoint(const Model<float>& model, const Vocabulary& vocab, int64_t step,
                           const Adam<float>& adam) {
    Checkpoint ckpt = checkpoint_from_model(model, vocab.fingerprint, step);
    ckpt.has_opt = true;
    ckpt.opt_t = adam.steps_taken();
    ckpt.opt_m = adam.m();
    ckpt.opt_v = adam.v();
    return ckpt;
}

int64_t steps_per_epoch(size_t n, int batch_size) {
    return static_cast<int64_t>((n + static_cast<size_t>(batch_size) - 1) /
                                static_cast<size_t>(batch_size));
}

}  // namespace

PretrainResult pretrain(const std::vector<Record>& records, const Vocabulary& vocab,
                        const AspectSchema& schema, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg) {
    train_cfg.validate();
    if (records.empty()) fail("pretrain: empty corpus");
    if (model_cfg.vocab_size != vocab.size())
        fail("pretrain: model vocab_size does not match the vocabulary");
    if (train_cfg.max_len > model_cfg.max_len)
        fail("pretrain: input max_len exceeds model max_len");

    ModelConfig cfg = model_cfg;
    const bool classification = train_cfg.scheme.mode == SchemeMode::MTBERT ||
                                train_cfg.scheme.mode == SchemeMode::MTBERT_C;
    if (classification && cfg.head_sizes.empty()) {
        if (schema.value_vocab.size() != schema.k())
            fail("pretrain: MTBERT modes need aspect value vocabularies (build_value_vocabs)");
        for (const auto& vv : schema.value_vocab) {
            if (vv.empty()) fail("pretrain: an aspect has no observed values");
            cfg.head_sizes.push_back(static_cast<int>(vv.size()));
        }
    }

    auto t0 = std::chrono::steady_clock::now();
    Model<float> model = init_model<float>(cfg);
    Adam<float> adam;
    adam.init(model);

    const int64_t spe = steps_per_epoch(records.size(), train_cfg.batch_size);
    LrSchedule sched{train_cfg.learning_rate, spe * train_cfg.epochs,
                     static_cast<int64_t>(std::floor(train_cfg.warmup_fraction *
                                                     static_cast<double>(spe * train_cfg.epochs)))};

    ObjectiveContext ctx{&vocab, &schema, train_cfg.max_len, train_cfg.scheme};
    Rng root(train_cfg.seed);

    PretrainResult result;
    result.log.seed = train_cfg.seed;

    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    int64_t step = 0;
    for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
        Rng sh = root.child("shuffle/epoch" + std::to_string(epoch));
        sh.shuffle(order);
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(train_cfg.batch_size)) {
            ++step;
            size_t end = std::min(order.size(), start + static_cast<size_t>(train_cfg.batch_size));
            std::vector<const Record*> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(&records[order[i]]);

            Rng step_rng = root.child("step/" + std::to_string(step));
            model.zero_grads();
            LossComponents comps;
            try {
                Tape<float> tape;
                ModelVars<float> vars = register_params(tape, model);
                Var loss = build_pretrain_batch_loss(
                    tape, vars, cfg, std::span<const Record* const>(batch), ctx, step_rng, &comps);
                if (!std::isfinite(comps.total))
                    fail("non-finite loss (mlm=" + std::to_string(comps.mlm) +
                         " a2c=" + std::to_string(comps.a2c) +
                         " c2a=" + std::to_string(comps.c2a) + ")");
                tape.backward(loss);
            } catch (const std::exception& e) {
                fail("pretrain aborted at step " + std::to_string(step) + ": " + e.what());
            }
            double lr = sched.at(step);
            adam.step(model, lr);
            result.log.steps.push_back(
                {step, comps.total, comps.mlm, comps.a2c, comps.c2a, comps.cls, lr});
        }
        if (epoch % train_cfg.checkpoint_every == 0 || epoch == train_cfg.epochs) {
            result.checkpoints.push_back(make_checkpoint(model, vocab, step, adam));
            result.checkpoint_epochs.push_back(epoch);
        }
    }
    result.log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

FinetunePairs build_finetune_pairs(const std::vector<Record>& queries,
                                   const std::vector<Record>& items,
                                   const std::vector<Qrel>& qrels, uint64_t seed) {
    std::unordered_map<std::string, int> item_idx;
    for (size_t i = 0; i < items.size(); ++i) item_idx[items[i].id] = static_cast<int>(i);

    std::unordered_map<std::string, std::vector<int>> e_items, other_items;
    std::unordered_map<std::string, std::unordered_set<int>> e_sets;
    for (const auto& q : qrels) {
        auto it = item_idx.find(q.item_id);
        if (it == item_idx.end()) fail("finetune pairs: qrel item '" + q.item_id + "' not in corpus");
        if (q.label == 'E') {
            e_items[q.query_id].push_back(it->second);
            e_sets[q.query_id].insert(it->second);
        } else {
            other_items[q.query_id].push_back(it->second);
        }
    }

    Rng root(seed);
    FinetunePairs out;
    for (size_t qi = 0; qi < queries.size(); ++qi) {
        const auto& query = queries[qi];
        auto eit = e_items.find(query.id);
        if (eit == e_items.end() || eit->second.empty()) {
            ++out.skipped_queries;
            continue;
        }
        Rng qr = root.child("pair/" + query.id);
        FinetunePair pair;
        pair.query_idx = static_cast<int>(qi);
        pair.positive_idx = eit->second[qr.bounded(eit->second.size())];

        auto oit = other_items.find(query.id);
        if (oit != other_items.end() && !oit->second.empty()) {
            pair.hard_negative_idx = oit->second[qr.bounded(oit->second.size())];
        } else {
            const auto& eset = e_sets[query.id];
            if (eset.size() >= items.size())
                fail("finetune pairs: no non-E item exists for query '" + query.id + "'");
            int candidate;
            do {
                candidate = static_cast<int>(qr.bounded(items.size()));
            } while (eset.count(candidate));
            pair.hard_negative_idx = candidate;
        }
        out.pairs.push_back(pair);
    }
    return out;
}

FinetuneResult finetune(const FinetunePairs& pairs, const std::vector<Record>& queries,
                        const std::vector<Record>& items, const Vocabulary& vocab,
                        const AspectSchema& schema, const Checkpoint& init,
                        const TrainConfig& train_cfg) {
    train_cfg.validate();
    if (pairs.pairs.empty()) fail("finetune: no training pairs");
    require_fingerprint(init, vocab.fingerprint);
    if (train_cfg.max_len > init.cfg.max_len)
        fail("finetune: input max_len exceeds model max_len");

    auto t0 = std::chrono::steady_clock::now();
    Model<float> model = model_from_checkpoint(init);
    const ModelConfig& cfg = model.cfg;
    Adam<float> adam;
    adam.init(model);

    // Inputs are fixed across epochs; build once.
    std::unordered_map<int, EncoderInput> query_inputs, item_inputs;
    for (const auto& p : pairs.pairs) {
        if (!query_inputs.count(p.query_idx))
            query_inputs.emplace(p.query_idx,
                                 build_input(queries[static_cast<size_t>(p.query_idx)], schema,
                                             vocab, TemplateMode::aspects_empty,
                                             train_cfg.max_len));
        for (int idx : {p.positive_idx, p.hard_negative_idx})
            if (!item_inputs.count(idx))
                item_inputs.emplace(idx, build_input(items[static_cast<size_t>(idx)], schema,
                                                     vocab, TemplateMode::with_aspects,
                                                     train_cfg.max_len));
    }
    auto assert_no_aspect_roles = [](const EncoderInput& input) {
        for (Role role : input.roles)
            if (role == Role::aspect)
                fail("finetune: query input unexpectedly carries aspect tokens");
    };

    const int64_t spe = steps_per_epoch(pairs.pairs.size(), train_cfg.batch_size);
    LrSchedule sched{train_cfg.learning_rate, spe * train_cfg.epochs,
                     static_cast<int64_t>(std::floor(train_cfg.warmup_fraction *
                                                     static_cast<double>(spe * train_cfg.epochs)))};
    Rng root(train_cfg.seed);

    FinetuneResult result;
    result.log.seed = train_cfg.seed;
    result.log.skipped_queries = pairs.skipped_queries;

    std::vector<size_t> order(pairs.pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    int64_t step = 0;
    for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
        Rng sh = root.child("shuffle/epoch" + std::to_string(epoch));
        sh.shuffle(order);
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(train_cfg.batch_size)) {
            ++step;
            size_t end = std::min(order.size(), start + static_cast<size_t>(train_cfg.batch_size));
            const int P = static_cast<int>(end - start);

            // One packed forward over [queries | positives | hard negatives].
            std::vector<const EncoderInput*> ptrs;
            ptrs.reserve(static_cast<size_t>(3 * P));
            for (size_t i = start; i < end; ++i) {
                const EncoderInput& qin = query_inputs.at(pairs.pairs[order[i]].query_idx);
                assert_no_aspect_roles(qin);
                ptrs.push_back(&qin);
            }
            for (size_t i = start; i < end; ++i)
                ptrs.push_back(&item_inputs.at(pairs.pairs[order[i]].positive_idx));
            for (size_t i = start; i < end; ++i)
                ptrs.push_back(&item_inputs.at(pairs.pairs[order[i]].hard_negative_idx));

            Rng step_rng = root.child("step/" + std::to_string(step));
            model.zero_grads();
            double loss_value = 0;
            try {
                Tape<float> tape;
                ModelVars<float> vars = register_params(tape, model);
                PackedBatch batch = pack_batch(ptrs, cfg.max_len);
                bool train = cfg.dropout_prob > 0.0;
                Var states = encoder_states(tape, vars, cfg, batch, train,
                                            train ? &step_rng : nullptr);
                Var cls = cls_embeddings(tape, states, batch);

                std::vector<int> query_rows(static_cast<size_t>(P)),
                    item_rows(static_cast<size_t>(2 * P));
                for (int i = 0; i < P; ++i) query_rows[static_cast<size_t>(i)] = i;
                for (int i = 0; i < 2 * P; ++i) item_rows[static_cast<size_t>(i)] = P + i;
                Var query_embs = tape.gather_rows(cls, query_rows);
                Var item_embs = tape.gather_rows(cls, item_rows);

                std::vector<int> positives(static_cast<size_t>(P));
                for (int i = 0; i < P; ++i) positives[static_cast<size_t>(i)] = i;
                Var loss = build_contrastive_batch_loss(tape, query_embs, item_embs,
                                                        std::move(positives));
                loss_value = static_cast<double>(tape.scalar(loss));
                if (!std::isfinite(loss_value)) fail("non-finite contrastive loss");
                tape.backward(loss);
            } catch (const std::exception& e) {
                fail("finetune aborted at step " + std::to_string(step) + ": " + e.what());
            }
            double lr = sched.at(step);
            adam.step(model, lr);
            result.log.steps.push_back({step, loss_value, 0, 0, 0, 0, lr});
        }
    }
    result.checkpoint = make_checkpoint(model, vocab, step, adam);
    result.log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

MetricSpec parse_metric(const std::string& spec) {
    auto at = spec.find('@');
    if (at == std::string::npos) fail("metric spec must look like recall@10 or ndcg@50");
    MetricSpec m;
    m.name = spec.substr(0, at);
    if (m.name != "recall" && m.name != "ndcg") fail("unknown metric '" + m.name + "'");
    try {
        m.k = std::stoi(spec.substr(at + 1));
    } catch (const std::exception&) {
        fail("bad metric cutoff in '" + spec + "'");
    }
    if (m.k < 1) fail("metric cutoff must be >= 1");
    return m;
}

size_t select_best(const std::vector<Checkpoint>& checkpoints,
                   const std::vector<Record>& val_queries, const std::vector<Record>& items,
                   const std::vector<Qrel>& val_qrels, const MetricSpec& metric,
                   const Vocabulary& vocab, const AspectSchema& schema, const GainMap& gains) {
    if (checkpoints.empty()) fail("select_best: empty checkpoint list");
    std::vector<std::string> query_ids, item_ids;
    for (const auto& q : val_queries) query_ids.push_back(q.id);
    for (const auto& i : items) item_ids.push_back(i.id);
    auto relevant = binarize(val_qrels);

    size_t best = 0;
    double best_value = -1.0;
    for (size_t c = 0; c < checkpoints.size(); ++c) {
        Tensor<float> q_embs =
            encode_corpus(checkpoints[c], val_queries, TemplateMode::aspects_empty, vocab, schema);
        Tensor<float> i_embs =
            encode_corpus(checkpoints[c], items, TemplateMode::with_aspects, vocab, schema);
        RunFile run = search(q_embs, query_ids, i_embs, item_ids, metric.k, "select");
        MetricResult res = metric.name == "recall"
                               ? recall_at_k(run, relevant, metric.k)
                               : ndcg_at_k(run, val_qrels, metric.k, gains);
        if (res.mean > best_value) {
            best_value = res.mean;
            best = c;
        }
    }
    return best;
}

}  // namespace attempt
