#pragma once

#include <algorithm>

#include "attempt/model.hpp"

namespace attempt {

inline void ModelConfig::validate() const {
    if (vocab_size <= 0) fail("model config: vocab_size must be set");
    if (hidden_dim <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_dim <= 0)
        fail("model config: dimensions must be positive");
    if (hidden_dim % n_heads != 0) fail("model config: hidden_dim not divisible by n_heads");
    if (dropout_prob < 0.0 || dropout_prob >= 1.0) fail("model config: dropout_prob in [0,1)");
    if (max_len < 1) fail("model config: max_len must be >= 1");
}

template <typename T>
Model<T> init_model(const ModelConfig& cfg) {
    cfg.validate();
    Model<T> m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    Rng init = rng.child("init");

    auto add = [&](const std::string& name, std::vector<int> shape, bool gaussian, T fill = T(0)) {
        Tensor<T> t(std::move(shape));
        if (gaussian) {
            for (auto& v : t.data) v = static_cast<T>(init.normal() * 0.02);
        } else if (fill != T(0)) {
            std::fill(t.data.begin(), t.data.end(), fill);
        }
        m.names.push_back(name);
        m.grads[name] = Tensor<T>(t.shape);
        m.values[name] = std::move(t);
    };

    const int d = cfg.hidden_dim, f = cfg.ffn_dim, V = cfg.vocab_size;
    add("tok_emb", {V, d}, true);
    add("pos_emb", {cfg.max_len, d}, true);
    for (int i = 0; i < cfg.n_layers; ++i) {
        std::string p = "l" + std::to_string(i) + ".";
        add(p + "ln1.g", {d}, false, T(1));
        add(p + "ln1.b", {d}, false);
        for (const char* w : {"wq", "wk", "wv", "wo"}) add(p + "attn." + w, {d, d}, true);
        for (const char* b : {"bq", "bk", "bv", "bo"}) add(p + "attn." + b, {d}, false);
        add(p + "ln2.g", {d}, false, T(1));
        add(p + "ln2.b", {d}, false);
        add(p + "ffn.w1", {d, f}, true);
        add(p + "ffn.b1", {f}, false);
        add(p + "ffn.w2", {f, d}, true);
        add(p + "ffn.b2", {d}, false);
    }
    add("final_ln.g", {d}, false, T(1));
    add("final_ln.b", {d}, false);
    add("mlm_bias", {V}, false);
    for (size_t j = 0; j < cfg.head_sizes.size(); ++j)
        add("head" + std::to_string(j), {d, cfg.head_sizes[j]}, true);
    return m;
}

inline PackedBatch pack_batch(const std::vector<const EncoderInput*>& inputs, int max_len) {
    if (inputs.empty()) fail("pack_batch: empty batch");
    int seq = 0;
    for (const auto* in : inputs) {
        if (in->length() > max_len)
            fail("pack_batch: sequence longer than max_len (" + std::to_string(in->length()) +
                 " > " + std::to_string(max_len) + ")");
        seq = std::max(seq, in->real_length());
    }
    PackedBatch b;
    b.batch = static_cast<int>(inputs.size());
    b.seq = seq;
    b.ids.assign(static_cast<size_t>(b.batch) * seq, 0);
    b.mask.assign(static_cast<size_t>(b.batch) * seq, 0);
    for (int i = 0; i < b.batch; ++i) {
        const auto& in = *inputs[static_cast<size_t>(i)];
        int n = in.real_length();
        for (int p = 0; p < n; ++p) {
            b.ids[static_cast<size_t>(b.flat(i, p))] = in.ids[static_cast<size_t>(p)];
            b.mask[static_cast<size_t>(b.flat(i, p))] = 1;
        }
    }
    return b;
}

template <typename T>
ModelVars<T> register_params(Tape<T>& tape, Model<T>& model) {
    ModelVars<T> vars;
    for (const auto& name : model.names)
        vars.v[name] = tape.param(&model.values[name], &model.grads[name]);
    return vars;
}

template <typename T>
Var encoder_states(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                   const PackedBatch& batch, bool train, Rng* rng) {
    if (batch.seq > cfg.max_len) fail("encoder: sequence longer than max_len");
    for (int id : batch.ids)
        if (id < 0 || id >= cfg.vocab_size) fail("encoder: token id out of vocabulary range");
    const bool drop = train && cfg.dropout_prob > 0.0;
    if (drop && !rng) fail("encoder: dropout requires an rng");

    std::vector<int> pos_ids(batch.ids.size());
    for (int b = 0; b < batch.batch; ++b)
        for (int p = 0; p < batch.seq; ++p) pos_ids[static_cast<size_t>(batch.flat(b, p))] = p;

    Var x = tape.add(tape.gather_rows(vars.at("tok_emb"), batch.ids),
                     tape.gather_rows(vars.at("pos_emb"), pos_ids));

    typename Tape<T>::AttnSpec spec;
    spec.batch = batch.batch;
    spec.seq = batch.seq;
    spec.heads = cfg.n_heads;
    spec.mask = batch.mask;

    for (int i = 0; i < cfg.n_layers; ++i) {
        std::string p = "l" + std::to_string(i) + ".";
        Var h = tape.layer_norm(x, vars.at(p + "ln1.g"), vars.at(p + "ln1.b"), T(1e-5));
        Var q = tape.add_row(tape.matmul(h, vars.at(p + "attn.wq")), vars.at(p + "attn.bq"));
        Var k = tape.add_row(tape.matmul(h, vars.at(p + "attn.wk")), vars.at(p + "attn.bk"));
        Var v = tape.add_row(tape.matmul(h, vars.at(p + "attn.wv")), vars.at(p + "attn.bv"));
        Var a = tape.attention(q, k, v, spec);
        Var o = tape.add_row(tape.matmul(a, vars.at(p + "attn.wo")), vars.at(p + "attn.bo"));
        if (drop) o = tape.dropout(o, static_cast<T>(cfg.dropout_prob), *rng);
        x = tape.add(x, o);

        Var h2 = tape.layer_norm(x, vars.at(p + "ln2.g"), vars.at(p + "ln2.b"), T(1e-5));
        Var f1 = tape.gelu(
            tape.add_row(tape.matmul(h2, vars.at(p + "ffn.w1")), vars.at(p + "ffn.b1")));
        Var f2 = tape.add_row(tape.matmul(f1, vars.at(p + "ffn.w2")), vars.at(p + "ffn.b2"));
        if (drop) f2 = tape.dropout(f2, static_cast<T>(cfg.dropout_prob), *rng);
        x = tape.add(x, f2);
    }
    return tape.layer_norm(x, vars.at("final_ln.g"), vars.at("final_ln.b"), T(1e-5));
}

template <typename T>
Var cls_embeddings(Tape<T>& tape, Var states, const PackedBatch& batch) {
    std::vector<int> rows(static_cast<size_t>(batch.batch));
    for (int b = 0; b < batch.batch; ++b) rows[static_cast<size_t>(b)] = batch.flat(b, 0);
    return tape.gather_rows(states, rows);
}

template <typename T>
Var mlm_logits(Tape<T>& tape, const ModelVars<T>& vars, Var states,
               const std::vector<int>& positions) {
    Var picked = tape.gather_rows(states, positions);
    return tape.add_row(tape.matmul_nt(picked, vars.at("tok_emb")), vars.at("mlm_bias"));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_one(Model<T>& model, const EncoderInput& input) {
    Tape<T> tape;
    ModelVars<T> vars = register_params(tape, model);
    PackedBatch batch = pack_batch({&input}, model.cfg.max_len);
    Var states = encoder_states(tape, vars, model.cfg, batch, false, nullptr);
    Var cls = cls_embeddings(tape, states, batch);
    Tensor<T> cls_row({model.cfg.hidden_dim});
    for (int j = 0; j < model.cfg.hidden_dim; ++j) cls_row.data[static_cast<size_t>(j)] =
        tape.val(cls).at(0, j);
    return {std::move(cls_row), tape.val(states)};
}

}  // namespace attempt
