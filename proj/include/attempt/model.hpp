#pragma once

#include <map>
#include <string>
#include <vector>

#include "attempt/rng.hpp"
#include "attempt/tape.hpp"
#include "attempt/tensor.hpp"
#include "attempt/textproc.hpp"

namespace attempt {

// Pre-norm transformer encoder: learned absolute positions, GELU FFN, a final
// layer norm, raw-CLS pooling and an MLM head tied to the token embeddings.
struct ModelConfig {
    int vocab_size = 0;
    int hidden_dim = 64;
    int n_layers = 2;
    int n_heads = 4;
    int ffn_dim = 256;
    int max_len = 48;
    double dropout_prob = 0.0;
    uint64_t seed = 0;
    std::vector<int> head_sizes;  // |V_aj| per aspect; empty unless a classification mode runs

    void validate() const;
};

template <typename T>
struct Model {
    ModelConfig cfg;
    std::vector<std::string> names;               // stable parameter order
    std::map<std::string, Tensor<T>> values;
    std::map<std::string, Tensor<T>> grads;

    Tensor<T>& value(const std::string& name) {
        auto it = values.find(name);
        if (it == values.end()) fail("model: unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& value(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) fail("model: unknown parameter '" + name + "'");
        return it->second;
    }
    void zero_grads() {
        for (auto& [name, g] : grads) std::fill(g.data.begin(), g.data.end(), T(0));
    }

    template <typename U>
    Model<U> cast() const {
        Model<U> out;
        out.cfg = cfg;
        out.names = names;
        for (const auto& n : names) {
            out.values[n] = values.at(n).template cast<U>();
            out.grads[n] = Tensor<U>(values.at(n).shape);
        }
        return out;
    }
};

// Parameter layout (d = hidden_dim, f = ffn_dim, V = vocab_size):
//   tok_emb (V,d)  pos_emb (max_len,d)
//   l{i}.ln1.{g,b} l{i}.attn.{wq,wk,wv,wo} (d,d) + {bq,bk,bv,bo} (d)
//   l{i}.ln2.{g,b} l{i}.ffn.w1 (d,f) b1 (f) w2 (f,d) b2 (d)
//   final_ln.{g,b}  mlm_bias (V)  head{j} (d, head_sizes[j])
template <typename T>
Model<T> init_model(const ModelConfig& cfg);

// Token ids for a batch of encoder inputs, packed row-major as (batch*seq).
// Sequences are repadded to the longest real length in the batch; padding
// never influences non-pad positions, so partitioning does not change outputs.
struct PackedBatch {
    std::vector<int> ids;
    std::vector<uint8_t> mask;
    int batch = 0;
    int seq = 0;

    int flat(int b, int pos) const { return b * seq + pos; }
};

PackedBatch pack_batch(const std::vector<const EncoderInput*>& inputs, int max_len);

template <typename T>
struct ModelVars {
    std::map<std::string, Var> v;
    Var at(const std::string& name) const {
        auto it = v.find(name);
        if (it == v.end()) fail("model vars: unknown parameter '" + name + "'");
        return it->second;
    }
};

template <typename T>
ModelVars<T> register_params(Tape<T>& tape, Model<T>& model);

// Returns per-token hidden states, shape (batch*seq, d).
template <typename T>
Var encoder_states(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                   const PackedBatch& batch, bool train, Rng* rng);

// Rows of the CLS position for each sequence in the batch: (batch, d).
template <typename T>
Var cls_embeddings(Tape<T>& tape, Var states, const PackedBatch& batch);

// Tied-embedding MLM logits for the given flat positions: (n, vocab).
template <typename T>
Var mlm_logits(Tape<T>& tape, const ModelVars<T>& vars, Var states,
               const std::vector<int>& positions);

// Single-record convenience forward: (cls d-vector, token_states seq x d).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_one(Model<T>& model, const EncoderInput& input);

}  // namespace attempt
