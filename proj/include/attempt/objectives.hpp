#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attempt/corpus.hpp"
#include "attempt/model.hpp"
#include "attempt/textproc.hpp"

namespace attempt {

enum class SchemeMode { BIBERT, BIBERT_C, BIBERT_C_A, MTBERT, MTBERT_C, ATTEMPT };

SchemeMode scheme_mode_from_string(const std::string& s);
std::string to_string(SchemeMode mode);

// Which pre-training losses run and with what corruption rates.
//   BIBERT      content MLM on the blank-aspect template
//   BIBERT_C    joint MLM over aspect+content, equal ratios
//   BIBERT_C_A  joint MLM, aspect ratio boosted to aspect_mask_ratio
//   MTBERT      content MLM + per-aspect CLS classification
//   MTBERT_C    joint MLM (equal ratios) + per-aspect CLS classification
//   ATTEMPT     content MLM + lambda * (aspect->content + content->aspect)
struct PretrainScheme {
    SchemeMode mode = SchemeMode::ATTEMPT;
    double content_mask_ratio_item = 0.15;
    double content_mask_ratio_query = 0.3;
    double aspect_mask_ratio = 0.6;
    double lambda_weight = 1.0;
    ReplacePolicy policy = ReplacePolicy::bert_80_10_10;
    // Per-term switches for the ATTEMPT ablation sweep.
    bool enable_mlm = true;
    bool enable_a2c = true;
    bool enable_c2a = true;

    void validate() const;
    double content_ratio_for(RecordKind kind) const {
        return kind == RecordKind::item ? content_mask_ratio_item : content_mask_ratio_query;
    }
};

struct LossComponents {
    double mlm = 0, a2c = 0, c2a = 0, cls = 0;
    double total = 0;
};

// Everything a loss evaluation needs besides the model.
struct ObjectiveContext {
    const Vocabulary* vocab = nullptr;
    const AspectSchema* schema = nullptr;
    int max_len = 48;
    PretrainScheme scheme;
};

// Record-level loss builders. Each draws its own corruption from `rng`, so a
// fixed rng seed fixes the masked view exactly. They return a scalar Var on
// the tape (mean NLL over masked tokens; zero Var when nothing was masked).
template <typename T>
Var build_content_mlm_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                           const Record& record, const ObjectiveContext& ctx, Rng& rng);
template <typename T>
Var build_a2c_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                   const Record& record, const ObjectiveContext& ctx, Rng& rng);
template <typename T>
Var build_c2a_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                   const Record& record, const ObjectiveContext& ctx, Rng& rng);
// L_mlm + lambda * (L_a2c + L_c2a) over three independently corrupted views.
template <typename T>
Var build_overall_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                       const Record& record, const ObjectiveContext& ctx, Rng& rng,
                       LossComponents* components = nullptr);
// One jointly corrupted view; aspect ratio equal (BIBERT_C) or boosted (BIBERT_C_A).
template <typename T>
Var build_joint_mlm_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                         const Record& record, const ObjectiveContext& ctx, Rng& rng,
                         double aspect_ratio);
// Sum of CLS softmax cross-entropies over aspects with non-empty values,
// computed on the mode's uncorrupted template.
template <typename T>
Var build_aspect_classification_loss(Tape<T>& tape, const ModelVars<T>& vars,
                                     const ModelConfig& cfg, const Record& record,
                                     const ObjectiveContext& ctx);

// Batched pre-training loss for one optimizer step; dispatches on scheme.mode
// and records the per-component means.
template <typename T>
Var build_pretrain_batch_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                              std::span<const Record* const> batch, const ObjectiveContext& ctx,
                              Rng& rng, LossComponents* components = nullptr);

// Softmax cross-entropy over dot-product scores; the positive is the target.
double contrastive_loss(std::span<const double> query, std::span<const double> positive,
                        const std::vector<std::vector<double>>& negatives);

// In-batch variant: scores = query_embs x item_embs^T, one row per query,
// target column = the query's own positive.
template <typename T>
Var build_contrastive_batch_loss(Tape<T>& tape, Var query_embs, Var item_embs,
                                 std::vector<int> positive_cols);

// Class id of the record's aspect value in schema.value_vocab[j];
// nullopt when the value is empty, error when non-empty but unknown.
std::optional<int> aspect_class_id(const AspectSchema& schema, const Record& record, size_t j);

}  // namespace attempt
