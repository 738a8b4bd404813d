#pragma once

#include <algorithm>

#include "attempt/model_impl.hpp"
#include "attempt/objectives.hpp"

namespace attempt {

inline void PretrainScheme::validate() const {
    for (double r : {content_mask_ratio_item, content_mask_ratio_query, aspect_mask_ratio})
        if (r < 0.0 || r > 1.0) fail("scheme: mask ratios must be in [0, 1]");
    if (lambda_weight < 0.0) fail("scheme: lambda must be >= 0");
}

namespace detail {

// One corrupted encoder view plus where it came from.
struct View {
    int record_idx = 0;
    int component = 0;  // 0 mlm, 1 a2c, 2 c2a
    bool carries_cls = false;
    EncoderInput corrupted;
    MaskingPlan plan;
};

inline View make_view(const Record& record, const ObjectiveContext& ctx, TemplateMode mode,
                      double content_ratio, double aspect_ratio, int component, Rng& rng) {
    EncoderInput input = build_input(record, *ctx.schema, *ctx.vocab, mode, ctx.max_len);
    MaskScheme mask{content_ratio, aspect_ratio, ctx.scheme.policy};
    auto [corrupted, plan] = sample_masking(input, mask, *ctx.vocab, rng);
    View v;
    v.component = component;
    v.corrupted = std::move(corrupted);
    v.plan = std::move(plan);
    return v;
}

// Plans per scheme mode. Each view draws from a stream keyed on the record
// and the view kind, so the content view of a record corrupts identically no
// matter which scheme (or which batch neighbors) it runs under.
inline std::vector<View> scheme_views(const Record& record, const ObjectiveContext& ctx,
                                      const Rng& record_rng) {
    const auto& s = ctx.scheme;
    const double rc = s.content_ratio_for(record.kind);
    auto stream = [&](const char* kind) { return record_rng.child(kind); };
    std::vector<View> views;
    switch (s.mode) {
        case SchemeMode::BIBERT: {
            Rng r = stream("mlm");
            views.push_back(make_view(record, ctx, TemplateMode::content_only, rc, 0.0, 0, r));
            break;
        }
        case SchemeMode::BIBERT_C: {
            Rng r = stream("joint");
            views.push_back(make_view(record, ctx, TemplateMode::with_aspects, rc, rc, 0, r));
            break;
        }
        case SchemeMode::BIBERT_C_A: {
            Rng r = stream("joint");
            views.push_back(make_view(record, ctx, TemplateMode::with_aspects, rc,
                                      s.aspect_mask_ratio, 0, r));
            break;
        }
        case SchemeMode::MTBERT: {
            Rng r = stream("mlm");
            views.push_back(make_view(record, ctx, TemplateMode::content_only, rc, 0.0, 0, r));
            views.back().carries_cls = true;
            break;
        }
        case SchemeMode::MTBERT_C: {
            Rng r = stream("joint");
            views.push_back(make_view(record, ctx, TemplateMode::with_aspects, rc, rc, 0, r));
            views.back().carries_cls = true;
            break;
        }
        case SchemeMode::ATTEMPT: {
            // lambda = 0 zeroes the mutual terms' gradients, so their views
            // are skipped outright; training then matches BIBERT exactly.
            const bool mutual = s.lambda_weight != 0.0;
            if (s.enable_mlm) {
                Rng r = stream("mlm");
                views.push_back(
                    make_view(record, ctx, TemplateMode::content_only, rc, 0.0, 0, r));
            }
            if (s.enable_a2c && mutual) {
                Rng r = stream("a2c");
                views.push_back(
                    make_view(record, ctx, TemplateMode::with_aspects, rc, 0.0, 1, r));
            }
            if (s.enable_c2a && mutual) {
                Rng r = stream("c2a");
                views.push_back(make_view(record, ctx, TemplateMode::with_aspects, 0.0,
                                          s.aspect_mask_ratio, 2, r));
            }
            break;
        }
    }
    return views;
}

template <typename T>
Var zero_scalar(Tape<T>& tape) {
    return tape.constant(Tensor<T>({1}));
}

// Shared core: forward all views at once, then assemble per-component means.
// Per-view weight is 1/(n_records * n_masked) so each record contributes the
// mean NLL over its own masked tokens.
template <typename T>
struct ViewBatchLoss {
    Var mlm, a2c, c2a, cls;
    bool has_mlm = false, has_a2c = false, has_c2a = false, has_cls = false;
};

template <typename T>
ViewBatchLoss<T> evaluate_views(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                                const std::vector<const Record*>& records,
                                std::vector<View>& views, const ObjectiveContext& ctx,
                                bool train, Rng* dropout_rng) {
    std::vector<const EncoderInput*> inputs;
    inputs.reserve(views.size());
    for (const auto& v : views) inputs.push_back(&v.corrupted);
    PackedBatch batch = pack_batch(inputs, cfg.max_len);
    Var states = encoder_states(tape, vars, cfg, batch, train, dropout_rng);

    const T inv_records = T(1) / static_cast<T>(records.size());
    ViewBatchLoss<T> out;
    for (int component : {0, 1, 2}) {
        std::vector<int> positions, labels;
        std::vector<T> weights;
        for (size_t vi = 0; vi < views.size(); ++vi) {
            const auto& v = views[vi];
            if (v.component != component || v.plan.size() == 0) continue;
            T w = inv_records / static_cast<T>(v.plan.size());
            for (size_t p = 0; p < v.plan.size(); ++p) {
                positions.push_back(batch.flat(static_cast<int>(vi), v.plan.positions[p]));
                labels.push_back(v.plan.labels[p]);
                weights.push_back(w);
            }
        }
        Var loss = zero_scalar(tape);
        if (!positions.empty()) {
            Var logits = mlm_logits(tape, vars, states, positions);
            Var nll = tape.softmax_xent(logits, std::move(labels));
            loss = tape.weighted_sum(nll, std::move(weights));
        }
        if (component == 0) { out.mlm = loss; out.has_mlm = true; }
        if (component == 1) { out.a2c = loss; out.has_a2c = true; }
        if (component == 2) { out.c2a = loss; out.has_c2a = true; }
    }

    // Aspect classification on the CLS of cls-carrying views.
    bool any_cls = false;
    for (const auto& v : views) any_cls |= v.carries_cls;
    if (any_cls) {
        if (cfg.head_sizes.size() != ctx.schema->k())
            fail("objectives: model has no classification heads for this schema");
        Var cls_loss = zero_scalar(tape);
        Var all_cls = cls_embeddings(tape, states, batch);
        for (size_t j = 0; j < ctx.schema->k(); ++j) {
            std::vector<int> rows, targets;
            std::vector<T> weights;
            for (size_t vi = 0; vi < views.size(); ++vi) {
                const auto& v = views[vi];
                if (!v.carries_cls) continue;
                auto cls_id = aspect_class_id(*ctx.schema, *records[v.record_idx], j);
                if (!cls_id) continue;
                rows.push_back(static_cast<int>(vi));
                targets.push_back(*cls_id);
                weights.push_back(inv_records);
            }
            if (rows.empty()) continue;
            Var picked = tape.gather_rows(all_cls, std::move(rows));
            Var logits = tape.matmul(picked, vars.at("head" + std::to_string(j)));
            Var nll = tape.softmax_xent(logits, std::move(targets));
            cls_loss = tape.add(cls_loss, tape.weighted_sum(nll, std::move(weights)));
        }
        out.cls = cls_loss;
        out.has_cls = true;
    }
    return out;
}

// Single record, single view.
template <typename T>
Var single_view_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                     const Record& record, const ObjectiveContext& ctx, TemplateMode mode,
                     double content_ratio, double aspect_ratio, Rng& rng) {
    std::vector<View> views{
        make_view(record, ctx, mode, content_ratio, aspect_ratio, 0, rng)};
    std::vector<const Record*> records{&record};
    auto parts = evaluate_views(tape, vars, cfg, records, views, ctx, false, nullptr);
    return parts.mlm;
}

}  // namespace detail

template <typename T>
Var build_content_mlm_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                           const Record& record, const ObjectiveContext& ctx, Rng& rng) {
    return detail::single_view_loss(tape, vars, cfg, record, ctx, TemplateMode::content_only,
                                    ctx.scheme.content_ratio_for(record.kind), 0.0, rng);
}

template <typename T>
Var build_a2c_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                   const Record& record, const ObjectiveContext& ctx, Rng& rng) {
    return detail::single_view_loss(tape, vars, cfg, record, ctx, TemplateMode::with_aspects,
                                    ctx.scheme.content_ratio_for(record.kind), 0.0, rng);
}

template <typename T>
Var build_c2a_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                   const Record& record, const ObjectiveContext& ctx, Rng& rng) {
    return detail::single_view_loss(tape, vars, cfg, record, ctx, TemplateMode::with_aspects, 0.0,
                                    ctx.scheme.aspect_mask_ratio, rng);
}

template <typename T>
Var build_overall_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                       const Record& record, const ObjectiveContext& ctx, Rng& rng,
                       LossComponents* components) {
    Var mlm = build_content_mlm_loss(tape, vars, cfg, record, ctx, rng);
    Var a2c = build_a2c_loss(tape, vars, cfg, record, ctx, rng);
    Var c2a = build_c2a_loss(tape, vars, cfg, record, ctx, rng);
    Var total = tape.add(
        mlm, tape.scale(tape.add(a2c, c2a), static_cast<T>(ctx.scheme.lambda_weight)));
    if (components) {
        components->mlm = static_cast<double>(tape.scalar(mlm));
        components->a2c = static_cast<double>(tape.scalar(a2c));
        components->c2a = static_cast<double>(tape.scalar(c2a));
        components->total = static_cast<double>(tape.scalar(total));
    }
    return total;
}

template <typename T>
Var build_joint_mlm_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                         const Record& record, const ObjectiveContext& ctx, Rng& rng,
                         double aspect_ratio) {
    return detail::single_view_loss(tape, vars, cfg, record, ctx, TemplateMode::with_aspects,
                                    ctx.scheme.content_ratio_for(record.kind), aspect_ratio, rng);
}

template <typename T>
Var build_aspect_classification_loss(Tape<T>& tape, const ModelVars<T>& vars,
                                     const ModelConfig& cfg, const Record& record,
                                     const ObjectiveContext& ctx) {
    TemplateMode mode = ctx.scheme.mode == SchemeMode::MTBERT_C ? TemplateMode::with_aspects
                                                                : TemplateMode::content_only;
    EncoderInput input = build_input(record, *ctx.schema, *ctx.vocab, mode, ctx.max_len);
    PackedBatch batch = pack_batch({&input}, cfg.max_len);
    Var states = encoder_states(tape, vars, cfg, batch, false, nullptr);
    Var cls = cls_embeddings(tape, states, batch);

    if (cfg.head_sizes.size() != ctx.schema->k())
        fail("objectives: model has no classification heads for this schema");
    Var loss = detail::zero_scalar(tape);
    for (size_t j = 0; j < ctx.schema->k(); ++j) {
        auto cls_id = aspect_class_id(*ctx.schema, record, j);
        if (!cls_id) continue;
        Var logits = tape.matmul(cls, vars.at("head" + std::to_string(j)));
        Var nll = tape.softmax_xent(logits, {*cls_id});
        loss = tape.add(loss, tape.weighted_sum(nll, {T(1)}));
    }
    return loss;
}

template <typename T>
Var build_pretrain_batch_loss(Tape<T>& tape, const ModelVars<T>& vars, const ModelConfig& cfg,
                              std::span<const Record* const> batch, const ObjectiveContext& ctx,
                              Rng& rng, LossComponents* components) {
    if (batch.empty()) fail("pretrain loss: empty batch");
    ctx.scheme.validate();

    std::vector<const Record*> records(batch.begin(), batch.end());
    std::vector<detail::View> views;
    for (size_t r = 0; r < records.size(); ++r) {
        Rng record_rng = rng.child("rec/" + records[r]->id);
        auto record_views = detail::scheme_views(*records[r], ctx, record_rng);
        for (auto& v : record_views) {
            v.record_idx = static_cast<int>(r);
            views.push_back(std::move(v));
        }
    }
    if (views.empty()) fail("pretrain loss: scheme produced no views (all terms disabled?)");

    const bool train = cfg.dropout_prob > 0.0;
    auto parts =
        detail::evaluate_views(tape, vars, cfg, records, views, ctx, train, train ? &rng : nullptr);

    Var total = parts.mlm;  // always present: component 0 exists for every mode with enable_mlm;
    bool have_total = parts.has_mlm;
    if (ctx.scheme.mode == SchemeMode::ATTEMPT) {
        Var mutual = detail::zero_scalar(tape);
        if (parts.has_a2c) mutual = tape.add(mutual, parts.a2c);
        if (parts.has_c2a) mutual = tape.add(mutual, parts.c2a);
        mutual = tape.scale(mutual, static_cast<T>(ctx.scheme.lambda_weight));
        total = have_total ? tape.add(total, mutual) : mutual;
        have_total = true;
    }
    if (parts.has_cls) {
        total = have_total ? tape.add(total, parts.cls) : parts.cls;
        have_total = true;
    }
    if (!have_total) fail("pretrain loss: nothing to optimize");

    if (components) {
        components->mlm = parts.has_mlm ? static_cast<double>(tape.scalar(parts.mlm)) : 0.0;
        components->a2c = parts.has_a2c ? static_cast<double>(tape.scalar(parts.a2c)) : 0.0;
        components->c2a = parts.has_c2a ? static_cast<double>(tape.scalar(parts.c2a)) : 0.0;
        components->cls = parts.has_cls ? static_cast<double>(tape.scalar(parts.cls)) : 0.0;
        components->total = static_cast<double>(tape.scalar(total));
    }
    return total;
}

template <typename T>
Var build_contrastive_batch_loss(Tape<T>& tape, Var query_embs, Var item_embs,
                                 std::vector<int> positive_cols) {
    const int n_queries = tape.val(query_embs).rows();
    if (static_cast<int>(positive_cols.size()) != n_queries)
        fail("contrastive loss: one positive column per query required");
    Var scores = tape.matmul_nt(query_embs, item_embs);
    Var nll = tape.softmax_xent(scores, std::move(positive_cols));
    std::vector<T> weights(static_cast<size_t>(n_queries), T(1) / static_cast<T>(n_queries));
    return tape.weighted_sum(nll, std::move(weights));
}

}  // namespace attempt
