#include "attempt/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "attempt/util.hpp"

namespace attempt {

SchemeMode scheme_mode_from_string(const std::string& s) {
    if (s == "BIBERT") return SchemeMode::BIBERT;
    if (s == "BIBERT_C") return SchemeMode::BIBERT_C;
    if (s == "BIBERT_C_A") return SchemeMode::BIBERT_C_A;
    if (s == "MTBERT") return SchemeMode::MTBERT;
    if (s == "MTBERT_C") return SchemeMode::MTBERT_C;
    if (s == "ATTEMPT") return SchemeMode::ATTEMPT;
    fail("unknown scheme mode '" + s + "'");
}

std::string to_string(SchemeMode mode) {
    switch (mode) {
        case SchemeMode::BIBERT: return "BIBERT";
        case SchemeMode::BIBERT_C: return "BIBERT_C";
        case SchemeMode::BIBERT_C_A: return "BIBERT_C_A";
        case SchemeMode::MTBERT: return "MTBERT";
        case SchemeMode::MTBERT_C: return "MTBERT_C";
        case SchemeMode::ATTEMPT: return "ATTEMPT";
    }
    fail("unknown scheme mode");
}

std::optional<int> aspect_class_id(const AspectSchema& schema, const Record& record, size_t j) {
    if (schema.value_vocab.size() != schema.k())
        fail("aspect_class_id: value vocabularies not built");
    const std::string& value = record.aspects.at(j);
    if (value.empty()) return std::nullopt;
    const auto& vocab = schema.value_vocab[j];
    auto it = std::lower_bound(vocab.begin(), vocab.end(), value);
    if (it == vocab.end() || *it != value)
        fail("aspect_class_id: value '" + value + "' for aspect '" + schema.names[j] +
             "' not in the training value vocabulary");
    return static_cast<int>(it - vocab.begin());
}

double contrastive_loss(std::span<const double> query, std::span<const double> positive,
                        const std::vector<std::vector<double>>& negatives) {
    if (query.size() != positive.size()) fail("contrastive_loss: dimension mismatch");
    auto dot = [&](std::span<const double> v) {
        double s = 0;
        for (size_t i = 0; i < v.size(); ++i) s += query[i] * v[i];
        return s;
    };
    std::vector<double> scores{dot(positive)};
    for (const auto& n : negatives) {
        if (n.size() != query.size()) fail("contrastive_loss: dimension mismatch");
        scores.push_back(dot(n));
    }
    if (scores.empty()) fail("contrastive_loss: empty candidate set");
    double mx = *std::max_element(scores.begin(), scores.end());
    double lse = 0;
    for (double s : scores) lse += std::exp(s - mx);
    return mx + std::log(lse) - scores[0];
}

}  // namespace attempt
