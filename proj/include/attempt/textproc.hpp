#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "attempt/corpus.hpp"
#include "attempt/rng.hpp"

namespace attempt {

// Lowercased whitespace/punctuation tokenizer. ASCII letters are lowercased,
// multi-byte UTF-8 sequences pass through untouched, ASCII punctuation and
// Unicode whitespace separate tokens and are dropped.
std::vector<std::string> tokenize(std::string_view text);

// Token ids. Specials occupy fixed low ids: [PAD]=0 [UNK]=1 [CLS]=2 [SEP]=3
// [MASK]=4 [C]=5 [A_1..A_k]=6..5+k. Corpus tokens follow, ordered by
// descending frequency then lexicographically.
struct Vocabulary {
    static constexpr int pad_id = 0;
    static constexpr int unk_id = 1;
    static constexpr int cls_id = 2;
    static constexpr int sep_id = 3;
    static constexpr int mask_id = 4;
    static constexpr int c_id = 5;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;
    int k = 0;                // number of aspect indicator tokens
    std::string fingerprint;  // hex content hash over (tokens, k)

    int a_id(int j) const { return 6 + j; }  // j in [0, k)
    int n_special() const { return 6 + k; }
    int size() const { return static_cast<int>(tokens.size()); }
    int id(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? unk_id : it->second;
    }
};

Vocabulary build_vocab(const std::vector<std::span<const Record>>& groups, size_t k,
                       int min_freq, int max_size);

void save_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::string& path);
std::string vocab_fingerprint(const std::vector<std::string>& tokens, int k);

enum class Role : uint8_t { special, indicator, aspect, content, pad };

// [CLS] [A_1] a_1 ... [A_k] a_k [SEP] [C] content [SEP] [PAD]...
struct EncoderInput {
    std::vector<int> ids;
    std::vector<Role> roles;
    std::vector<int> aspect_index;       // aspect ordinal for Role::aspect, else -1
    std::vector<uint8_t> attention_mask;  // 1 for real tokens, 0 for padding
    int length() const { return static_cast<int>(ids.size()); }
    int real_length() const;  // tokens before padding
};

enum class TemplateMode {
    with_aspects,    // record's aspect strings as-is
    aspects_empty,   // aspect texts forced empty; used for all query encoding
    content_only,    // aspect texts forced empty; content-MLM view
};

// Truncation drops content tokens from the tail first, then aspect tokens
// from the tail. Indicators and both [SEP]s always survive.
EncoderInput build_input(const Record& record, const AspectSchema& schema,
                         const Vocabulary& vocab, TemplateMode mode, int max_len);

enum class MaskAction : uint8_t { mask, random, keep };

struct MaskingPlan {
    std::vector<int> positions;       // strictly increasing
    std::vector<int> labels;          // original token ids
    std::vector<MaskAction> actions;  // replacement applied per position
    size_t size() const { return positions.size(); }
};

enum class ReplacePolicy { bert_80_10_10, mask_only };

struct MaskScheme {
    double content_ratio = 0.15;
    double aspect_ratio = 0.0;
    ReplacePolicy policy = ReplacePolicy::bert_80_10_10;
};

// Independently selects content/aspect-role tokens at their role's ratio and
// corrupts them ([MASK] 0.8 / random non-special 0.1 / keep 0.1 under the
// default policy). Special, indicator and pad positions are never selected.
std::pair<EncoderInput, MaskingPlan> sample_masking(const EncoderInput& input,
                                                    const MaskScheme& scheme,
                                                    const Vocabulary& vocab, Rng& rng);

}  // namespace attempt
