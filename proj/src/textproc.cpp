#include "attempt/textproc.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

#include "attempt/util.hpp"

namespace attempt {

using nlohmann::json;

namespace {

bool is_unicode_space(uint32_t cp) {
    if (cp == 0xA0 || cp == 0x1680 || cp == 0x2028 || cp == 0x2029 || cp == 0x202F ||
        cp == 0x205F || cp == 0x3000)
        return true;
    return cp >= 0x2000 && cp <= 0x200A;
}

// Decodes one UTF-8 codepoint starting at i; advances i past it. Returns the
// codepoint, or 0xFFFD for invalid bytes (consumed one at a time).
uint32_t next_codepoint(std::string_view s, size_t& i, size_t& n_bytes) {
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    uint32_t cp = 0xFFFD;
    if (b0 < 0x80) {
        cp = b0;
    } else if ((b0 >> 5) == 0x6 && i + 1 < s.size()) {
        cp = static_cast<uint32_t>(b0 & 0x1F) << 6 |
             (static_cast<unsigned char>(s[i + 1]) & 0x3F);
        len = 2;
    } else if ((b0 >> 4) == 0xE && i + 2 < s.size()) {
        cp = static_cast<uint32_t>(b0 & 0x0F) << 12 |
             static_cast<uint32_t>(static_cast<unsigned char>(s[i + 1]) & 0x3F) << 6 |
             (static_cast<unsigned char>(s[i + 2]) & 0x3F);
        len = 3;
    } else if ((b0 >> 3) == 0x1E && i + 3 < s.size()) {
        cp = static_cast<uint32_t>(b0 & 0x07) << 18 |
             static_cast<uint32_t>(static_cast<unsigned char>(s[i + 1]) & 0x3F) << 12 |
             static_cast<uint32_t>(static_cast<unsigned char>(s[i + 2]) & 0x3F) << 6 |
             (static_cast<unsigned char>(s[i + 3]) & 0x3F);
        len = 4;
    }
    n_bytes = len;
    i += len;
    return cp;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    size_t i = 0;
    while (i < text.size()) {
        size_t start = i, len = 0;
        uint32_t cp = next_codepoint(text, i, len);
        bool separator;
        if (cp < 0x80) {
            char c = static_cast<char>(cp);
            separator = !(std::isalnum(static_cast<unsigned char>(c)));
            if (!separator) cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            separator = is_unicode_space(cp) || cp == 0xFFFD;
            if (!separator) cur.append(text.substr(start, len));
        }
        if (separator && !cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string vocab_fingerprint(const std::vector<std::string>& tokens, int k) {
    uint64_t h = fnv1a64("k=" + std::to_string(k));
    for (const auto& t : tokens) {
        h = fnv1a64(t, h);
        h = fnv1a64("\n", h);
    }
    return to_hex(h);
}

Vocabulary build_vocab(const std::vector<std::span<const Record>>& groups, size_t k,
                       int min_freq, int max_size) {
    if (k < 1) fail("build_vocab: k must be >= 1");
    if (min_freq < 1) fail("build_vocab: min_freq must be >= 1");
    Vocabulary vocab;
    vocab.k = static_cast<int>(k);
    if (max_size < vocab.n_special())
        fail("build_vocab: max_size smaller than the " + std::to_string(vocab.n_special()) +
             " special tokens");

    std::map<std::string, int64_t> freq;
    for (const auto& group : groups)
        for (const auto& r : group) {
            for (const auto& t : tokenize(r.content)) freq[t]++;
            for (const auto& a : r.aspects)
                for (const auto& t : tokenize(a)) freq[t]++;
        }

    vocab.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[C]"};
    for (size_t j = 0; j < k; ++j) vocab.tokens.push_back("[A_" + std::to_string(j + 1) + "]");

    std::vector<std::pair<std::string, int64_t>> by_freq(freq.begin(), freq.end());
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [tok, n] : by_freq) {
        if (n < min_freq) continue;
        if (static_cast<int>(vocab.tokens.size()) >= max_size) break;
        vocab.tokens.push_back(tok);
    }

    for (size_t i = 0; i < vocab.tokens.size(); ++i)
        vocab.index[vocab.tokens[i]] = static_cast<int>(i);
    vocab.fingerprint = vocab_fingerprint(vocab.tokens, vocab.k);
    return vocab;
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
    json obj = {{"tokens", vocab.tokens}, {"k", vocab.k}, {"fingerprint", vocab.fingerprint}};
    write_file(path, obj.dump() + "\n");
}

Vocabulary load_vocab(const std::string& path) {
    json obj = json::parse(read_file(path));
    Vocabulary vocab;
    vocab.tokens = obj.at("tokens").get<std::vector<std::string>>();
    vocab.k = obj.at("k").get<int>();
    vocab.fingerprint = obj.at("fingerprint").get<std::string>();
    if (vocab.fingerprint != vocab_fingerprint(vocab.tokens, vocab.k))
        fail("load_vocab: fingerprint mismatch in " + path);
    for (size_t i = 0; i < vocab.tokens.size(); ++i)
        vocab.index[vocab.tokens[i]] = static_cast<int>(i);
    return vocab;
}

int EncoderInput::real_length() const {
    int n = 0;
    for (auto m : attention_mask) n += m;
    return n;
}

EncoderInput build_input(const Record& record, const AspectSchema& schema,
                         const Vocabulary& vocab, TemplateMode mode, int max_len) {
    const int k = static_cast<int>(schema.k());
    if (vocab.k != k) fail("build_input: vocabulary built for k=" + std::to_string(vocab.k) +
                           ", schema has k=" + std::to_string(k));
    if (record.aspects.size() != schema.k())
        fail("build_input: record '" + record.id + "' aspects do not match schema");
    const int skeleton = k + 4;  // [CLS], k indicators, [SEP], [C], [SEP]
    if (max_len < skeleton) fail("build_input: max_len must be >= k+4");

    const bool blank_aspects = mode != TemplateMode::with_aspects;
    std::vector<std::vector<int>> aspect_ids(static_cast<size_t>(k));
    int total_aspect = 0;
    if (!blank_aspects) {
        for (int j = 0; j < k; ++j) {
            for (const auto& t : tokenize(record.aspects[static_cast<size_t>(j)]))
                aspect_ids[static_cast<size_t>(j)].push_back(vocab.id(t));
            total_aspect += static_cast<int>(aspect_ids[static_cast<size_t>(j)].size());
        }
    }
    std::vector<int> content_ids;
    for (const auto& t : tokenize(record.content)) content_ids.push_back(vocab.id(t));

    // Content tail goes first, then aspect tails (last aspect backward).
    int budget = max_len - skeleton;
    int keep_content = std::min<int>(static_cast<int>(content_ids.size()),
                                     std::max(0, budget - total_aspect));
    content_ids.resize(static_cast<size_t>(keep_content));
    int over = total_aspect + keep_content - budget;
    for (int j = k - 1; j >= 0 && over > 0; --j) {
        auto& ids = aspect_ids[static_cast<size_t>(j)];
        int drop = std::min<int>(static_cast<int>(ids.size()), over);
        ids.resize(ids.size() - static_cast<size_t>(drop));
        over -= drop;
    }

    EncoderInput input;
    auto push = [&](int id, Role role, int aj) {
        input.ids.push_back(id);
        input.roles.push_back(role);
        input.aspect_index.push_back(aj);
        input.attention_mask.push_back(role == Role::pad ? 0 : 1);
    };
    push(Vocabulary::cls_id, Role::special, -1);
    for (int j = 0; j < k; ++j) {
        push(vocab.a_id(j), Role::indicator, j);
        for (int id : aspect_ids[static_cast<size_t>(j)]) push(id, Role::aspect, j);
    }
    push(Vocabulary::sep_id, Role::special, -1);
    push(Vocabulary::c_id, Role::indicator, -1);
    for (int id : content_ids) push(id, Role::content, -1);
    push(Vocabulary::sep_id, Role::special, -1);
    while (input.length() < max_len) push(Vocabulary::pad_id, Role::pad, -1);
    return input;
}

std::pair<EncoderInput, MaskingPlan> sample_masking(const EncoderInput& input,
                                                    const MaskScheme& scheme,
                                                    const Vocabulary& vocab, Rng& rng) {
    if (scheme.content_ratio < 0.0 || scheme.content_ratio > 1.0 || scheme.aspect_ratio < 0.0 ||
        scheme.aspect_ratio > 1.0)
        fail("sample_masking: mask ratios must be in [0, 1]");

    EncoderInput corrupted = input;
    MaskingPlan plan;
    const int n_special = vocab.n_special();
    const int n_regular = vocab.size() - n_special;
    for (int pos = 0; pos < input.length(); ++pos) {
        Role role = input.roles[static_cast<size_t>(pos)];
        double ratio;
        if (role == Role::content)
            ratio = scheme.content_ratio;
        else if (role == Role::aspect)
            ratio = scheme.aspect_ratio;
        else
            continue;
        if (rng.uniform() >= ratio) continue;

        MaskAction action = MaskAction::mask;
        if (scheme.policy == ReplacePolicy::bert_80_10_10) {
            double u = rng.uniform();
            if (u < 0.8)
                action = MaskAction::mask;
            else if (u < 0.9)
                action = n_regular > 0 ? MaskAction::random : MaskAction::mask;
            else
                action = MaskAction::keep;
        }
        int original = input.ids[static_cast<size_t>(pos)];
        switch (action) {
            case MaskAction::mask:
                corrupted.ids[static_cast<size_t>(pos)] = Vocabulary::mask_id;
                break;
            case MaskAction::random:
                corrupted.ids[static_cast<size_t>(pos)] =
                    n_special + static_cast<int>(rng.bounded(static_cast<size_t>(n_regular)));
                break;
            case MaskAction::keep:
                break;
        }
        plan.positions.push_back(pos);
        plan.labels.push_back(original);
        plan.actions.push_back(action);
    }
    return {std::move(corrupted), std::move(plan)};
}

}  // namespace attempt
