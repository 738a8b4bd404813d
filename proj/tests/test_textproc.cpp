#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "attempt/textproc.hpp"
#include "attempt/util.hpp"

using namespace attempt;
namespace fs = std::filesystem;

namespace {

Record make_record(std::string content, std::vector<std::string> aspects,
                   RecordKind kind = RecordKind::item) {
    Record r;
    r.id = "r";
    r.kind = kind;
    r.content = std::move(content);
    r.aspects = std::move(aspects);
    return r;
}

AspectSchema schema3() {
    AspectSchema s;
    s.names = {"brand", "color", "cate1"};
    return s;
}

Vocabulary vocab_for(const std::vector<Record>& records, size_t k, int min_freq = 1,
                     int max_size = 1000) {
    return build_vocab({std::span<const Record>(records)}, k, min_freq, max_size);
}

std::vector<std::string> decode(const Vocabulary& v, const std::vector<int>& ids) {
    std::vector<std::string> out;
    for (int id : ids) out.push_back(v.tokens[static_cast<size_t>(id)]);
    return out;
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on whitespace/punctuation") {
    CHECK(tokenize("Air Max-90") == std::vector<std::string>{"air", "max", "90"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("café café") == std::vector<std::string>{"café", "café"});
    CHECK(tokenize("  a,,b..c  ") == std::vector<std::string>{"a", "b", "c"});
    CHECK(tokenize("nike air") == std::vector<std::string>{"nike", "air"});
    // Stable under repetition.
    CHECK(tokenize("café café") == tokenize("café café"));
}

TEST_CASE("build_vocab: forced ordering of specials then frequency") {
    std::vector<Record> records{make_record("a a b", {"", ""})};
    Vocabulary v = vocab_for(records, 2);
    REQUIRE(v.size() == 10);
    CHECK(v.tokens ==
          std::vector<std::string>{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[C]", "[A_1]",
                                   "[A_2]", "a", "b"});
    CHECK(v.id("a") == 8);
    CHECK(v.id("b") == 9);
    CHECK(v.id("zzz") == Vocabulary::unk_id);
}

TEST_CASE("build_vocab: min_freq excludes rare tokens which then map to UNK") {
    std::vector<Record> records{make_record("a a b", {"", ""})};
    Vocabulary v = vocab_for(records, 2, 2);
    CHECK(v.id("a") == 8);
    CHECK(v.id("b") == Vocabulary::unk_id);
}

TEST_CASE("build_vocab: identical corpora give identical fingerprints") {
    std::vector<Record> records{make_record("nike air max", {"nike", "red"})};
    Vocabulary a = vocab_for(records, 2);
    Vocabulary b = vocab_for(records, 2);
    CHECK(a.fingerprint == b.fingerprint);
    std::vector<Record> other{make_record("nike air", {"nike", "red"})};
    CHECK(vocab_for(other, 2).fingerprint != a.fingerprint);
}

TEST_CASE("build_vocab rejects max_size below the special count") {
    std::vector<Record> records{make_record("a", {"", ""})};
    CHECK_THROWS_AS(vocab_for(records, 2, 1, 7), std::runtime_error);
}

TEST_CASE("vocab round-trips through vocab.json with fingerprint check") {
    fs::path tmp = fs::temp_directory_path() / ("attempt_vocab_" + std::to_string(::getpid()));
    fs::create_directories(tmp);
    std::vector<Record> records{make_record("nike air max 90", {"nike", "red"})};
    Vocabulary v = vocab_for(records, 2);
    save_vocab((tmp / "vocab.json").string(), v);
    Vocabulary loaded = load_vocab((tmp / "vocab.json").string());
    CHECK(loaded.tokens == v.tokens);
    CHECK(loaded.k == v.k);
    CHECK(loaded.fingerprint == v.fingerprint);
    fs::remove_all(tmp);
}

TEST_CASE("build_input emits the indicator template with empty aspects kept") {
    AspectSchema schema = schema3();
    std::vector<Record> records{
        make_record("air max 90", {"nike", "", "running shoes"}),
    };
    Vocabulary v = vocab_for(records, schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, 32);

    std::vector<std::string> expect{"[CLS]", "[A_1]", "nike", "[A_2]", "[A_3]", "running",
                                    "shoes", "[SEP]", "[C]",  "air",   "max",   "90",
                                    "[SEP]"};
    auto got = decode(v, in.ids);
    got.resize(expect.size());
    CHECK(got == expect);
    CHECK(in.length() == 32);
    CHECK(in.real_length() == static_cast<int>(expect.size()));
    CHECK(in.roles[0] == Role::special);
    CHECK(in.roles[1] == Role::indicator);
    CHECK(in.roles[2] == Role::aspect);
    CHECK(in.aspect_index[2] == 0);
    CHECK(in.roles[8] == Role::indicator);
    CHECK(in.roles[9] == Role::content);
    CHECK(in.roles[31] == Role::pad);
    CHECK(in.attention_mask[12] == 1);
    CHECK(in.attention_mask[13] == 0);
}

TEST_CASE("build_input: query encoding blanks every aspect but keeps indicators") {
    AspectSchema schema = schema3();
    std::vector<Record> records{
        make_record("nike air", {"nike", "red", "shoes"}, RecordKind::query),
    };
    Vocabulary v = vocab_for(records, schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::aspects_empty, 16);
    std::vector<std::string> expect{"[CLS]", "[A_1]", "[A_2]", "[A_3]", "[SEP]",
                                    "[C]",   "nike",  "air",   "[SEP]"};
    auto got = decode(v, in.ids);
    got.resize(expect.size());
    CHECK(got == expect);

    // Idempotence: blanking an already-blank record changes nothing.
    Record blanked = records[0];
    for (auto& a : blanked.aspects) a.clear();
    EncoderInput again = build_input(blanked, schema, v, TemplateMode::aspects_empty, 16);
    CHECK(again.ids == in.ids);
    CHECK(again.roles == in.roles);
    CHECK(again.attention_mask == in.attention_mask);
}

TEST_CASE("build_input: minimal budget keeps the skeleton only") {
    AspectSchema schema = schema3();
    std::vector<Record> records{make_record("air max 90", {"nike", "red", "shoes"})};
    Vocabulary v = vocab_for(records, schema.k());
    const int k = static_cast<int>(schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, k + 4);
    std::vector<std::string> expect{"[CLS]", "[A_1]", "[A_2]", "[A_3]", "[SEP]", "[C]", "[SEP]"};
    CHECK(decode(v, in.ids) == expect);
    CHECK_THROWS_AS(build_input(records[0], schema, v, TemplateMode::with_aspects, k + 3),
                    std::runtime_error);
}

TEST_CASE("build_input: content is truncated before aspects, both from the tail") {
    AspectSchema schema = schema3();
    std::vector<Record> records{make_record("w1 w2 w3 w4 w5", {"b1 b2", "c1", "d1 d2"})};
    Vocabulary v = vocab_for(records, schema.k());
    // Skeleton is 7; budget 6 leaves all 5 aspect tokens plus one content token.
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, 13);
    std::vector<std::string> expect{"[CLS]", "[A_1]", "b1", "b2",  "[A_2]", "c1", "[A_3]",
                                    "d1",    "d2",    "[SEP]", "[C]", "w1", "[SEP]"};
    CHECK(decode(v, in.ids) == expect);
    // Budget 4: no content, aspect tail dropped (d2 first).
    EncoderInput in2 = build_input(records[0], schema, v, TemplateMode::with_aspects, 11);
    std::vector<std::string> expect2{"[CLS]", "[A_1]", "b1", "b2", "[A_2]", "c1", "[A_3]",
                                     "d1",    "[SEP]", "[C]", "[SEP]"};
    CHECK(decode(v, in2.ids) == expect2);
}

TEST_CASE("build_input: content roles decode back to the content tokens") {
    AspectSchema schema = schema3();
    std::vector<Record> records{make_record("air max 90 café", {"nike", "", "shoes"})};
    Vocabulary v = vocab_for(records, schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, 32);
    std::vector<std::string> content_tokens;
    for (int p = 0; p < in.length(); ++p)
        if (in.roles[static_cast<size_t>(p)] == Role::content)
            content_tokens.push_back(v.tokens[static_cast<size_t>(in.ids[p])]);
    CHECK(content_tokens == tokenize(records[0].content));
}

TEST_CASE("sample_masking: zero ratios select nothing, full ratios select everything maskable") {
    AspectSchema schema = schema3();
    std::vector<Record> records{make_record("air max 90", {"nike", "red", "shoes"})};
    Vocabulary v = vocab_for(records, schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, 24);

    Rng rng(1);
    auto [zero_corrupted, zero_plan] = sample_masking(in, {0.0, 0.0}, v, rng);
    CHECK(zero_plan.size() == 0);
    CHECK(zero_corrupted.ids == in.ids);

    auto [full_corrupted, full_plan] = sample_masking(in, {1.0, 1.0}, v, rng);
    size_t maskable = 0;
    for (auto role : in.roles)
        if (role == Role::content || role == Role::aspect) ++maskable;
    CHECK(full_plan.size() == maskable);
    for (int pos : full_plan.positions) {
        Role role = in.roles[static_cast<size_t>(pos)];
        CHECK((role == Role::content || role == Role::aspect));
    }
    // Indicators, specials, pads untouched.
    for (int p = 0; p < in.length(); ++p) {
        Role role = in.roles[static_cast<size_t>(p)];
        if (role != Role::content && role != Role::aspect)
            CHECK(full_corrupted.ids[static_cast<size_t>(p)] == in.ids[static_cast<size_t>(p)]);
    }
}

TEST_CASE("sample_masking: ratio out of range is an error") {
    AspectSchema schema = schema3();
    std::vector<Record> records{make_record("air", {"nike", "", ""})};
    Vocabulary v = vocab_for(records, schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, 16);
    Rng rng(1);
    CHECK_THROWS_AS(sample_masking(in, {1.5, 0.0}, v, rng), std::runtime_error);
    CHECK_THROWS_AS(sample_masking(in, {0.1, -0.2}, v, rng), std::runtime_error);
}

TEST_CASE("sample_masking: plans restore the original sequence and never touch "
          "special/indicator/pad roles over many samples") {
    AspectSchema schema = schema3();
    std::vector<Record> records{make_record("air max 90 runner café shoe lace",
                                            {"nike sport", "deep red", "running shoes"})};
    Vocabulary v = vocab_for(records, schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, 28);
    Rng rng(99);
    for (int trial = 0; trial < 10000; ++trial) {
        auto [corrupted, plan] = sample_masking(in, {0.3, 0.6}, v, rng);
        int prev = -1;
        for (size_t i = 0; i < plan.size(); ++i) {
            int pos = plan.positions[i];
            CHECK(pos > prev);
            prev = pos;
            Role role = in.roles[static_cast<size_t>(pos)];
            REQUIRE((role == Role::content || role == Role::aspect));
            CHECK(plan.labels[i] == in.ids[static_cast<size_t>(pos)]);
        }
        // Reconstruct by writing labels back.
        EncoderInput restored = corrupted;
        for (size_t i = 0; i < plan.size(); ++i)
            restored.ids[static_cast<size_t>(plan.positions[i])] = plan.labels[i];
        REQUIRE(restored.ids == in.ids);
    }
}

TEST_CASE("sample_masking: empirical selection rates stay within 3 binomial sigma") {
    AspectSchema schema = schema3();
    std::vector<Record> records{make_record("w0 w1 w2 w3 w4 w5 w6 w7 w8 w9",
                                            {"a0 a1 a2", "b0 b1 b2", "c0 c1 c2 c3"})};
    Vocabulary v = vocab_for(records, schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, 32);

    size_t n_content = 0, n_aspect = 0;
    for (auto role : in.roles) {
        n_content += role == Role::content;
        n_aspect += role == Role::aspect;
    }
    REQUIRE(n_content == 10);
    REQUIRE(n_aspect == 10);

    for (double ratio : {0.15, 0.3, 0.6}) {
        Rng rng(static_cast<uint64_t>(ratio * 1000));
        const int trials = 10000;
        int64_t selected = 0;
        for (int t = 0; t < trials; ++t) {
            auto [corrupted, plan] = sample_masking(in, {ratio, ratio}, v, rng);
            selected += static_cast<int64_t>(plan.size());
        }
        double n = static_cast<double>(trials) * static_cast<double>(n_content + n_aspect);
        double phat = static_cast<double>(selected) / n;
        double sigma = std::sqrt(ratio * (1.0 - ratio) / n);
        CHECK(std::abs(phat - ratio) <= 3.0 * sigma);
    }
}

TEST_CASE("sample_masking: mask_only policy never keeps or randomizes") {
    AspectSchema schema = schema3();
    std::vector<Record> records{make_record("w0 w1 w2 w3 w4 w5 w6 w7", {"", "", ""})};
    Vocabulary v = vocab_for(records, schema.k());
    EncoderInput in = build_input(records[0], schema, v, TemplateMode::with_aspects, 24);
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        auto [corrupted, plan] =
            sample_masking(in, {0.5, 0.0, ReplacePolicy::mask_only}, v, rng);
        for (size_t i = 0; i < plan.size(); ++i) {
            CHECK(plan.actions[i] == MaskAction::mask);
            CHECK(corrupted.ids[static_cast<size_t>(plan.positions[i])] == Vocabulary::mask_id);
        }
    }
}
