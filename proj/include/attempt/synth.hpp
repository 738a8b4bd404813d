#pragma once

#include <cstdint>
#include <vector>

#include "attempt/corpus.hpp"

namespace attempt {

// Seeded generator for a small multi-aspect product corpus. Content words are
// drawn from per-category pools with deliberate bleed into the adjacent
// category, so the category aspect carries disambiguating signal that content
// alone does not.
struct SynthConfig {
    int n_categories = 8;
    int n_brands = 16;
    int words_per_category = 100;
    int n_noise_words = 200;
    int n_items = 2000;
    int n_queries = 600;
    // Short contents keep per-query E sets small and leave the category
    // aspect carrying signal the content alone does not.
    int content_len_min = 3;
    int content_len_max = 6;
    double aspect_dropout = 0.1;     // per-aspect chance of an empty value
    int judged_irrelevant = 20;      // I-labelled sample size per query
    std::vector<double> split_fractions = {0.8, 0.1, 0.1};
};

struct SynthData {
    AspectSchema schema;  // {"category", "brand"}
    std::vector<Record> items;
    std::vector<Record> queries;
    std::vector<Qrel> qrels;
    SplitSpec split;
    // Generator-side ground truth, handy for validating label construction.
    std::vector<int> item_category;  // per item
    std::vector<int> query_anchor;   // anchor item index per query
};

SynthData generate_synthetic(const SynthConfig& cfg, uint64_t seed);

}  // namespace attempt
