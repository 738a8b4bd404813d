#include "attempt/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>

#include "attempt/util.hpp"

namespace attempt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Cuts a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& line) {
    bool in_basic = false, in_literal = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_basic) {
            if (c == '\\') ++i;
            else if (c == '"') in_basic = false;
        } else if (in_literal) {
            if (c == '\'') in_literal = false;
        } else if (c == '"') {
            in_basic = true;
        } else if (c == '\'') {
            in_literal = true;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

json parse_toml_scalar(const std::string& raw, size_t line_no) {
    std::string v = trim(raw);
    if (v.empty()) fail("toml:" + std::to_string(line_no) + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            fail("toml:" + std::to_string(line_no) + ": unterminated string");
        std::string out;
        for (size_t i = 1; i + 1 < v.size(); ++i) {
            char c = v[i];
            if (c == '\\' && i + 2 < v.size() + 1) {
                char e = v[++i];
                switch (e) {
                    case 'n': out.push_back('\n'); break;
                    case 't': out.push_back('\t'); break;
                    case '"': out.push_back('"'); break;
                    case '\\': out.push_back('\\'); break;
                    default:
                        fail("toml:" + std::to_string(line_no) + ": unsupported escape \\" +
                             std::string(1, e));
                }
            } else {
                out.push_back(c);
            }
        }
        return json(out);
    }
    if (v.front() == '\'') {
        if (v.size() < 2 || v.back() != '\'')
            fail("toml:" + std::to_string(line_no) + ": unterminated string");
        return json(v.substr(1, v.size() - 2));
    }
    if (v == "true") return json(true);
    if (v == "false") return json(false);

    // Numbers; TOML underscores between digits are dropped.
    std::string digits;
    for (size_t i = 0; i < v.size(); ++i) {
        if (v[i] == '_' && i > 0 && i + 1 < v.size() && std::isdigit(v[i - 1]) &&
            std::isdigit(v[i + 1]))
            continue;
        digits.push_back(v[i]);
    }
    try {
        size_t used = 0;
        if (digits.find_first_of(".eE") == std::string::npos ||
        	(digits.size() > 1 && (digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'b')))) {
            long long i = std::stoll(digits, &used, 0);
            if (used == digits.size()) return json(i);
        }
        double d = std::stod(digits, &used);
        if (used == digits.size()) return json(d);
    } catch (const std::exception&) {
    }
    fail("toml:" + std::to_string(line_no) + ": cannot parse value '" + v + "'");
}

json parse_toml_value(const std::string& raw, size_t line_no) {
    std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']')
            fail("toml:" + std::to_string(line_no) + ": arrays must close on the same line");
        json arr = json::array();
        std::string body = v.substr(1, v.size() - 2);
        std::string cur;
        bool in_basic = false, in_literal = false;
        auto flush = [&]() {
            std::string t = trim(cur);
            if (!t.empty()) arr.push_back(parse_toml_scalar(t, line_no));
            cur.clear();
        };
        for (char c : body) {
            if (in_basic) {
                cur.push_back(c);
                if (c == '"') in_basic = false;
            } else if (in_literal) {
                cur.push_back(c);
                if (c == '\'') in_literal = false;
            } else if (c == ',') {
                flush();
            } else {
                if (c == '"') in_basic = true;
                if (c == '\'') in_literal = true;
                cur.push_back(c);
            }
        }
        flush();
        return arr;
    }
    return parse_toml_scalar(v, line_no);
}

std::vector<std::string> split_dotted(const std::string& key, size_t line_no) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : key) {
        if (c == '.') {
            if (cur.empty()) fail("toml:" + std::to_string(line_no) + ": empty key segment");
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (trim(cur).empty()) fail("toml:" + std::to_string(line_no) + ": empty key segment");
    parts.push_back(trim(cur));
    return parts;
}

}  // namespace

json parse_toml(const std::string& text) {
    json root = json::object();
    json* table = &root;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = trim(strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') fail("toml:" + std::to_string(line_no) + ": bad table header");
            auto parts = split_dotted(trim(s.substr(1, s.size() - 2)), line_no);
            table = &root;
            for (const auto& p : parts) table = &(*table)[p];
            if (!table->is_object() && !table->is_null())
                fail("toml:" + std::to_string(line_no) + ": table redefines a value");
            if (table->is_null()) *table = json::object();
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos)
            fail("toml:" + std::to_string(line_no) + ": expected key = value");
        auto parts = split_dotted(trim(s.substr(0, eq)), line_no);
        json* target = table;
        for (size_t i = 0; i + 1 < parts.size(); ++i) target = &(*target)[parts[i]];
        (*target)[parts.back()] = parse_toml_value(s.substr(eq + 1), line_no);
    }
    return root;
}

json load_config_file(const std::string& path) {
    if (!file_exists(path)) fail("config file not found: " + path);
    std::string text = read_file(path);
    std::string ext = fs::path(path).extension().string();
    if (ext == ".json") return json::parse(text);
    if (ext == ".toml") return parse_toml(text);
    fail("config file must end in .json or .toml: " + path);
}

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ReplacePolicy replace_policy_from_string(const std::string& s) {
    if (s == "bert" || s == "bert_80_10_10") return ReplacePolicy::bert_80_10_10;
    if (s == "mask_only") return ReplacePolicy::mask_only;
    fail("unknown replace_policy '" + s + "' (expected bert or mask_only)");
}

std::string to_string(ReplacePolicy p) {
    return p == ReplacePolicy::bert_80_10_10 ? "bert" : "mask_only";
}

PretrainScheme scheme_from_json(const json& j) {
    PretrainScheme s;
    if (j.contains("scheme")) s.mode = scheme_mode_from_string(j.at("scheme").get<std::string>());
    get_if(j, "content_mask_ratio_item", s.content_mask_ratio_item);
    get_if(j, "content_mask_ratio_query", s.content_mask_ratio_query);
    get_if(j, "aspect_mask_ratio", s.aspect_mask_ratio);
    get_if(j, "lambda", s.lambda_weight);
    get_if(j, "enable_mlm", s.enable_mlm);
    get_if(j, "enable_a2c", s.enable_a2c);
    get_if(j, "enable_c2a", s.enable_c2a);
    if (j.contains("replace_policy"))
        s.policy = replace_policy_from_string(j.at("replace_policy").get<std::string>());
    return s;
}

TrainConfig train_from_json(const json& j, const TrainConfig& defaults) {
    TrainConfig t = defaults;
    get_if(j, "learning_rate", t.learning_rate);
    get_if(j, "epochs", t.epochs);
    get_if(j, "batch_size", t.batch_size);
    get_if(j, "warmup_fraction", t.warmup_fraction);
    get_if(j, "checkpoint_every", t.checkpoint_every);
    get_if(j, "max_len", t.max_len);
    t.scheme = scheme_from_json(j);
    return t;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty()) fail("config: seeds must be non-empty");
    if (workdir.empty()) fail("config: workdir must be set");
    if (data.aspects.empty()) fail("config: data.aspects must list at least one aspect name");
    parse_metric(select_metric);
    if (eval.recall_ks.empty()) fail("config: eval.recall_ks must be non-empty");
    for (int k : eval.recall_ks)
        if (k < 1) fail("config: recall cutoffs must be >= 1");
    if (eval.ndcg_k < 1) fail("config: eval.ndcg_k must be >= 1");
    if (eval.run_depth < std::max({eval.ndcg_k, *std::max_element(eval.recall_ks.begin(),
                                                                  eval.recall_ks.end())}))
        fail("config: eval.run_depth must cover the largest metric cutoff");
}

ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig cfg;
    get_if(j, "workdir", cfg.workdir);
    get_if(j, "seeds", cfg.seeds);
    get_if(j, "select_metric", cfg.select_metric);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        get_if(d, "items", cfg.data.items);
        get_if(d, "queries", cfg.data.queries);
        get_if(d, "qrels", cfg.data.qrels);
        get_if(d, "splits", cfg.data.splits);
        get_if(d, "aspects", cfg.data.aspects);
    }
    if (j.contains("synth")) {
        cfg.has_synth = true;
        const auto& s = j.at("synth");
        get_if(s, "seed", cfg.synth_seed);
        get_if(s, "n_categories", cfg.synth.n_categories);
        get_if(s, "n_brands", cfg.synth.n_brands);
        get_if(s, "words_per_category", cfg.synth.words_per_category);
        get_if(s, "n_noise_words", cfg.synth.n_noise_words);
        get_if(s, "n_items", cfg.synth.n_items);
        get_if(s, "n_queries", cfg.synth.n_queries);
        get_if(s, "content_len_min", cfg.synth.content_len_min);
        get_if(s, "content_len_max", cfg.synth.content_len_max);
        get_if(s, "aspect_dropout", cfg.synth.aspect_dropout);
        get_if(s, "judged_irrelevant", cfg.synth.judged_irrelevant);
        get_if(s, "split_fractions", cfg.synth.split_fractions);
        if (cfg.data.aspects.empty()) cfg.data.aspects = {"category", "brand"};
    }
    if (j.contains("vocab")) {
        get_if(j.at("vocab"), "min_freq", cfg.vocab.min_freq);
        get_if(j.at("vocab"), "max_size", cfg.vocab.max_size);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        get_if(m, "hidden_dim", cfg.model.hidden_dim);
        get_if(m, "n_layers", cfg.model.n_layers);
        get_if(m, "n_heads", cfg.model.n_heads);
        get_if(m, "ffn_dim", cfg.model.ffn_dim);
        get_if(m, "max_len", cfg.model.max_len);
        get_if(m, "dropout", cfg.model.dropout_prob);
    }
    {
        TrainConfig pre_defaults;
        pre_defaults.learning_rate = 1e-3;
        pre_defaults.epochs = 4;
        pre_defaults.batch_size = 32;
        cfg.pretrain = train_from_json(j.contains("pretrain") ? j.at("pretrain") : json::object(),
                                       pre_defaults);
        TrainConfig ft_defaults;
        ft_defaults.learning_rate = 1e-4;
        ft_defaults.epochs = 8;
        ft_defaults.batch_size = 16;
        cfg.finetune = train_from_json(j.contains("finetune") ? j.at("finetune") : json::object(),
                                       ft_defaults);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        get_if(e, "recall_ks", cfg.eval.recall_ks);
        get_if(e, "ndcg_k", cfg.eval.ndcg_k);
        get_if(e, "run_depth", cfg.eval.run_depth);
        if (e.contains("gains")) {
            if (e.at("gains").is_string()) {
                if (e.at("gains").get<std::string>() != "esci")
                    fail("config: eval.gains must be \"esci\" or a 4-element array");
            } else {
                auto g = e.at("gains").get<std::vector<double>>();
                if (g.size() != 4) fail("config: eval.gains needs gains for E, S, C, I");
                for (double v : g)
                    if (!std::isfinite(v) || v < 0.0)
                        fail("config: gains must be finite and non-negative");
                cfg.eval.gains = GainMap{g[0], g[1], g[2], g[3]};
            }
        }
    }
    int max_cut = cfg.eval.ndcg_k;
    for (int k : cfg.eval.recall_ks) max_cut = std::max(max_cut, k);
    cfg.eval.run_depth = std::max(cfg.eval.run_depth, max_cut);
    cfg.validate();
    return cfg;
}

json to_json(const ExperimentConfig& cfg) {
    json j;
    j["workdir"] = cfg.workdir;
    j["seeds"] = cfg.seeds;
    j["select_metric"] = cfg.select_metric;
    j["data"] = {{"items", cfg.data.items},   {"queries", cfg.data.queries},
                 {"qrels", cfg.data.qrels},   {"splits", cfg.data.splits},
                 {"aspects", cfg.data.aspects}};
    if (cfg.has_synth)
        j["synth"] = {{"seed", cfg.synth_seed},
                      {"n_categories", cfg.synth.n_categories},
                      {"n_brands", cfg.synth.n_brands},
                      {"words_per_category", cfg.synth.words_per_category},
                      {"n_noise_words", cfg.synth.n_noise_words},
                      {"n_items", cfg.synth.n_items},
                      {"n_queries", cfg.synth.n_queries},
                      {"content_len_min", cfg.synth.content_len_min},
                      {"content_len_max", cfg.synth.content_len_max},
                      {"aspect_dropout", cfg.synth.aspect_dropout},
                      {"judged_irrelevant", cfg.synth.judged_irrelevant},
                      {"split_fractions", cfg.synth.split_fractions}};
    j["vocab"] = {{"min_freq", cfg.vocab.min_freq}, {"max_size", cfg.vocab.max_size}};
    j["model"] = {{"hidden_dim", cfg.model.hidden_dim}, {"n_layers", cfg.model.n_layers},
                  {"n_heads", cfg.model.n_heads},       {"ffn_dim", cfg.model.ffn_dim},
                  {"max_len", cfg.model.max_len},       {"dropout", cfg.model.dropout_prob}};
    auto train_json = [](const TrainConfig& t) {
        return json{{"learning_rate", t.learning_rate},
                    {"epochs", t.epochs},
                    {"batch_size", t.batch_size},
                    {"warmup_fraction", t.warmup_fraction},
                    {"checkpoint_every", t.checkpoint_every},
                    {"max_len", t.max_len},
                    {"scheme", to_string(t.scheme.mode)},
                    {"content_mask_ratio_item", t.scheme.content_mask_ratio_item},
                    {"content_mask_ratio_query", t.scheme.content_mask_ratio_query},
                    {"aspect_mask_ratio", t.scheme.aspect_mask_ratio},
                    {"lambda", t.scheme.lambda_weight},
                    {"replace_policy", to_string(t.scheme.policy)},
                    {"enable_mlm", t.scheme.enable_mlm},
                    {"enable_a2c", t.scheme.enable_a2c},
                    {"enable_c2a", t.scheme.enable_c2a}};
    };
    j["pretrain"] = train_json(cfg.pretrain);
    j["finetune"] = train_json(cfg.finetune);
    j["eval"] = {{"recall_ks", cfg.eval.recall_ks},
                 {"ndcg_k", cfg.eval.ndcg_k},
                 {"run_depth", cfg.eval.run_depth},
                 {"gains", {cfg.eval.gains.e, cfg.eval.gains.s, cfg.eval.gains.c,
                            cfg.eval.gains.i}}};
    return j;
}

std::string config_hash8(const ExperimentConfig& cfg) {
    json j = to_json(cfg);
    j.erase("seeds");    // appended to artifact names separately
    j.erase("workdir");  // where artifacts land, not what they are
    return to_hex(fnv1a64(j.dump())).substr(8);
}

}  // namespace attempt
