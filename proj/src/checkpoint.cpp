#include "attempt/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "attempt/model_impl.hpp"
#include "attempt/util.hpp"

namespace attempt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json config_to_json(const ModelConfig& cfg) {
    return json{{"vocab_size", cfg.vocab_size},   {"hidden_dim", cfg.hidden_dim},
                {"n_layers", cfg.n_layers},       {"n_heads", cfg.n_heads},
                {"ffn_dim", cfg.ffn_dim},         {"max_len", cfg.max_len},
                {"dropout_prob", cfg.dropout_prob}, {"seed", cfg.seed},
                {"head_sizes", cfg.head_sizes}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.ffn_dim = j.at("ffn_dim").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.dropout_prob = j.at("dropout_prob").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.head_sizes = j.at("head_sizes").get<std::vector<int>>();
    return cfg;
}

void append_tensor(std::ofstream& bin, json& table, const std::string& name,
                   const Tensor<float>& t, int64_t& offset) {
    table.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    offset += static_cast<int64_t>(t.data.size() * sizeof(float));
}

Tensor<float> read_tensor(const std::string& payload, const json& entry) {
    Tensor<float> t(entry.at("shape").get<std::vector<int>>());
    int64_t offset = entry.at("offset").get<int64_t>();
    int64_t bytes = static_cast<int64_t>(t.data.size() * sizeof(float));
    if (offset < 0 || offset + bytes > static_cast<int64_t>(payload.size()))
        fail("checkpoint: manifest shape disagrees with payload length for tensor '" +
             entry.at("name").get<std::string>() + "'");
    std::memcpy(t.data.data(), payload.data() + offset, static_cast<size_t>(bytes));
    return t;
}

}  // namespace

Checkpoint checkpoint_from_model(const Model<float>& model, const std::string& fingerprint,
                                 int64_t step) {
    Checkpoint ckpt;
    ckpt.cfg = model.cfg;
    ckpt.vocab_fingerprint = fingerprint;
    ckpt.step = step;
    for (const auto& name : model.names) ckpt.params.emplace_back(name, model.values.at(name));
    return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
    Model<float> model = init_model<float>(ckpt.cfg);
    if (model.names.size() != ckpt.params.size())
        fail("checkpoint: parameter count does not match model config");
    for (size_t i = 0; i < ckpt.params.size(); ++i) {
        const auto& [name, tensor] = ckpt.params[i];
        auto it = model.values.find(name);
        if (it == model.values.end()) fail("checkpoint: unexpected tensor '" + name + "'");
        if (it->second.shape != tensor.shape)
            fail("checkpoint: shape mismatch for tensor '" + name + "'");
        it->second = tensor;
    }
    return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary | std::ios::trunc);
    if (!bin) fail("checkpoint: cannot write " + dir + "/params.bin");

    json tensors = json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : ckpt.params) append_tensor(bin, tensors, name, t, offset);

    json manifest = {{"config", config_to_json(ckpt.cfg)},
                     {"vocab_fingerprint", ckpt.vocab_fingerprint},
                     {"step", ckpt.step},
                     {"tensors", tensors},
                     {"payload_bytes", offset}};
    if (ckpt.has_opt) {
        json opt_tensors = json::array();
        for (size_t i = 0; i < ckpt.opt_m.size(); ++i)
            append_tensor(bin, opt_tensors, "adam_m." + ckpt.params[i].first, ckpt.opt_m[i],
                          offset);
        for (size_t i = 0; i < ckpt.opt_v.size(); ++i)
            append_tensor(bin, opt_tensors, "adam_v." + ckpt.params[i].first, ckpt.opt_v[i],
                          offset);
        manifest["opt"] = {{"t", ckpt.opt_t}, {"tensors", opt_tensors}};
        manifest["payload_bytes"] = offset;
    }
    bin.flush();
    if (!bin) fail("checkpoint: short write to " + dir + "/params.bin");
    write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& dir) {
    json manifest = json::parse(read_file((fs::path(dir) / "manifest.json").string()));
    std::string payload = read_file((fs::path(dir) / "params.bin").string());
    if (static_cast<int64_t>(payload.size()) != manifest.at("payload_bytes").get<int64_t>())
        fail("checkpoint: truncated params.bin in " + dir);

    Checkpoint ckpt;
    ckpt.cfg = config_from_json(manifest.at("config"));
    ckpt.vocab_fingerprint = manifest.at("vocab_fingerprint").get<std::string>();
    ckpt.step = manifest.at("step").get<int64_t>();
    for (const auto& entry : manifest.at("tensors"))
        ckpt.params.emplace_back(entry.at("name").get<std::string>(),
                                 read_tensor(payload, entry));
    if (manifest.contains("opt")) {
        ckpt.has_opt = true;
        ckpt.opt_t = manifest.at("opt").at("t").get<int64_t>();
        const auto& entries = manifest.at("opt").at("tensors");
        size_t n = ckpt.params.size();
        if (entries.size() != 2 * n) fail("checkpoint: malformed optimizer state in " + dir);
        for (size_t i = 0; i < n; ++i) ckpt.opt_m.push_back(read_tensor(payload, entries[i]));
        for (size_t i = 0; i < n; ++i) ckpt.opt_v.push_back(read_tensor(payload, entries[n + i]));
    }
    return ckpt;
}

void require_fingerprint(const Checkpoint& ckpt, const std::string& active_fingerprint) {
    if (ckpt.vocab_fingerprint != active_fingerprint)
        fail("checkpoint: vocabulary fingerprint mismatch (checkpoint " + ckpt.vocab_fingerprint +
             ", active " + active_fingerprint + ")");
}

}  // namespace attempt
