#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attempt/model.hpp"

namespace attempt {

// On disk: <dir>/manifest.json (config, tensor table, fingerprint, step,
// optional optimizer state) + <dir>/params.bin (raw little-endian f32,
// row-major, at the offsets the manifest lists). Round-trips bit-exactly.
struct Checkpoint {
    ModelConfig cfg;
    std::vector<std::pair<std::string, Tensor<float>>> params;
    std::string vocab_fingerprint;
    int64_t step = 0;
    // Optional Adam state, aligned with params when present.
    bool has_opt = false;
    int64_t opt_t = 0;
    std::vector<Tensor<float>> opt_m, opt_v;
};

Checkpoint checkpoint_from_model(const Model<float>& model, const std::string& fingerprint,
                                 int64_t step);
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

// Errors out when the checkpoint was written against a different vocabulary.
void require_fingerprint(const Checkpoint& ckpt, const std::string& active_fingerprint);

}  // namespace attempt
