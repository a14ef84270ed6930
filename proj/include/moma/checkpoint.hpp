#pragma once

#include <string>
#include <utility>
#include <vector>

#include "moma/vit.hpp"

namespace moma::io {

inline constexpr uint32_t kCheckpointVersion = 1;

// Binary container: "MOMA" magic, u32 version, JSON header (config, role,
// parameter manifest with byte offsets), little-endian f32 payload, CRC32 of
// the payload. Save -> load round-trips are bitwise exact.
struct NamedTensors {
    model::ViTConfig config;
    std::string role;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_named(const NamedTensors& bundle, const std::string& path);
NamedTensors load_named(const std::string& path);

// Whole-model snapshot; role is taken from the weights.
void save_checkpoint(const model::ModelWeights& weights, const std::string& path);

// Rebuilds ModelWeights from a file. Loaded teacher-tagged weights come back
// frozen. When expected is given, any config difference is an error naming
// both configs.
model::ModelWeights load_checkpoint(const std::string& path,
                                    const model::ViTConfig* expected = nullptr);

}  // namespace moma::io
