#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "relight/adam.hpp"
#include "relight/prnet.hpp"

namespace relight {

inline constexpr int kCheckpointVersion = 1;

// A checkpoint directory holds manifest.json (format version, network config,
// tensor names, shapes and byte offsets, CRC-32 of the blob) and params.bin,
// a little-endian float32 blob. Optimizer moments, when present, are stored
// in the same blob after the parameters.
struct Checkpoint {
  PRNetConfig config;
  ParameterSet<float> params;
  std::optional<AdamState<float>> optimizer;
  // Free-form training bookkeeping (for example the next step index),
  // stored verbatim as a JSON value.
  std::string training_state = "{}";
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
// Throws IoError for missing or corrupt files and InvalidArgument when the
// stored tensors disagree with the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace relight
