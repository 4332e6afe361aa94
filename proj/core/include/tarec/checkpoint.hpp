#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tarec/nets.hpp"

namespace tarec {

/// Binary layout: the 7 bytes "TAREC1\0", a little-endian u64 byte length,
/// that many bytes of UTF-8 JSON manifest, then every tensor's values as
/// little-endian IEEE-754 doubles in manifest order.
inline constexpr char kCheckpointMagic[7] = {'T', 'A', 'R', 'E', 'C', '1', '\0'};

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct CheckpointData {
  ModelConfig config;
  int steps = 0;  // T of the schedule the model was trained with
  std::string stage;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, Model& model, int steps,
                      const std::string& stage);
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into `model`, whose architecture must match. Throws
/// CheckpointError naming every missing or mis-shaped tensor.
void load_into(Model& model, const CheckpointData& data);

/// Reads and builds a model in one go; validates against `expected` when given.
Model load_model(const std::filesystem::path& path, const ModelConfig* expected = nullptr,
                 int* steps = nullptr);

}  // namespace tarec
