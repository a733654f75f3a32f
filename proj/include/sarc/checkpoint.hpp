#pragma once

#include "sarc/layers.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <utility>

namespace sarc {

inline constexpr uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary container: magic, version, JSON config blob, then each named tensor
// with explicit shape and little-endian 64-bit float payload. A version
// mismatch is a hard error.
void save_container(const std::string& path, const nlohmann::json& config,
                    const ParamMap& tensors);
std::pair<nlohmann::json, ParamMap> load_container(const std::string& path);

void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

nlohmann::json model_config_json(const ModelParams& params);
void model_config_from_json(const nlohmann::json& j, ModelParams& params);

// Precomputed per-token embedding files: JSONL, one record per sample id
// mapping to a T x D matrix.
void save_embeddings(const std::string& path, const std::map<std::string, Mat>& embeddings);
std::map<std::string, Mat> load_embeddings(const std::string& path);

}  // namespace sarc
