#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "kiwiqe/qe_model.hpp"

namespace kiwiqe {

// JSON checkpoint: format tag, version, model and loss configuration, the
// vocabulary and every named parameter tensor as {shape, data}.
struct Checkpoint {
  ModelConfig config;
  LossConfig loss;
  Vocabulary vocab;
  ParameterSet params;

  QeModel model() const { return QeModel(config, vocab, params); }
};

inline constexpr int kCheckpointVersion = 1;

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json loss_config_to_json(const LossConfig& config);
LossConfig loss_config_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const QeModel& model, const LossConfig& loss);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const QeModel& model, const LossConfig& loss);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kiwiqe
