#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxseq/autocomplete.hpp"
#include "voxseq/dataset.hpp"
#include "voxseq/errors.hpp"
#include "voxseq/flow.hpp"
#include "voxseq/models.hpp"

namespace voxseq {

inline constexpr int kConfigSchemaVersion = 1;

// Everything a pipeline run depends on; the scale preset supplies defaults
// and a config file only has to name what it changes.
struct RunConfig {
  std::string scale = "desk";
  GridDims grid{};
  std::size_t dataset_size = 500;
  std::uint64_t dataset_seed = 7;
  int min_raw_len = 100;
  int max_len = 40;  // subsampling target; the model holds max_len + 1 positions
  double train_fraction = 6612.0 / 7296.0;

  nn::AttentionConfig attention{};
  double beta = 1.0;
  std::uint64_t model_seed = 1;
  TrainConfig train{};

  FlowConfig flow{};
  FlowTrainConfig flow_train{};

  RolloutConfig rollout{};
  std::vector<std::uint64_t> preference_seeds = {11, 12, 13};
  bool fid_diagonal = false;

  DatasetConfig dataset_config() const {
    DatasetConfig c;
    c.gym.dims = grid;
    c.min_raw_len = min_raw_len;
    c.max_subsampled_len = max_len;
    c.train_fraction = train_fraction;
    return c;
  }

  ModelConfig model_config(ModelKind kind) const {
    ModelConfig m;
    m.kind = kind;
    m.attention = attention;
    m.attention.input_dim = static_cast<int>(grid.volume());
    m.max_len = max_len + 1;
    m.beta = beta;
    m.seed = model_seed;
    return m;
  }

  FlowConfig flow_config() const {
    FlowConfig f = flow;
    f.dim = attention.model_dim;
    return f;
  }
};

inline nlohmann::json preset_json(const std::string& scale) {
  nlohmann::json j = {
      {"schema_version", kConfigSchemaVersion},
      {"scale", scale},
      {"grid", {{"nx", 10}, {"ny", 10}, {"nz", 10}}},
      {"dataset", {{"n", 500}, {"seed", 7}, {"min_raw_len", 100}, {"max_len", 40},
                   {"train_fraction", 6612.0 / 7296.0}}},
      {"model", {{"layers", 4}, {"heads", 8}, {"model_dim", 128}, {"beta", 1.0}, {"seed", 1}}},
      {"train", {{"epochs", 40}, {"batch_size", 8}, {"lr", 1e-3}, {"optimizer", "adam"}, {"grad_clip", 1.0},
                 {"seed", 1}}},
      {"flow", {{"couplings", 5}, {"hidden", 128}, {"seed", 2}}},
      {"flow_train", {{"epochs", 300}, {"batch_size", 64}, {"lr", 1e-3}, {"grad_clip", 5.0}, {"seed", 2}}},
      {"rollout", {{"prefix_len", 5}, {"horizon", 40}}},
      {"evaluation", {{"preference_seeds", {11, 12, 13}}, {"fid_diagonal", false}}},
  };
  if (scale == "full") {
    j["dataset"]["n"] = 10000;
    j["dataset"]["max_len"] = 82;
    j["model"]["model_dim"] = 2048;
    j["flow"]["hidden"] = 2048;
    j["rollout"]["horizon"] = 50;
    j["evaluation"]["fid_diagonal"] = true;
  } else if (scale != "desk") {
    throw UsageError("unknown scale '" + scale + "' (expected desk or full)");
  }
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& overrides, const std::string& scale_override = "") {
  try {
    std::string scale = scale_override;
    if (scale.empty()) scale = overrides.value("scale", std::string("desk"));
    nlohmann::json j = preset_json(scale);
    j.merge_patch(overrides);
    j["scale"] = scale;
    if (j.at("schema_version").get<int>() != kConfigSchemaVersion) {
      throw UsageError("unsupported config schema_version");
    }
    RunConfig c;
    c.scale = scale;
    c.grid = {j["grid"].at("nx").get<int>(), j["grid"].at("ny").get<int>(), j["grid"].at("nz").get<int>()};
    const auto& ds = j.at("dataset");
    c.dataset_size = ds.at("n").get<std::size_t>();
    c.dataset_seed = ds.at("seed").get<std::uint64_t>();
    c.min_raw_len = ds.at("min_raw_len").get<int>();
    c.max_len = ds.at("max_len").get<int>();
    c.train_fraction = ds.at("train_fraction").get<double>();
    const auto& m = j.at("model");
    c.attention.layers = m.at("layers").get<int>();
    c.attention.heads = m.at("heads").get<int>();
    c.attention.model_dim = m.at("model_dim").get<int>();
    c.attention.input_dim = static_cast<int>(c.grid.volume());
    c.beta = m.at("beta").get<double>();
    c.model_seed = m.at("seed").get<std::uint64_t>();
    const auto& t = j.at("train");
    c.train.epochs = t.at("epochs").get<int>();
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.lr = t.at("lr").get<double>();
    c.train.optimizer = t.at("optimizer").get<std::string>();
    c.train.grad_clip = t.at("grad_clip").get<double>();
    c.train.seed = t.at("seed").get<std::uint64_t>();
    const auto& f = j.at("flow");
    c.flow.couplings = f.at("couplings").get<int>();
    c.flow.hidden = f.at("hidden").get<int>();
    c.flow.seed = f.at("seed").get<std::uint64_t>();
    c.flow.dim = c.attention.model_dim;
    const auto& ft = j.at("flow_train");
    c.flow_train.epochs = ft.at("epochs").get<int>();
    c.flow_train.batch_size = ft.at("batch_size").get<int>();
    c.flow_train.lr = ft.at("lr").get<double>();
    c.flow_train.grad_clip = ft.at("grad_clip").get<double>();
    c.flow_train.seed = ft.at("seed").get<std::uint64_t>();
    const auto& r = j.at("rollout");
    c.rollout.prefix_len = r.at("prefix_len").get<std::size_t>();
    c.rollout.horizon = r.at("horizon").get<std::size_t>();
    const auto& e = j.at("evaluation");
    c.preference_seeds = e.at("preference_seeds").get<std::vector<std::uint64_t>>();
    c.fid_diagonal = e.at("fid_diagonal").get<bool>();
    c.attention.validate();
    c.rollout.validate();
    if (c.max_len < 2) throw UsageError("dataset.max_len must be >= 2");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"scale", c.scale},
          {"grid", {{"nx", c.grid.nx}, {"ny", c.grid.ny}, {"nz", c.grid.nz}}},
          {"dataset", {{"n", c.dataset_size}, {"seed", c.dataset_seed}, {"min_raw_len", c.min_raw_len},
                       {"max_len", c.max_len}, {"train_fraction", c.train_fraction}}},
          {"model", {{"layers", c.attention.layers}, {"heads", c.attention.heads},
                     {"model_dim", c.attention.model_dim}, {"beta", c.beta}, {"seed", c.model_seed}}},
          {"train", {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"lr", c.train.lr},
                     {"optimizer", c.train.optimizer}, {"grad_clip", c.train.grad_clip}, {"seed", c.train.seed}}},
          {"flow", {{"couplings", c.flow.couplings}, {"hidden", c.flow.hidden}, {"seed", c.flow.seed}}},
          {"flow_train", {{"epochs", c.flow_train.epochs}, {"batch_size", c.flow_train.batch_size},
                          {"lr", c.flow_train.lr}, {"grad_clip", c.flow_train.grad_clip},
                          {"seed", c.flow_train.seed}}},
          {"rollout", {{"prefix_len", c.rollout.prefix_len}, {"horizon", c.rollout.horizon}}},
          {"evaluation", {{"preference_seeds", c.preference_seeds}, {"fid_diagonal", c.fid_diagonal}}}};
}

inline RunConfig load_config(const std::filesystem::path& path, const std::string& scale_override = "") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, scale_override);
}

}  // namespace voxseq
