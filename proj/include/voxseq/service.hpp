#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "voxseq/autocomplete.hpp"
#include "voxseq/config.hpp"
#include "voxseq/dataset.hpp"
#include "voxseq/evaluate.hpp"
#include "voxseq/flow.hpp"
#include "voxseq/models.hpp"
#include "voxseq/nn/checkpoint.hpp"

namespace voxseq {

// Thrown while decoding a request; carries the HTTP status to answer with.
class ApiError : public Error {
 public:
  ApiError(int status, const std::string& what) : Error("api", what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline nlohmann::json state_to_api(const DesignState& s) {
  std::vector<int> codes;
  codes.reserve(s.rooms().size());
  for (RoomType r : s.rooms()) codes.push_back(room_code(r));
  const GridDims d = s.dims();
  return {{"dims", {{"nx", d.nx}, {"ny", d.ny}, {"nz", d.nz}}},
          {"rooms", codes},
          {"partition", to_json(s.partition())}};
}

// Shape problems are 422, anything structurally wrong is 400.
inline DesignState state_from_api(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("dims") || !j.contains("rooms") || !j["rooms"].is_array()) {
    throw ApiError(400, "design state needs 'dims' and a 'rooms' array");
  }
  GridDims d;
  try {
    d = {j["dims"].at("nx").get<int>(), j["dims"].at("ny").get<int>(), j["dims"].at("nz").get<int>()};
  } catch (const nlohmann::json::exception&) {
    throw ApiError(400, "dims must hold integer nx, ny, nz");
  }
  if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw ApiError(422, "grid dims must be positive");
  GridPartition partition = GridPartition::uniform(d);
  if (j.contains("partition") && !j["partition"].is_null()) {
    try {
      partition = partition_from_json(j["partition"]);
    } catch (const nlohmann::json::exception&) {
      throw ApiError(400, "partition must hold x, y and z size arrays");
    } catch (const Error& e) {
      throw ApiError(422, std::string("partition: ") + e.what());
    }
    if (!(partition.dims() == d)) throw ApiError(422, "partition does not match dims");
  }
  const auto& arr = j["rooms"];
  if (arr.size() != d.volume()) {
    throw ApiError(422, "rooms has " + std::to_string(arr.size()) + " entries, grid volume is " +
                            std::to_string(d.volume()));
  }
  std::vector<RoomType> rooms;
  rooms.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer()) throw ApiError(400, "room codes must be integers");
    const int code = v.get<int>();
    if (code < 0 || code > kMaxRoomCode) throw ApiError(400, "room code " + std::to_string(code) + " outside 0..7");
    rooms.push_back(static_cast<RoomType>(code));
  }
  return DesignState(std::move(partition), std::move(rooms));
}

inline std::vector<DesignState> states_from_api(const nlohmann::json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_array()) {
    throw ApiError(400, std::string("'") + field + "' must be an array of design states");
  }
  std::vector<DesignState> out;
  for (const auto& s : j[field]) out.push_back(state_from_api(s));
  if (out.empty()) throw ApiError(400, std::string("'") + field + "' is empty");
  for (const auto& s : out) {
    if (!(s.dims() == out.front().dims())) throw ApiError(422, "states in one sequence have differing dims");
  }
  return out;
}

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServiceOptions {
  std::size_t max_horizon = 200;
};

// Frozen checkpoints behind the HTTP endpoints. Handlers only read shared
// state, so concurrent requests see the same answers as serial ones.
class Service {
 public:
  explicit Service(RunConfig cfg, ServiceOptions opt = {}) : cfg_(std::move(cfg)), opt_(opt) {}

  void load(SequenceModel encoder, FlowModel flow) {
    if (encoder.kind() != ModelKind::AVD) throw UsageError("service encoder must be an AVD model");
    check_encoder_flow(encoder, flow);
    hashes_["encoder"] = nn::hex64(nn::fnv1a64(nn::serialize(encoder.to_checkpoint())));
    hashes_["flow"] = nn::hex64(nn::fnv1a64(nn::serialize(flow.to_checkpoint())));
    encoder_.emplace(std::move(encoder));
    flow_.emplace(std::move(flow));
  }

  void load(const std::filesystem::path& encoder_path, const std::filesystem::path& flow_path) {
    load(SequenceModel::load(encoder_path), FlowModel::load(flow_path));
  }

  bool ready() const { return encoder_.has_value() && flow_.has_value(); }

  ApiResponse health() const {
    nlohmann::json ck = nlohmann::json::object();
    for (const auto& [k, v] : hashes_) ck[k] = v;
    return {ready() ? 200 : 503, {{"status", ready() ? "ready" : "loading"}, {"checkpoints", ck}}};
  }

  ApiResponse autocomplete(const std::string& body) const {
    return guarded([&] {
      const auto j = parse(body);
      auto states = states_from_api(j, "states");
      check_volume(states.front());
      if (!j.contains("horizon") || !j["horizon"].is_number_integer()) {
        throw ApiError(400, "'horizon' must be an integer");
      }
      const auto horizon = j["horizon"].get<long long>();
      if (horizon < static_cast<long long>(states.size()) || horizon > static_cast<long long>(opt_.max_horizon)) {
        throw ApiError(422, "horizon must lie in [number of states, " + std::to_string(opt_.max_horizon) + "]");
      }
      if (states.size() > static_cast<std::size_t>(encoder_->config().max_len)) {
        throw ApiError(422, "prefix longer than the model max length");
      }
      for (auto& s : states) s = DesignState(states.front().partition(), s.rooms());
      std::vector<DesignState> out = states;
      if (static_cast<std::size_t>(horizon) > states.size()) {
        RolloutConfig rc;
        rc.prefix_len = states.size();
        rc.horizon = static_cast<std::size_t>(horizon);
        out = rollout(*encoder_, states, rc);
      }
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& s : out) arr.push_back(state_to_api(s));
      return ApiResponse{200, {{"states", arr}}};
    });
  }

  ApiResponse preference(const std::string& body) const {
    return guarded([&] {
      const auto j = parse(body);
      const auto a = states_from_api(j, "a");
      const auto b = states_from_api(j, "b");
      check_volume(a.front());
      check_volume(b.front());
      const auto v = flow_preference(*encoder_, *flow_, model_input(a), model_input(b));
      const std::string winner = v.winner == Winner::First ? "a" : (v.winner == Winner::Second ? "b" : "tie");
      return ApiResponse{200, {{"winner", winner}, {"scores", {{"a", v.score_first}, {"b", v.score_second}}}}};
    });
  }

  ApiResponse expert(const std::string& seed_text) const {
    return guarded([&] {
      std::uint64_t seed = 0;
      const bool digits = !seed_text.empty() && seed_text.size() <= 20 &&
                          std::all_of(seed_text.begin(), seed_text.end(), [](char c) { return c >= '0' && c <= '9'; });
      try {
        if (!digits) throw std::invalid_argument(seed_text);
        seed = std::stoull(seed_text);
      } catch (const std::exception&) {
        throw ApiError(400, "seed must be a nonnegative integer");
      }
      const EpisodeRecord r = expert_record(seed, cfg_.dataset_config());
      const DesignSequence seq = replay(r);
      nlohmann::json states = nlohmann::json::array();
      for (const auto& s : seq.states) states.push_back(state_to_api(s));
      nlohmann::json body = to_json(r);
      body["states"] = std::move(states);
      return ApiResponse{200, body};
    });
  }

  // Registers the API routes, plus static files under / when `static_dir` is set.
  void mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir = {}) const {
    auto reply = [](httplib::Response& res, const ApiResponse& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Post("/api/autocomplete", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, autocomplete(req.body));
    });
    server.Post("/api/preference", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, preference(req.body));
    });
    server.Get("/api/expert", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, expert(req.has_param("seed") ? req.get_param_value("seed") : std::string()));
    });
    server.Get("/api/health", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, health()); });
    if (static_dir) server.set_mount_point("/", static_dir->string());
  }

 private:
  static nlohmann::json parse(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      if (!j.is_object()) throw ApiError(400, "request body must be a JSON object");
      return j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ApiError(400, std::string("malformed JSON: ") + e.what());
    }
  }

  template <class F>
  ApiResponse guarded(F&& f) const {
    if (!ready()) return {503, {{"error", "checkpoints not loaded"}}};
    try {
      return f();
    } catch (const ApiError& e) {
      return {e.status(), {{"error", e.what()}}};
    } catch (const DimensionError& e) {
      return {422, {{"error", e.what()}}};
    } catch (const LengthError& e) {
      return {422, {{"error", e.what()}}};
    } catch (const Error& e) {
      return {400, {{"error", e.what()}, {"category", e.category()}}};
    } catch (const nlohmann::json::exception& e) {
      return {400, {{"error", e.what()}}};
    }
  }

  void check_volume(const DesignState& s) const {
    if (static_cast<int>(s.dims().volume()) != encoder_->config().attention.input_dim) {
      throw ApiError(422, "grid volume " + std::to_string(s.dims().volume()) + " does not match the model input " +
                              std::to_string(encoder_->config().attention.input_dim));
    }
  }

  // Long sequences are subsampled the same way as the training data.
  Matrix model_input(const std::vector<DesignState>& states) const {
    DesignSequence seq;
    seq.states = states;
    return embed_states(subsample(seq, static_cast<std::size_t>(encoder_->config().max_len - 1)).states);
  }

  RunConfig cfg_;
  ServiceOptions opt_;
  std::optional<SequenceModel> encoder_;
  std::optional<FlowModel> flow_;
  std::map<std::string, std::string> hashes_;
};

}  // namespace voxseq
