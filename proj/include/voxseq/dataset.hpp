#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxseq/agent.hpp"
#include "voxseq/errors.hpp"
#include "voxseq/gym.hpp"
#include "voxseq/rng.hpp"
#include "voxseq/voxel.hpp"

namespace voxseq {

inline constexpr const char* kDatasetFormatVersion = "1";

struct DatasetConfig {
  GymConfig gym{};
  AgentConfig agent{};
  int min_raw_len = 100;
  int max_subsampled_len = 82;
  double train_fraction = 6612.0 / 7296.0;
  double far_min = 1.0;
  double far_max = 5.0;
  double office_min = 0.60;
  double office_max = 0.85;
};

// One persisted episode; states are regenerated by replaying `actions`.
struct EpisodeRecord {
  std::uint64_t seed = 0;
  EpisodeConstraints constraints;
  GridPartition partition;
  std::vector<Action> actions;
  bool generated = false;

  std::size_t raw_length() const { return actions.size(); }
  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct DesignSequence {
  std::vector<DesignState> states;
  std::vector<Action> actions;
  EpisodeConstraints constraints;
  // Index into the raw state list for every entry of `states` (identity unless subsampled).
  std::vector<std::size_t> source_indices;
};

struct DatasetManifest {
  GridDims grid_dims{};
  int max_subsampled_len = 82;
  int min_raw_len = 100;
  std::size_t total = 0;
  std::size_t train = 0;
  std::size_t eval = 0;
  std::uint64_t seed = 0;
  std::size_t requested = 0;
  std::string format_version = kDatasetFormatVersion;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<EpisodeRecord> train;
  std::vector<EpisodeRecord> eval;
};

inline EpisodeConstraints sample_constraints(std::uint64_t seed, const DatasetConfig& cfg = {}) {
  Rng rng(derive_seed(seed, 0xC0));
  EpisodeConstraints c;
  c.seed = seed;
  c.far_target = rng.uniform(cfg.far_min, cfg.far_max);
  const double office = rng.uniform(cfg.office_min, cfg.office_max);
  const RoomType others[] = {RoomType::Elevator, RoomType::Stairs, RoomType::Mechanical,
                             RoomType::Restroom, RoomType::Corridor, RoomType::Lobby};
  double w[6];
  double sum = 0.0;
  for (double& wi : w) sum += (wi = rng.uniform(0.05, 1.0));
  c.tpr_targets.clear();
  c.tpr_targets[RoomType::Office] = office;
  double assigned = office;
  for (int i = 0; i < 5; ++i) {
    const double share = (1.0 - office) * w[i] / sum;
    c.tpr_targets[others[i]] = share;
    assigned += share;
  }
  c.tpr_targets[others[5]] = 1.0 - assigned;
  return c;
}

inline EpisodeRecord expert_record(std::uint64_t seed, const DatasetConfig& cfg = {}) {
  EpisodeRecord r;
  r.seed = seed;
  r.constraints = sample_constraints(seed, cfg);
  r.partition = sample_partition(r.constraints.seed, cfg.gym);
  r.actions = expert_actions(r.constraints, cfg.gym, cfg.agent);
  return r;
}

// Replays the trace; with `strict` the environment must report done exactly
// at the final action (the expert contract).
inline DesignSequence replay(const EpisodeRecord& record, GymConfig gym = {}, bool strict = false) {
  gym.dims = record.partition.dims();
  EnvState env = reset(record.constraints, gym);
  if (!(env.current.partition() == record.partition)) {
    throw DomainError("recorded partition does not match the constraint seed");
  }
  DesignSequence seq;
  seq.constraints = record.constraints;
  seq.actions = record.actions;
  seq.states.reserve(record.actions.size() + 1);
  seq.states.push_back(env.current);
  for (const Action& a : record.actions) {
    env = step(env, a);
    seq.states.push_back(env.current);
  }
  if (strict && !record.actions.empty() && !env.done) {
    throw DomainError("replayed episode did not terminate at its final action");
  }
  seq.source_indices.resize(seq.states.size());
  for (std::size_t i = 0; i < seq.states.size(); ++i) seq.source_indices[i] = i;
  return seq;
}

// Corrupted traces ignore the FAR stop so every random action is applied.
inline DesignSequence replay_unbounded(const EpisodeRecord& record) {
  GymConfig gym;
  gym.stop_at_far = false;
  gym.step_cap = static_cast<int>(record.actions.size()) + 1;
  return replay(record, gym, false);
}

inline bool replay_check(const EpisodeRecord& record, const GymConfig& gym = {}) {
  try {
    replay(record, gym, true);
    return true;
  } catch (const Error&) {
    return false;
  }
}

// Every stride-th state from index 0, stride = ceil(len / max_len), with the
// final state appended when the stride misses it.
inline DesignSequence subsample(const DesignSequence& seq, std::size_t max_len) {
  if (max_len < 2) throw DomainError("subsample max_len must be >= 2");
  const std::size_t n = seq.states.size();
  if (n <= max_len) {
    DesignSequence out = seq;
    if (out.source_indices.size() != n) {
      out.source_indices.resize(n);
      for (std::size_t i = 0; i < n; ++i) out.source_indices[i] = i;
    }
    return out;
  }
  const std::size_t stride = (n + max_len - 1) / max_len;
  DesignSequence out;
  out.actions = seq.actions;
  out.constraints = seq.constraints;
  for (std::size_t i = 0; i < n; i += stride) {
    out.states.push_back(seq.states[i]);
    out.source_indices.push_back(seq.source_indices.empty() ? i : seq.source_indices[i]);
  }
  if (out.source_indices.back() != (seq.source_indices.empty() ? n - 1 : seq.source_indices[n - 1])) {
    out.states.push_back(seq.states[n - 1]);
    out.source_indices.push_back(seq.source_indices.empty() ? n - 1 : seq.source_indices[n - 1]);
  }
  return out;
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> split(std::vector<T> items, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("train fraction must be in (0,1)");
  Rng rng(derive_seed(seed, 0x5B1));
  rng.shuffle(items.begin(), items.end());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(items.size())));
  std::vector<T> train(items.begin(), items.begin() + n_train);
  std::vector<T> eval(items.begin() + n_train, items.end());
  return {std::move(train), std::move(eval)};
}

struct Histogram {
  double lo = 0.0;
  double width = 1.0;
  std::vector<std::size_t> counts;

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

// Fixed-width buckets starting at `lo`; values past the last bucket land in it.
inline Histogram histogram(const std::vector<double>& values, double lo, double width, std::size_t buckets) {
  if (!(width > 0.0) || buckets == 0) throw DomainError("histogram needs positive width and buckets");
  Histogram h{lo, width, std::vector<std::size_t>(buckets, 0)};
  for (double v : values) {
    long b = static_cast<long>(std::floor((v - lo) / width));
    b = std::clamp(b, 0L, static_cast<long>(buckets) - 1);
    h.counts[static_cast<std::size_t>(b)] += 1;
  }
  return h;
}

inline Histogram length_histogram(const std::vector<EpisodeRecord>& records, double width = 50.0,
                                  std::size_t buckets = 17) {
  std::vector<double> lengths;
  lengths.reserve(records.size());
  for (const auto& r : records) lengths.push_back(static_cast<double>(r.raw_length()));
  return histogram(lengths, 0.0, width, buckets);
}

// ---- JSON wire/disk forms -------------------------------------------------

inline nlohmann::json to_json(const EpisodeConstraints& c) {
  nlohmann::json tpr = nlohmann::json::object();
  for (const auto& [room, ratio] : c.tpr_targets) tpr[std::string(room_name(room))] = ratio;
  return {{"far_target", c.far_target}, {"tpr_targets", tpr}, {"seed", c.seed}};
}

inline EpisodeConstraints constraints_from_json(const nlohmann::json& j) {
  EpisodeConstraints c;
  c.far_target = j.at("far_target").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.tpr_targets.clear();
  for (const auto& [name, ratio] : j.at("tpr_targets").items()) {
    auto room = room_from_name(name);
    if (!room) throw DomainError("unknown room type '" + name + "'");
    c.tpr_targets[*room] = ratio.get<double>();
  }
  return c;
}

inline nlohmann::json to_json(const GridPartition& p) {
  return {{"x", p.x_sizes}, {"y", p.y_sizes}, {"z", p.z_sizes}};
}

inline GridPartition partition_from_json(const nlohmann::json& j) {
  GridPartition p{j.at("x").get<std::vector<double>>(), j.at("y").get<std::vector<double>>(),
                  j.at("z").get<std::vector<double>>()};
  p.validate();
  return p;
}

inline nlohmann::json to_json(const EpisodeRecord& r) {
  nlohmann::json actions = nlohmann::json::array();
  for (const Action& a : r.actions) {
    actions.push_back({{"x", a.location.x}, {"y", a.location.y}, {"z", a.location.z},
                       {"room_code", room_code(a.room)}});
  }
  nlohmann::json j = {{"seed", r.seed},
                      {"constraints", to_json(r.constraints)},
                      {"partition", to_json(r.partition)},
                      {"actions", actions}};
  if (r.generated) j["generated"] = true;
  return j;
}

inline EpisodeRecord record_from_json(const nlohmann::json& j) {
  EpisodeRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.constraints = constraints_from_json(j.at("constraints"));
  r.partition = partition_from_json(j.at("partition"));
  for (const auto& a : j.at("actions")) {
    r.actions.push_back({{a.at("x").get<int>(), a.at("y").get<int>(), a.at("z").get<int>()},
                         room_from_code(a.at("room_code").get<int>())});
  }
  r.generated = j.value("generated", false);
  return r;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"format_version", m.format_version},
          {"grid_dims", {m.grid_dims.nx, m.grid_dims.ny, m.grid_dims.nz}},
          {"max_subsampled_len", m.max_subsampled_len},
          {"min_raw_len", m.min_raw_len},
          {"counts", {{"total", m.total}, {"train", m.train}, {"eval", m.eval}}},
          {"seed", m.seed},
          {"requested", m.requested}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<std::string>();
  if (m.format_version != kDatasetFormatVersion) {
    throw StorageError("unsupported dataset format_version " + m.format_version);
  }
  const auto dims = j.at("grid_dims").get<std::vector<int>>();
  if (dims.size() != 3) throw StorageError("grid_dims must have three entries");
  m.grid_dims = {dims[0], dims[1], dims[2]};
  m.max_subsampled_len = j.at("max_subsampled_len").get<int>();
  m.min_raw_len = j.at("min_raw_len").get<int>();
  m.total = j.at("counts").at("total").get<std::size_t>();
  m.train = j.at("counts").at("train").get<std::size_t>();
  m.eval = j.at("counts").at("eval").get<std::size_t>();
  m.seed = j.value("seed", std::uint64_t{0});
  m.requested = j.value("requested", std::size_t{0});
  if (m.train + m.eval != m.total) throw StorageError("manifest counts are inconsistent");
  return m;
}

inline void write_records(const std::filesystem::path& path, const std::vector<EpisodeRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw StorageError("write failed: " + path.string());
}

inline std::vector<EpisodeRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path.string());
  std::vector<EpisodeRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw StorageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw StorageError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw StorageError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "manifest.json", to_json(ds.manifest).dump(2) + "\n");
  write_records(dir / "train.jsonl", ds.train);
  write_records(dir / "eval.jsonl", ds.eval);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  try {
    ds.manifest = manifest_from_json(nlohmann::json::parse(read_text(dir / "manifest.json")));
  } catch (const nlohmann::json::exception& e) {
    throw StorageError("bad manifest: " + std::string(e.what()));
  }
  ds.train = read_records(dir / "train.jsonl");
  ds.eval = read_records(dir / "eval.jsonl");
  if (ds.train.size() != ds.manifest.train || ds.eval.size() != ds.manifest.eval) {
    throw StorageError("record counts disagree with manifest");
  }
  return ds;
}

// n expert episodes from per-episode seeds derived from `seed`; short
// episodes are dropped, the rest split into train/eval.
inline Dataset generate(std::size_t n, std::uint64_t seed, const DatasetConfig& cfg = {}) {
  if (n == 0) throw DomainError("generate needs n > 0");
  std::vector<EpisodeRecord> kept;
  for (std::size_t i = 0; i < n; ++i) {
    EpisodeRecord r = expert_record(derive_seed(seed, i), cfg);
    if (static_cast<int>(r.raw_length()) >= cfg.min_raw_len) kept.push_back(std::move(r));
  }
  Dataset ds;
  if (kept.size() >= 2) {
    auto [train, eval] = split(std::move(kept), cfg.train_fraction, seed);
    ds.train = std::move(train);
    ds.eval = std::move(eval);
  } else {
    ds.train = std::move(kept);
  }
  ds.manifest.grid_dims = cfg.gym.dims;
  ds.manifest.max_subsampled_len = cfg.max_subsampled_len;
  ds.manifest.min_raw_len = cfg.min_raw_len;
  ds.manifest.train = ds.train.size();
  ds.manifest.eval = ds.eval.size();
  ds.manifest.total = ds.manifest.train + ds.manifest.eval;
  ds.manifest.seed = seed;
  ds.manifest.requested = n;
  return ds;
}

// Replayed and subsampled state sequences, ready for the models.
inline std::vector<DesignSequence> load_sequences(const std::vector<EpisodeRecord>& records, std::size_t max_len) {
  std::vector<DesignSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(subsample(replay(r), max_len));
  return out;
}

}  // namespace voxseq
