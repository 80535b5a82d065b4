#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "voxseq/errors.hpp"

namespace voxseq {

// Room codes are stable on disk and on the wire; do not reorder.
enum class RoomType : std::uint8_t {
  Empty = 0,
  Elevator = 1,
  Stairs = 2,
  Mechanical = 3,
  Restroom = 4,
  Corridor = 5,
  Office = 6,
  Lobby = 7,
};

inline constexpr int kMaxRoomCode = 7;
inline constexpr int kRoomTypeCount = kMaxRoomCode + 1;

inline constexpr std::array<RoomType, kRoomTypeCount> kAllRoomTypes = {
    RoomType::Empty,    RoomType::Elevator, RoomType::Stairs, RoomType::Mechanical,
    RoomType::Restroom, RoomType::Corridor, RoomType::Office, RoomType::Lobby};

constexpr int room_code(RoomType r) { return static_cast<int>(r); }

inline RoomType room_from_code(int code) {
  if (code < 0 || code > kMaxRoomCode) {
    throw DomainError("room code out of range: " + std::to_string(code));
  }
  return static_cast<RoomType>(code);
}

inline std::string_view room_name(RoomType r) {
  static constexpr std::array<std::string_view, kRoomTypeCount> names = {
      "empty", "elevator", "stairs", "mechanical", "restroom", "corridor", "office", "lobby"};
  return names[static_cast<std::size_t>(r)];
}

inline std::optional<RoomType> room_from_name(std::string_view name) {
  for (RoomType r : kAllRoomTypes) {
    if (room_name(r) == name) return r;
  }
  return std::nullopt;
}

struct Coord {
  int x = 0;
  int y = 0;
  int z = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

struct GridDims {
  int nx = 10;
  int ny = 10;
  int nz = 10;

  std::size_t volume() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  bool contains(const Coord& c) const {
    return c.x >= 0 && c.x < nx && c.y >= 0 && c.y < ny && c.z >= 0 && c.z < nz;
  }
  // Row-major: x slowest, z fastest.
  std::size_t index(const Coord& c) const {
    return (static_cast<std::size_t>(c.x) * ny + static_cast<std::size_t>(c.y)) * nz +
           static_cast<std::size_t>(c.z);
  }
  Coord coord(std::size_t i) const {
    const int z = static_cast<int>(i % nz);
    const int y = static_cast<int>((i / nz) % ny);
    const int x = static_cast<int>(i / (static_cast<std::size_t>(nz) * ny));
    return {x, y, z};
  }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

// Per-axis cell lengths in meters; fixed for the whole episode.
struct GridPartition {
  std::vector<double> x_sizes;
  std::vector<double> y_sizes;
  std::vector<double> z_sizes;

  static GridPartition uniform(GridDims dims, double xy = 6.0, double z = 4.0) {
    return {std::vector<double>(dims.nx, xy), std::vector<double>(dims.ny, xy),
            std::vector<double>(dims.nz, z)};
  }

  GridDims dims() const {
    return {static_cast<int>(x_sizes.size()), static_cast<int>(y_sizes.size()),
            static_cast<int>(z_sizes.size())};
  }

  void validate() const {
    if (x_sizes.empty() || y_sizes.empty() || z_sizes.empty()) {
      throw DimensionError("partition has an empty axis");
    }
    for (const auto* axis : {&x_sizes, &y_sizes, &z_sizes}) {
      for (double s : *axis) {
        if (!(s > 0.0) || !std::isfinite(s)) throw ConstraintError("partition sizes must be positive");
      }
    }
  }

  double cell_area(int x, int y) const { return x_sizes[x] * y_sizes[y]; }

  double parcel_area() const {
    double sx = 0.0, sy = 0.0;
    for (double s : x_sizes) sx += s;
    for (double s : y_sizes) sy += s;
    return sx * sy;
  }

  friend bool operator==(const GridPartition&, const GridPartition&) = default;
};

class DesignState {
 public:
  DesignState() : DesignState(GridPartition::uniform(GridDims{})) {}

  explicit DesignState(GridPartition partition)
      : partition_(std::move(partition)), dims_(partition_.dims()), rooms_(dims_.volume(), RoomType::Empty) {
    partition_.validate();
  }

  DesignState(GridPartition partition, std::vector<RoomType> rooms)
      : partition_(std::move(partition)), dims_(partition_.dims()), rooms_(std::move(rooms)) {
    partition_.validate();
    if (rooms_.size() != dims_.volume()) {
      throw DimensionError("room array length " + std::to_string(rooms_.size()) +
                           " does not match grid volume " + std::to_string(dims_.volume()));
    }
  }

  const GridDims& dims() const { return dims_; }
  const GridPartition& partition() const { return partition_; }
  const std::vector<RoomType>& rooms() const { return rooms_; }

  RoomType at(const Coord& c) const { return rooms_[checked_index(c)]; }
  RoomType at(std::size_t i) const { return rooms_.at(i); }
  void set(const Coord& c, RoomType r) { rooms_[checked_index(c)] = r; }
  void set(std::size_t i, RoomType r) { rooms_.at(i) = r; }

  std::size_t occupied_count() const {
    std::size_t n = 0;
    for (RoomType r : rooms_) n += (r != RoomType::Empty);
    return n;
  }

  friend bool operator==(const DesignState&, const DesignState&) = default;

 private:
  std::size_t checked_index(const Coord& c) const {
    if (!dims_.contains(c)) {
      throw BoundsError("voxel (" + std::to_string(c.x) + "," + std::to_string(c.y) + "," +
                        std::to_string(c.z) + ") outside grid");
    }
    return dims_.index(c);
  }

  GridPartition partition_;
  GridDims dims_;
  std::vector<RoomType> rooms_;
};

struct Action {
  Coord location;
  RoomType room = RoomType::Office;
  friend bool operator==(const Action&, const Action&) = default;
};

// Flattened unit-interval view of a DesignState: entry = room_code / 7.
struct DesignEmbedding {
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
  friend bool operator==(const DesignEmbedding&, const DesignEmbedding&) = default;
};

inline DesignEmbedding encode_state(const DesignState& state) {
  DesignEmbedding e;
  e.values.resize(state.rooms().size());
  for (std::size_t i = 0; i < e.values.size(); ++i) {
    e.values[i] = static_cast<double>(room_code(state.rooms()[i])) / kMaxRoomCode;
  }
  return e;
}

// Nearest level k/7; exact midpoints go to the lower code.
inline RoomType quantize_level(double v) {
  if (!(v > 0.0)) return RoomType::Empty;  // also NaN
  if (v >= 1.0) return RoomType::Lobby;
  const double scaled = v * kMaxRoomCode;
  int k = static_cast<int>(std::ceil(scaled - 0.5));
  if (k < 0) k = 0;
  if (k > kMaxRoomCode) k = kMaxRoomCode;
  return static_cast<RoomType>(k);
}

template <class Values>
DesignState decode_values(const Values& values, const GridPartition& grid) {
  const std::size_t volume = grid.dims().volume();
  if (static_cast<std::size_t>(values.size()) != volume) {
    throw DimensionError("embedding length " + std::to_string(values.size()) +
                         " does not match grid volume " + std::to_string(volume));
  }
  std::vector<RoomType> rooms(volume);
  for (std::size_t i = 0; i < volume; ++i) rooms[i] = quantize_level(values[i]);
  return DesignState(grid, std::move(rooms));
}

inline DesignState decode_embedding(const DesignEmbedding& e, const GridPartition& grid) {
  return decode_values(e.values, grid);
}

// Fraction of voxels whose room types agree.
inline double state_diff(const DesignState& a, const DesignState& b) {
  if (!(a.dims() == b.dims())) throw DimensionError("state_diff: grid shapes differ");
  const auto& ra = a.rooms();
  const auto& rb = b.rooms();
  std::size_t same = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) same += (ra[i] == rb[i]);
  return static_cast<double>(same) / static_cast<double>(ra.size());
}

}  // namespace voxseq
