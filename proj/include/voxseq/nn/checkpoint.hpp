#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "voxseq/errors.hpp"
#include "voxseq/nn/tensor.hpp"

namespace voxseq::nn {

inline constexpr char kCheckpointMagic[8] = {'V', 'X', 'S', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Header JSON plus named float64 matrices.
struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, Matrix> tensors;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw StorageError("checkpoint truncated");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

inline std::string get_bytes(const std::string& in, std::size_t& pos, std::size_t n) {
  if (pos + n > in.size()) throw StorageError("checkpoint truncated");
  std::string s = in.substr(pos, n);
  pos += n;
  return s;
}

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = ck.header.dump();
  detail::put_le<std::uint64_t>(out, header.size());
  out += header;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) detail::put_le<double>(out, m.data()[i]);
  }
  return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
  std::size_t pos = 0;
  if (detail::get_bytes(bytes, pos, sizeof(kCheckpointMagic)) !=
      std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw StorageError("not a checkpoint file (bad magic)");
  }
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw StorageError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto header_len = detail::get_le<std::uint64_t>(bytes, pos);
  try {
    ck.header = nlohmann::json::parse(detail::get_bytes(bytes, pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw StorageError(std::string("checkpoint header: ") + e.what());
  }
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = detail::get_le<std::uint32_t>(bytes, pos);
    std::string name = detail::get_bytes(bytes, pos, name_len);
    const auto rows = detail::get_le<std::uint64_t>(bytes, pos);
    const auto cols = detail::get_le<std::uint64_t>(bytes, pos);
    if (rows * cols * sizeof(double) > bytes.size() - pos) throw StorageError("checkpoint truncated");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = detail::get_le<double>(bytes, pos);
    ck.tensors.emplace(std::move(name), std::move(m));
  }
  if (pos != bytes.size()) throw StorageError("trailing bytes after checkpoint");
  return ck;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw StorageError("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize(ck);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw StorageError("write failed: " + path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StorageError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

}  // namespace voxseq::nn
