#pragma once

#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "voxseq/nn/ops.hpp"
#include "voxseq/rng.hpp"

namespace voxseq::testing {

using nn::Index;
using nn::Matrix;
using nn::Tensor;

inline Matrix random_matrix(Rng& rng, nn::Index rows, nn::Index cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Relative error between the tape gradient of a scalar function and central
// differences, taken over all inputs at once.
inline double gradient_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                             const std::vector<Matrix>& at, double h = 1e-6) {
  std::vector<Tensor> leaves;
  for (const auto& m : at) leaves.emplace_back(m, true);
  f(leaves).backward();
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < at.size(); ++k) {
    const Matrix analytic = leaves[k].grad();
    for (nn::Index i = 0; i < at[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Tensor> in;
        for (std::size_t j = 0; j < at.size(); ++j) {
          Matrix m = at[j];
          if (j == k) m.data()[i] += delta;
          in.emplace_back(std::move(m));
        }
        return f(in).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      diff += std::pow(analytic.data()[i] - numeric, 2);
      scale = std::max({scale, std::abs(analytic.data()[i]), std::abs(numeric)});
    }
  }
  return std::sqrt(diff) / std::max(scale, 1e-8);
}

// Scalar probe sum(out * w) with a fixed random weight so every output entry matters.
inline Tensor probe(const Tensor& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  return nn::sum(nn::mul(out, Tensor(random_matrix(rng, out.rows(), out.cols()))));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(std::time(nullptr)));
    path_ = std::filesystem::temp_directory_path() / ("voxseq-" + tag + "-" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace voxseq::testing
