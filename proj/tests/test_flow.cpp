#include <gtest/gtest.h>

#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "support.hpp"
#include "voxseq/flow.hpp"

namespace voxseq {
namespace {

using testing::random_matrix;
using testing::TempDir;

// Flow with every parameter (including the zero-initialised output layers)
// drawn at random so the couplings are far from the identity.
FlowModel random_flow(int dim, std::uint64_t seed, double spread = 0.3) {
  FlowModel f({dim, 5, 16, seed});
  Rng rng(seed);
  for (const auto& [_, t] : f.params()) t.node()->value = random_matrix(rng, t.rows(), t.cols(), -spread, spread);
  return f;
}

Matrix gaussian_samples(Rng& rng, Index n, const Matrix& chol, const Eigen::RowVectorXd& mean) {
  Matrix e(n, chol.cols());
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
  return (e * chol.transpose()).rowwise() + mean;
}

TEST(Flow, StartsAsIdentity) {
  const FlowModel f({6, 5, 8, 1});
  Rng rng(1);
  const Matrix x = random_matrix(rng, 10, 6);
  const auto [u, ld] = f.forward(x);
  EXPECT_EQ(u, x);
  EXPECT_EQ(ld.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Flow, MasksAlternateParity) {
  const FlowModel f({7, 5, 8, 1});
  ASSERT_EQ(f.layers().size(), 5u);
  for (std::size_t l = 0; l < 5; ++l) {
    const auto m = f.layers()[l].mask(7);
    for (int j = 0; j < 7; ++j) EXPECT_EQ(m[j], (j % 2 == static_cast<int>(l % 2)) ? 1.0 : 0.0);
  }
}

TEST(Flow, InverseRecoversInput) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FlowModel f = random_flow(8, seed, 0.5);
    Rng rng(seed + 100);
    const Matrix x = random_matrix(rng, 200, 8, -3, 3);
    const auto [u, _] = f.forward(x);
    EXPECT_LT((f.inverse(u) - x).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_GT((u - x).cwiseAbs().maxCoeff(), 1e-2);
  }
}

TEST(Flow, LogDetMatchesFiniteDifferenceJacobian) {
  const FlowModel f = random_flow(8, 7, 0.5);
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = random_matrix(rng, 1, 8, -2, 2);
    const double h = 1e-6;
    Eigen::MatrixXd jac(8, 8);
    for (Index j = 0; j < 8; ++j) {
      Matrix up = x, down = x;
      up(0, j) += h;
      down(0, j) -= h;
      jac.col(j) = ((f.forward(up).first - f.forward(down).first) / (2 * h)).transpose();
    }
    const double numeric = std::log(std::abs(jac.determinant()));
    EXPECT_NEAR(f.forward(x).second(0), numeric, 1e-4);
  }
}

TEST(Flow, TwoDimensionalDensityIntegratesToOne) {
  FlowModel f = random_flow(2, 11, 0.4);
  f.set_standardization((Matrix(1, 2) << 0.3, -0.2).finished(), (Matrix(1, 2) << 0.8, 1.3).finished());
  const int n = 700;
  const double lo = -12.0, hi = 12.0, step = (hi - lo) / n;
  Matrix grid(static_cast<Index>(n) * n, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) grid.row(static_cast<Index>(i) * n + j) << lo + (i + 0.5) * step, lo + (j + 0.5) * step;
  }
  const double mass = f.log_prob(grid).array().exp().sum() * step * step;
  EXPECT_NEAR(mass, 1.0, 1e-2);
}

TEST(Flow, LogProbIncludesStandardisationJacobian) {
  FlowModel f({3, 2, 4, 1});
  const Eigen::RowVectorXd z = Eigen::RowVectorXd::Constant(3, 2.0);
  const double base = f.log_prob(z);
  f.set_standardization(Matrix::Zero(1, 3), Matrix::Constant(1, 3, 2.0));
  // Identity couplings: log N(z / 2) - 3 log 2.
  const double expect = -1.5 * std::log(2 * std::numbers::pi) - 0.5 * 3.0 - 3 * std::log(2.0);
  EXPECT_NEAR(f.log_prob(z), expect, 1e-12);
  EXPECT_NEAR(base, -1.5 * std::log(2 * std::numbers::pi) - 6.0, 1e-12);
}

TEST(Flow, GaussianNllApproachesEntropyRate) {
  Rng rng(21);
  const int d = 4;
  const Matrix a = random_matrix(rng, d, d);
  const Matrix cov = a * a.transpose() + 0.2 * Matrix::Identity(d, d);
  const Matrix chol = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
  const Eigen::RowVectorXd mean = Eigen::RowVectorXd::LinSpaced(d, -1, 2);
  const Matrix train = gaussian_samples(rng, 4000, chol, mean);
  const Matrix test = gaussian_samples(rng, 4000, chol, mean);
  const double entropy_rate =
      0.5 * std::log(2 * std::numbers::pi * std::numbers::e) + 0.5 * std::log(cov.determinant()) / d;

  FlowModel f({d, 5, 32, 3});
  FlowTrainConfig tc;
  tc.epochs = 60;
  tc.lr = 3e-3;
  tc.seed = 4;
  const auto rep = train_flow(f, train, tc);
  EXPECT_LT(rep.nll_curve.back(), rep.nll_curve.front());
  EXPECT_NEAR(mean_nll_per_dim(f, test), entropy_rate, 0.05);
}

TEST(Flow, StandardNormalEntropyRate) {
  Rng rng(22);
  const Matrix x = gaussian_samples(rng, 20000, Matrix::Identity(6, 6), Eigen::RowVectorXd::Zero(6));
  const FlowModel f({6, 5, 8, 1});
  // 0.5 log(2 pi e) = 1.4189
  EXPECT_NEAR(mean_nll_per_dim(f, x), 1.4189385, 0.01);
}

TEST(Flow, TrainingIsDeterministic) {
  Rng rng(23);
  const Matrix z = random_matrix(rng, 100, 4);
  FlowModel a({4, 5, 8, 1}), b({4, 5, 8, 1});
  FlowTrainConfig tc;
  tc.epochs = 5;
  EXPECT_EQ(train_flow(a, z, tc).nll_curve, train_flow(b, z, tc).nll_curve);
}

TEST(Flow, CheckpointRoundTrip) {
  TempDir dir("flow");
  FlowModel f = random_flow(6, 3);
  f.set_standardization(Matrix::Constant(1, 6, 0.5), Matrix::Constant(1, 6, 1.5));
  f.save(dir.path() / "f.ckpt");
  const FlowModel back = FlowModel::load(dir.path() / "f.ckpt");
  Rng rng(4);
  const Matrix z = random_matrix(rng, 5, 6);
  EXPECT_TRUE((back.log_prob(z).array() == f.log_prob(z).array()).all());

  nn::Checkpoint ck = f.to_checkpoint();
  ck.tensors["mask1"](0, 0) = 1.0 - ck.tensors["mask1"](0, 0);
  EXPECT_THROW(FlowModel::from_checkpoint(ck), StorageError);
  ck = f.to_checkpoint();
  ck.tensors.erase("stats.std");
  EXPECT_THROW(FlowModel::from_checkpoint(ck), StorageError);
}

TEST(Flow, Errors) {
  EXPECT_THROW(FlowModel({1, 5, 8, 0}), DimensionError);
  FlowModel f({4, 2, 8, 0});
  EXPECT_THROW(f.log_prob(Matrix(Matrix::Zero(2, 5))), DimensionError);
  EXPECT_THROW(f.set_standardization(Matrix::Zero(1, 4), Matrix::Zero(1, 4)), DomainError);
  EXPECT_THROW(train_flow(f, Matrix::Zero(0, 4), {}), TrainingError);
  EXPECT_THROW(train_flow(f, Matrix::Zero(3, 5), {}), DimensionError);
}

TEST(Flow, LogScaleIsBounded) {
  FlowModel f = random_flow(4, 5, 50.0);
  Rng rng(6);
  const auto [u, ld] = f.forward(random_matrix(rng, 20, 4));
  // Two moved coordinates per coupling, five couplings.
  EXPECT_LE(ld.cwiseAbs().maxCoeff(), kMaxLogScale * 2 * 5 + 1e-9);
}

}  // namespace
}  // namespace voxseq
