#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "support.hpp"
#include "voxseq/evaluate.hpp"

namespace voxseq {
namespace {

using testing::random_matrix;

Matrix random_psd(Rng& rng, Index n, double ridge = 0.0) {
  const Matrix a = random_matrix(rng, n, n + 3);
  return a * a.transpose() / static_cast<double>(n) + ridge * Matrix::Identity(n, n);
}

TEST(MatrixSqrt, MultiplyBack) {
  Rng rng(1);
  for (Index n : {1, 2, 5, 20, 64}) {
    for (int trial = 0; trial < 3; ++trial) {
      const Matrix c = random_psd(rng, n);
      const Matrix s = matrix_sqrt_psd(c);
      EXPECT_LT((s * s - c).cwiseAbs().maxCoeff(), 1e-8) << n;
      EXPECT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(MatrixSqrt, RankDeficientAndErrors) {
  Rng rng(2);
  const Matrix v = random_matrix(rng, 6, 2);
  const Matrix c = v * v.transpose();
  const Matrix s = matrix_sqrt_psd(c);
  EXPECT_LT((s * s - c).cwiseAbs().maxCoeff(), 1e-8);
  Matrix bad = c;
  bad(0, 1) += 1.0;
  EXPECT_THROW(matrix_sqrt_psd(bad), DomainError);
  EXPECT_THROW(matrix_sqrt_psd(Matrix::Zero(2, 3)), DimensionError);
}

TEST(FitGaussian, UnbiasedCovariancePlusRidge) {
  Matrix x(3, 2);
  x << 1, 2, 3, 6, 5, 4;
  const auto g = fit_gaussian(x);
  EXPECT_DOUBLE_EQ(g.mean(0), 3.0);
  EXPECT_DOUBLE_EQ(g.mean(1), 4.0);
  // Deviations (-2,-2), (0,2), (2,0) over n - 1 = 2.
  EXPECT_NEAR(g.cov(0, 0), 4.0 + kCovRegularization, 1e-15);
  EXPECT_NEAR(g.cov(1, 1), 4.0 + kCovRegularization, 1e-15);
  EXPECT_NEAR(g.cov(0, 1), 2.0, 1e-15);
  EXPECT_EQ(fit_gaussian(x, true).cov(0, 1), 0.0);
  EXPECT_THROW(fit_gaussian(x.topRows(1)), StatisticsError);
}

TEST(Frechet, SelfDistanceVanishes) {
  Rng rng(3);
  for (Index d : {2, 16, 128}) {
    const Matrix x = random_matrix(rng, 300, d);
    const auto g = fit_gaussian(x);
    EXPECT_LT(std::abs(frechet_distance(g, g)), 1e-6) << d;
    EXPECT_LT(std::abs(frechet_distance(fit_gaussian(x, true), fit_gaussian(x, true), true)), 1e-12);
  }
}

TEST(Frechet, OneDimensionalClosedForm) {
  GaussianStats a{Eigen::VectorXd::Constant(1, 1.0), Matrix::Constant(1, 1, 4.0)};
  GaussianStats b{Eigen::VectorXd::Constant(1, -2.0), Matrix::Constant(1, 1, 9.0)};
  // |1 - (-2)| + (2 - 3)^2; the mean term is not squared.
  EXPECT_NEAR(frechet_distance(a, b), 3.0 + 1.0, 1e-12);
  EXPECT_NEAR(frechet_distance(a, b, true), 4.0, 1e-12);
}

TEST(Frechet, AgreesWithEigenvaluesOfProduct) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Index d = 12;
    const Matrix c1 = random_psd(rng, d, 0.1), c2 = random_psd(rng, d, 0.1);
    const Eigen::VectorXd m1 = random_matrix(rng, d, 1), m2 = random_matrix(rng, d, 1);
    // Tr sqrt(C1 C2) from the (real, positive) eigenvalues of the non-symmetric product.
    const Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(c1 * c2).eigenvalues();
    double tr = 0.0;
    for (Index i = 0; i < ev.size(); ++i) tr += std::sqrt(ev(i).real());
    const double oracle = (m1 - m2).norm() + c1.trace() + c2.trace() - 2 * tr;
    EXPECT_NEAR(frechet_distance({m1, c1}, {m2, c2}), oracle, 1e-8);
  }
}

TEST(Frechet, DiagonalModeMatchesElementwiseForm) {
  Rng rng(5);
  const Matrix x = random_matrix(rng, 50, 6), y = random_matrix(rng, 60, 6, -2, 1);
  const auto a = fit_gaussian(x, true), b = fit_gaussian(y, true);
  double oracle = (a.mean - b.mean).norm();
  for (Index i = 0; i < 6; ++i) oracle += std::pow(std::sqrt(a.cov(i, i)) - std::sqrt(b.cov(i, i)), 2);
  EXPECT_NEAR(frechet_distance(a, b, true), oracle, 1e-12);
  EXPECT_NEAR(frechet_distance(a, b, false), oracle, 1e-8);
}

TEST(Frechet, SymmetricNonnegativeAndDimensionChecked) {
  Rng rng(6);
  const auto a = fit_gaussian(random_matrix(rng, 40, 5)), b = fit_gaussian(random_matrix(rng, 40, 5, 0, 2));
  EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-9);
  EXPECT_GT(frechet_distance(a, b), 0.0);
  EXPECT_THROW(frechet_distance(a, fit_gaussian(random_matrix(rng, 40, 4))), DimensionError);
}

TEST(SequentialFid, PerStepAndCommonLength) {
  Rng rng(7);
  std::vector<Matrix> ref, cand;
  for (int t = 0; t < 4; ++t) ref.push_back(random_matrix(rng, 30, 3));
  for (int t = 0; t < 3; ++t) cand.push_back(random_matrix(rng, 30, 3, 0, 3));
  const auto curve = sequential_fid(ref, cand);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_NEAR(curve[1], frechet_distance(fit_gaussian(ref[1]), fit_gaussian(cand[1])), 1e-12);
  for (double v : sequential_fid(ref, ref)) EXPECT_LT(std::abs(v), 1e-6);
  cand[2] = cand[2].topRows(1);
  EXPECT_THROW(sequential_fid(ref, cand), StatisticsError);
}

TEST(Verdict, TieAndDirection) {
  EXPECT_EQ(verdict(1.0, 1.0, true).winner, Winner::Tie);
  EXPECT_EQ(verdict(2.0, 1.0, true).winner, Winner::First);
  EXPECT_EQ(verdict(2.0, 1.0, false).winner, Winner::Second);
  EXPECT_EQ(winner_name(Winner::Second), "second");
}

TEST(PreferenceAccuracy, TiesCountHalf) {
  EXPECT_DOUBLE_EQ(preference_accuracy({3, 1, 2, 5}, {1, 1, 4, 0}, true), (1 + 0.5 + 0 + 1) / 4.0);
  EXPECT_DOUBLE_EQ(preference_accuracy({3, 1, 2, 5}, {1, 1, 4, 0}, false), (0 + 0.5 + 1 + 0) / 4.0);
  EXPECT_THROW(preference_accuracy({1}, {}, true), DimensionError);
}

struct Fixture {
  SequenceModel encoder;
  SequenceModel vae;
  FlowModel flow;
};

Fixture small_models() {
  ModelConfig mc;
  mc.kind = ModelKind::AVD;
  mc.attention = {2, 2, 8, 1000};
  mc.max_len = 41;
  ModelConfig vc = mc;
  vc.kind = ModelKind::VAE;
  FlowModel flow({8, 5, 8, 3});
  Rng rng(9);
  for (const auto& [_, t] : flow.params()) t.node()->value = random_matrix(rng, t.rows(), t.cols(), -0.3, 0.3);
  return {SequenceModel(mc), SequenceModel(vc), std::move(flow)};
}

TEST(Preference, AntisymmetryAndSelfTieOnFiftyPairs) {
  const Fixture fx = small_models();
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    auto seq = [&] {
      Matrix m(1 + static_cast<Index>(rng.below(40)), 1000);
      for (Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<double>(rng.below(8)) / 7.0;
      return m;
    };
    const Matrix a = seq(), b = seq();
    const auto ab = flow_preference(fx.encoder, fx.flow, a, b);
    const auto ba = flow_preference(fx.encoder, fx.flow, b, a);
    EXPECT_EQ(ab.score_first, ba.score_second);
    EXPECT_EQ(ab.score_second, ba.score_first);
    EXPECT_EQ(ab.winner == Winner::First, ba.winner == Winner::Second);
    EXPECT_EQ(ab.winner == Winner::Tie, ba.winner == Winner::Tie);
    EXPECT_EQ(flow_preference(fx.encoder, fx.flow, a, a).winner, Winner::Tie);
    const auto vab = vae_preference(fx.vae, a, b);
    const auto vba = vae_preference(fx.vae, b, a);
    EXPECT_EQ(vab.winner == Winner::First, vba.winner == Winner::Second);
    EXPECT_EQ(vae_preference(fx.vae, a, a).winner, Winner::Tie);
  }
}

TEST(Preference, EncoderFlowWidthsChecked) {
  const Fixture fx = small_models();
  const FlowModel wrong({6, 2, 4, 0});
  EXPECT_THROW(flow_preference(fx.encoder, wrong, Matrix::Zero(2, 1000), Matrix::Zero(2, 1000)), DimensionError);
  EXPECT_THROW(vae_preference(fx.encoder, Matrix::Zero(2, 1000), Matrix::Zero(2, 1000)), UsageError);
}

TEST(Horizon, PercentAndAbsoluteLevels) {
  EXPECT_EQ((HorizonLevel{0.25, true}.horizon(200)), 50u);
  EXPECT_EQ((HorizonLevel{1.0, true}.horizon(123)), 123u);
  EXPECT_EQ((HorizonLevel{400, false}.horizon(300)), 300u);
  EXPECT_EQ((HorizonLevel{100, false}.horizon(300)), 100u);
  EXPECT_EQ((HorizonLevel{0.5, true}.label()), "50%");
  EXPECT_EQ((HorizonLevel{200, false}.label()), "200");
  EXPECT_THROW((HorizonLevel{-1, false}.horizon(3)), DomainError);
  ASSERT_EQ(percent_levels().size(), 5u);
  EXPECT_DOUBLE_EQ(percent_levels().back().value, 1.0);
}

TEST(Corrupt, KeepsLengthAndPrefix) {
  const EpisodeRecord e = expert_record(31);
  const EpisodeRecord full = corrupt_record(e, {1.0, true}, 5);
  EXPECT_EQ(full.actions, e.actions);
  const EpisodeRecord half = corrupt_record(e, {0.5, true}, 5);
  ASSERT_EQ(half.actions.size(), e.actions.size());
  const std::size_t h = HorizonLevel{0.5, true}.horizon(e.actions.size());
  EXPECT_TRUE(std::equal(e.actions.begin(), e.actions.begin() + h, half.actions.begin()));
  EXPECT_NE(half.actions, e.actions);
  // Corrupted traces replay past the FAR stop.
  EXPECT_EQ(replay_unbounded(corrupt_record(e, {0.0, true}, 5)).states.size(), e.actions.size() + 1);
}

TEST(PreferenceExperiment, IdenticalSequencesTieAtFullHorizon) {
  std::vector<EpisodeRecord> experts;
  for (std::uint64_t i = 0; i < 6; ++i) experts.push_back(expert_record(derive_seed(40, i)));
  // Scores by final occupancy; any deterministic scorer ties on identical inputs.
  const SequenceScorer occupancy = [](const std::vector<Matrix>& seqs) {
    std::vector<double> out;
    for (const auto& s : seqs) out.push_back((s.row(s.rows() - 1).array() > 0).count());
    return out;
  };
  const auto rows = preference_experiment(occupancy, true, experts, percent_levels(), 3, 40);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_DOUBLE_EQ(rows.back().accuracy, 0.5);
  for (const auto& r : rows) EXPECT_TRUE(r.accuracy >= 0.0 && r.accuracy <= 1.0);
  EXPECT_EQ(preference_experiment(occupancy, true, experts, percent_levels(), 3, 40)[1].accuracy, rows[1].accuracy);
}

TEST(LatentsByStep, GroupsRowsByTimestep) {
  const Fixture fx = small_models();
  std::vector<Matrix> seqs{Matrix::Zero(3, 1000), Matrix::Constant(5, 1000, 1.0 / 7.0)};
  const auto groups = latents_by_step(fx.encoder, seqs);
  ASSERT_EQ(groups.size(), 5u);
  EXPECT_EQ(groups[0].rows(), 2);
  EXPECT_EQ(groups[4].rows(), 1);
  EXPECT_EQ(groups[4].row(0), fx.encoder.forward(seqs[1]).latents.row(4));
}

}  // namespace
}  // namespace voxseq
