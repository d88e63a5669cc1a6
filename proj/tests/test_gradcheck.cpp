#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "gainsched/gradcheck.hpp"
#include "oracles.hpp"

using namespace gainsched;

namespace {

Matrix to_matrix(const oracle::Rows& r) {
  Matrix m(r.size(), r[0].size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[i].size(); ++j) m(i, j) = r[i][j];
  return m;
}

oracle::Rows to_rows(const Matrix& m) {
  oracle::Rows r(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

double direct_norm_sq(const oracle::Rows& x, const oracle::Rows& g) {
  oracle::Rows xt(x[0].size(), std::vector<double>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[0].size(); ++j) xt[j][i] = x[i][j];
  double s = 0.0;
  for (const auto& row : oracle::matmul(xt, g))
    for (double v : row) s += v * v;
  return s;
}

}  // namespace

TEST(GradDirect, Examples) {
  EXPECT_EQ(grad_direct({Matrix::identity(2), Matrix::identity(2)}), Matrix::identity(2));
  EXPECT_EQ(grad_direct({Matrix{{1, 2}, {3, 4}, {5, 6}}, Matrix(3, 4)}), Matrix(2, 4));
  EXPECT_THROW(grad_direct({Matrix(3, 2), Matrix(2, 2)}), ShapeError);
}

TEST(GradDirect, MatchesTransposeProduct) {
  std::mt19937_64 gen(31);
  const auto x = oracle::random_rows(gen, 3, 4);
  const auto g = oracle::random_rows(gen, 3, 2);
  const Matrix got = grad_direct({to_matrix(x), to_matrix(g)});
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 2; ++b) {
      double want = 0.0;
      for (std::size_t i = 0; i < 3; ++i) want += x[i][a] * g[i][b];
      EXPECT_NEAR(got(a, b), want, 1e-13);
    }
}

TEST(GradNormDecomposed, Examples) {
  EXPECT_NEAR(grad_norm_decomposed({Matrix::identity(2), Matrix::identity(2)}), 2.0, 1e-15);
  const Matrix x{{3, 4}};
  const Matrix g{{1, 2, 2}};
  EXPECT_NEAR(grad_norm_decomposed({x, g}), 25.0 * 9.0, 1e-12);
}

TEST(GradNormDecomposed, EqualsDirectFrobeniusOnRandomInstances) {
  std::mt19937_64 gen(37);
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 1 + gen() % 8, d = 1 + gen() % 16, h = 1 + gen() % 8;
    const auto x = oracle::random_rows(gen, m, d);
    const auto g = oracle::random_rows(gen, m, h);
    const double want = direct_norm_sq(x, g);
    const double got = grad_norm_decomposed({to_matrix(x), to_matrix(g)});
    EXPECT_LT(std::abs(got - want) / std::max(want, 1e-30), 1e-9) << "instance " << t;
  }
}

TEST(FrobeniusOuter, InnerProductFactorizes) {
  std::mt19937_64 gen(41);
  for (int t = 0; t < 100; ++t) {
    const std::size_t a = 1 + gen() % 7, b = 1 + gen() % 7;
    const auto uw = oracle::random_rows(gen, 2, a);
    const auto vz = oracle::random_rows(gen, 2, b);
    const double lhs = frobenius_inner(outer(Vector(uw[0]), Vector(vz[0])),
                                       outer(Vector(uw[1]), Vector(vz[1])));
    const double rhs = oracle::dot(uw[0], uw[1]) * oracle::dot(vz[0], vz[1]);
    EXPECT_LE(std::abs(lhs - rhs), 1e-12 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(GradNormDecomposed, MonotoneInAngleWithNonNegativeGradientProducts) {
  std::mt19937_64 gen(43);
  std::uniform_real_distribution<double> ang(0.05, 3.0);
  for (int t = 0; t < 200; ++t) {
    auto g = oracle::random_rows(gen, 2, 3);
    if (oracle::dot(g[0], g[1]) < 0) for (auto& v : g[1]) v = -v;
    const double r0 = 0.5 + (gen() % 100) / 50.0, r1 = 0.5 + (gen() % 100) / 50.0;
    double wide = ang(gen), narrow = ang(gen);
    if (narrow > wide) std::swap(narrow, wide);
    auto pair = [&](double theta) {
      return Matrix{{r0, 0.0}, {r1 * std::cos(theta), r1 * std::sin(theta)}};
    };
    const Matrix gm = to_matrix(g);
    EXPECT_GE(grad_norm_decomposed({pair(narrow), gm}) + 1e-12,
              grad_norm_decomposed({pair(wide), gm}));
  }
}

TEST(FfnGrads, ZeroInputGivesZeroGradients) {
  std::mt19937_64 gen(47);
  FfnProbe p{to_matrix(oracle::random_rows(gen, 3, 6)), to_matrix(oracle::random_rows(gen, 6, 3)),
             Matrix(4, 3), FfnLoss::sum};
  const auto g = ffn_neuron_grads(p);
  EXPECT_EQ(frobenius_norm_sq(g.w_u), 0.0);
  EXPECT_EQ(frobenius_norm_sq(g.w_d), 0.0);
  EXPECT_EQ(norm(neuron_grad_mass(p)), 0.0);
}

TEST(FfnGrads, SaturatedNeuronsReceiveNoUpGradient) {
  FfnProbe p;
  p.x = Matrix{{1.0, 1.0}};
  p.w_u = Matrix{{-15.0, -12.0, -20.0}, {-15.0, -10.0, -30.0}};  // z <= -20
  p.w_d = Matrix{{1, 2}, {0.5, -1}, {3, 1}};
  p.loss = FfnLoss::sum;
  const auto g = ffn_neuron_grads(p);
  for (double v : g.w_u.values()) EXPECT_LT(std::abs(v), 1e-7);
}

TEST(FfnGrads, MatchCentralDifferencesForBothLosses) {
  std::mt19937_64 gen(53);
  for (FfnLoss loss : {FfnLoss::sum, FfnLoss::sum_of_squares}) {
    for (int t = 0; t < 10; ++t) {
      const auto x = oracle::random_rows(gen, 4, 5);
      const auto wu = oracle::random_rows(gen, 5, 6, 0.7);
      const auto wd = oracle::random_rows(gen, 6, 5, 0.7);
      const bool sq = loss == FfnLoss::sum_of_squares;
      const auto g = ffn_neuron_grads({to_matrix(wu), to_matrix(wd), to_matrix(x), loss});
      for (bool up : {true, false}) {
        const auto num = oracle::ffn_central_differences(x, wu, wd, sq, up);
        const Matrix& ana = up ? g.w_u : g.w_d;
        for (std::size_t r = 0; r < num.size(); ++r)
          for (std::size_t c = 0; c < num[r].size(); ++c) {
            const double err = std::abs(ana(r, c) - num[r][c]) / std::max(std::abs(num[r][c]), 1e-3);
            EXPECT_LT(err, 1e-5) << (up ? "w_u" : "w_d") << "(" << r << "," << c << ")";
          }
      }
    }
  }
}

TEST(FfnGrads, DownGradientRowBelongsToNeuron) {
  // Neuron 1 never fires, so row 1 of dL/dW_d vanishes.
  FfnProbe p;
  p.x = Matrix{{1.0, 0.0}, {2.0, 0.0}};
  p.w_u = Matrix{{1.0, -40.0}, {0.0, 0.0}};
  p.w_d = Matrix{{1.0, 1.0}, {1.0, 1.0}};
  const auto g = ffn_neuron_grads(p);
  EXPECT_GT(std::abs(g.w_d(0, 0)), 0.1);
  EXPECT_LT(std::abs(g.w_d(1, 0)) + std::abs(g.w_d(1, 1)), 1e-12);
}

TEST(FfnLossLibrary, UnknownNameRejected) {
  EXPECT_EQ(parse_ffn_loss("sum"), FfnLoss::sum);
  EXPECT_EQ(parse_ffn_loss("sum-of-squares"), FfnLoss::sum_of_squares);
  EXPECT_THROW(parse_ffn_loss("hinge"), std::invalid_argument);
}

TEST(NeuronGradMass, InactiveNeuronHasNoMass) {
  FfnProbe p;
  p.x = Matrix{{1.0, 0.5}, {0.3, 1.0}};
  p.w_u = Matrix{{1.0, -30.0}, {1.0, -30.0}};
  p.w_d = Matrix{{1.0, 1.0}, {1.0, 1.0}};
  EXPECT_LT(neuron_grad_mass(p)[1], 1e-7);
}

TEST(NeuronGradMass, ScalesWithActivationFrequency) {
  for (std::size_t m : {2u, 3u, 5u}) {
    FfnProbe p;
    p.x = Matrix(m + 1, 2);
    for (std::size_t i = 0; i < m; ++i) p.x(i, 0) = 1.0;  // activates neuron 0 only
    p.x(m, 1) = 1.0;                                       // activates neuron 1 only
    p.w_u = Matrix{{1.0, -25.0}, {-25.0, 1.0}};
    p.w_d = Matrix{{1.0, 1.0}, {1.0, 1.0}};
    const Vector mass = neuron_grad_mass(p);
    EXPECT_NEAR(mass[0] / mass[1], static_cast<double>(m), 1e-6);
    // Independent magnitude: |dL/dA| = 2, one token contributes 2 silu'(1).
    const double s = 1.0 / (1.0 + std::exp(-1.0));
    EXPECT_NEAR(mass[1], 2.0 * (s * (1.0 + 1.0 * (1.0 - s))), 1e-9);
  }
}

TEST(FfnGrads, AgreeWithLibraryNumericGrads) {
  std::mt19937_64 gen(59);
  FfnProbe p{to_matrix(oracle::random_rows(gen, 3, 4)), to_matrix(oracle::random_rows(gen, 4, 3)),
             to_matrix(oracle::random_rows(gen, 2, 3)), FfnLoss::sum_of_squares};
  const auto a = ffn_neuron_grads(p);
  const auto n = ffn_numeric_grads(p);
  const auto ra = to_rows(a.w_u), rn = to_rows(n.w_u);
  for (std::size_t i = 0; i < ra.size(); ++i)
    for (std::size_t j = 0; j < ra[i].size(); ++j) EXPECT_NEAR(ra[i][j], rn[i][j], 1e-6);
}
