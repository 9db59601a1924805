#include "tsm/mlp.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

// Central finite difference of a scalar loss with respect to every
// parameter of the net, compared against one backward() pass.
double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::max(1e-12, std::max(a.norm(), b.norm()));
  return (a - b).norm() / denom;
}

}  // namespace

TEST(Orthogonal, TallMatrixHasOrthonormalColumns) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd q = tsm::orthogonal_matrix(64, 16, 1.0, rng);
  const Eigen::MatrixXd gram = q.transpose() * q;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(16, 16)).norm(), 1e-10);
}

TEST(Orthogonal, WideMatrixHasOrthonormalRows) {
  std::mt19937_64 rng(2);
  const double gain = std::sqrt(2.0);
  const Eigen::MatrixXd q = tsm::orthogonal_matrix(8, 32, gain, rng);
  const Eigen::MatrixXd gram = q * q.transpose();
  EXPECT_LT((gram - gain * gain * Eigen::MatrixXd::Identity(8, 8)).norm(), 1e-10);
}

TEST(Orthogonal, GainScalesSpectrum) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd q = tsm::orthogonal_matrix(10, 10, 0.01, rng);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q);
  EXPECT_NEAR(svd.singularValues().maxCoeff(), 0.01, 1e-12);
  EXPECT_NEAR(svd.singularValues().minCoeff(), 0.01, 1e-12);
}

TEST(Mlp, ShapesAndInit) {
  std::mt19937_64 rng(4);
  tsm::Mlp net({5, 64, 64, 7}, 0.01, rng);
  EXPECT_EQ(net.input_dim(), 5u);
  EXPECT_EQ(net.output_dim(), 7u);
  EXPECT_EQ(net.param_count(), 5u * 64 + 64 + 64u * 64 + 64 + 64u * 7 + 7);
  for (const auto& l : net.layers()) EXPECT_TRUE(l.b.isZero());
  // Output layer carries the small gain.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(net.layers().back().w);
  EXPECT_NEAR(svd.singularValues().maxCoeff(), 0.01, 1e-12);
  EXPECT_THROW(tsm::Mlp({4}, 1.0, rng), tsm::ValidationError);
}

TEST(Mlp, ForwardMatchesHandComputation) {
  std::mt19937_64 rng(5);
  tsm::Mlp net({2, 3, 1}, 1.0, rng);
  // Plant known parameters through the flat interface.
  std::vector<double> flat(net.param_count());
  //              W1 (3x2, column-major storage)   b1        W2 (1x3)        b2
  const std::vector<double> planted = {0.5, -0.25, 1.0, 0.75, -0.5, 0.25,
                                       0.1, 0.2,   -0.3, 2.0,  -1.0, 0.5,  -0.7};
  ASSERT_EQ(planted.size(), flat.size());
  net.read_params(planted.data());

  Eigen::MatrixXd x(1, 2);
  x << 0.3, -0.6;
  Eigen::Matrix<double, 3, 2> w1;
  w1 << 0.5, 0.75, -0.25, -0.5, 1.0, 0.25;  // column-major fill order above
  Eigen::Vector3d b1(0.1, 0.2, -0.3);
  Eigen::RowVector3d w2(2.0, -1.0, 0.5);
  const Eigen::Vector3d h = ((w1 * x.transpose()).col(0) + b1).array().tanh();
  const double expected = w2.dot(h) - 0.7;

  const Eigen::MatrixXd y = net.forward(x);
  ASSERT_EQ(y.rows(), 1);
  ASSERT_EQ(y.cols(), 1);
  EXPECT_NEAR(y(0, 0), expected, 1e-12);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t in = 2 + trial % 4;
    const std::size_t hid = 4 + trial;
    tsm::Mlp net({in, hid, hid, 3}, trial % 2 ? 1.0 : 0.01, rng);
    const std::size_t n = net.param_count();

    Eigen::MatrixXd x(4, in);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
    Eigen::MatrixXd wy(4, 3);
    for (Eigen::Index i = 0; i < wy.size(); ++i) wy.data()[i] = gauss(rng);

    // loss = sum(wy .* output)
    net.zero_grad();
    net.forward(x);
    net.backward(wy);
    Eigen::VectorXd analytic(n);
    net.write_grads(analytic.data());

    Eigen::VectorXd theta(n);
    net.write_params(theta.data());
    Eigen::VectorXd numeric(n);
    const double h = 1e-6;
    for (std::size_t p = 0; p < n; ++p) {
      Eigen::VectorXd tp = theta;
      tp(p) += h;
      net.read_params(tp.data());
      const double up = (net.forward(x).array() * wy.array()).sum();
      tp(p) -= 2 * h;
      net.read_params(tp.data());
      const double dn = (net.forward(x).array() * wy.array()).sum();
      numeric(p) = (up - dn) / (2 * h);
    }
    net.read_params(theta.data());
    EXPECT_LT(relative_error(analytic, numeric), 1e-7) << "trial " << trial;
  }
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  tsm::Mlp net({3, 8, 2}, 1.0, rng);
  Eigen::MatrixXd x(2, 3);
  x << 0.1, -0.4, 0.9, -1.2, 0.3, 0.05;
  Eigen::MatrixXd wy(2, 2);
  wy << 1.0, -0.5, 0.25, 2.0;

  net.forward(x);
  const Eigen::MatrixXd dx = net.backward(wy);
  ASSERT_EQ(dx.rows(), 2);
  ASSERT_EQ(dx.cols(), 3);

  const double h = 1e-6;
  for (Eigen::Index r = 0; r < 2; ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) {
      Eigen::MatrixXd xp = x;
      xp(r, c) += h;
      const double up = (net.forward(xp).array() * wy.array()).sum();
      xp(r, c) -= 2 * h;
      const double dn = (net.forward(xp).array() * wy.array()).sum();
      EXPECT_NEAR(dx(r, c), (up - dn) / (2 * h), 1e-6);
    }
  }
}

TEST(Mlp, GradientsAccumulateAcrossBackwardCalls) {
  std::mt19937_64 rng(8);
  tsm::Mlp net({2, 4, 1}, 1.0, rng);
  Eigen::MatrixXd x(1, 2);
  x << 0.5, -0.5;
  Eigen::MatrixXd dy = Eigen::MatrixXd::Ones(1, 1);

  net.zero_grad();
  net.forward(x);
  net.backward(dy);
  Eigen::VectorXd once(net.param_count());
  net.write_grads(once.data());

  net.forward(x);
  net.backward(dy);
  Eigen::VectorXd twice(net.param_count());
  net.write_grads(twice.data());
  EXPECT_LT((twice - 2.0 * once).norm(), 1e-12);

  net.zero_grad();
  net.write_grads(twice.data());
  EXPECT_DOUBLE_EQ(twice.norm(), 0.0);
}

TEST(Mlp, BackwardWithoutForwardThrows) {
  std::mt19937_64 rng(9);
  tsm::Mlp net({2, 3, 1}, 1.0, rng);
  EXPECT_THROW(net.backward(Eigen::MatrixXd::Ones(1, 1)), tsm::ContractViolation);
}

TEST(Mlp, ParamRoundTripAndFiniteCheck) {
  std::mt19937_64 rng(10);
  tsm::Mlp a({3, 5, 2}, 1.0, rng);
  tsm::Mlp b({3, 5, 2}, 1.0, rng);
  Eigen::VectorXd theta(a.param_count());
  a.write_params(theta.data());
  b.read_params(theta.data());
  Eigen::VectorXd check(b.param_count());
  b.write_params(check.data());
  EXPECT_TRUE(theta == check);

  EXPECT_TRUE(a.params_finite());
  theta(4) = std::numeric_limits<double>::quiet_NaN();
  a.read_params(theta.data());
  EXPECT_FALSE(a.params_finite());
}

TEST(Adam, FirstStepMatchesClosedForm) {
  const double lr = 3e-4, eps = 1e-5;
  tsm::Adam opt(3, lr, 0.9, 0.999, eps);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd grads(3);
  grads << 0.5, -2.0, 1e-9;
  opt.step(params, grads);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double expected = -lr * grads(i) / (std::abs(grads(i)) + eps);
    EXPECT_NEAR(params(i), expected, 1e-15);
  }
}

TEST(Adam, ZeroGradientLeavesParamsUntouched) {
  tsm::Adam opt(4, 1e-3);
  Eigen::VectorXd params(4);
  params << 1.0, -2.0, 3.0, -4.0;
  const Eigen::VectorXd before = params;
  for (int i = 0; i < 5; ++i) opt.step(params, Eigen::VectorXd::Zero(4));
  EXPECT_TRUE(params == before);
}

TEST(Adam, DimensionMismatchThrows) {
  tsm::Adam opt(3, 1e-3);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(opt.step(params, Eigen::VectorXd::Zero(2)), tsm::ContractViolation);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  tsm::Adam opt(2, 0.05);
  Eigen::VectorXd params(2);
  params << 4.0, -3.0;
  for (int i = 0; i < 2000; ++i) {
    const Eigen::VectorXd grads = 2.0 * params;
    opt.step(params, grads);
  }
  EXPECT_LT(params.norm(), 1e-3);
}
