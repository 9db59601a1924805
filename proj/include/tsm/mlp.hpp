#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "tsm/errors.hpp"

namespace tsm {

// Orthogonal weight init: QR of a Gaussian draw, sign-fixed via diag(R)
// so the distribution is uniform over orthogonal matrices, scaled by
// `gain`. Rows (or columns, whichever is fewer) come out orthonormal.
inline Eigen::MatrixXd orthogonal_matrix(Eigen::Index rows, Eigen::Index cols, double gain,
                                         std::mt19937_64& rng) {
  const bool transpose = rows < cols;
  const Eigen::Index r = std::max(rows, cols);
  const Eigen::Index c = std::min(rows, cols);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) a(i, j) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  Eigen::VectorXd d = qr.matrixQR().diagonal().head(c);
  for (Eigen::Index j = 0; j < c; ++j)
    if (d(j) < 0.0) q.col(j) = -q.col(j);
  if (transpose) return gain * q.transpose();
  return gain * q;
}

// Fully connected net with tanh hidden activations and a linear output
// layer. Forward caches activations per layer; backward accumulates
// parameter gradients and returns the input gradient. Batch rows are
// samples.
class Mlp {
 public:
  struct Layer {
    Eigen::MatrixXd w;   // out x in
    Eigen::VectorXd b;
    Eigen::MatrixXd gw;
    Eigen::VectorXd gb;
  };

  // sizes = {input, hidden..., output}; hidden gain sqrt(2), output
  // layer scaled by out_gain, biases zero.
  Mlp(const std::vector<std::size_t>& sizes, double out_gain, std::mt19937_64& rng) {
    if (sizes.size() < 2) throw ValidationError("network needs input and output sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      const bool last = i + 2 == sizes.size();
      Layer l;
      l.w = orthogonal_matrix(static_cast<Eigen::Index>(sizes[i + 1]),
                              static_cast<Eigen::Index>(sizes[i]),
                              last ? out_gain : std::sqrt(2.0), rng);
      l.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sizes[i + 1]));
      l.gw = Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols());
      l.gb = Eigen::VectorXd::Zero(l.b.size());
      layers_.push_back(std::move(l));
    }
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(layers_.front().w.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers_.back().w.rows()); }
  const std::vector<Layer>& layers() const { return layers_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) {
    acts_.clear();
    acts_.push_back(x);
    Eigen::MatrixXd h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = (h * layers_[i].w.transpose()).rowwise() + layers_[i].b.transpose();
      if (i + 1 < layers_.size()) h = h.array().tanh();
      acts_.push_back(h);
    }
    return h;
  }

  // dy is dL/doutput for the batch of the latest forward().
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) {
    if (acts_.size() != layers_.size() + 1)
      throw ContractViolation("backward without a matching forward");
    Eigen::MatrixXd grad = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (i + 1 < layers_.size()) {
        // acts_[i+1] holds the tanh output of layer i
        grad = grad.array() * (1.0 - acts_[i + 1].array().square());
      }
      layers_[i].gw += grad.transpose() * acts_[i];
      layers_[i].gb += grad.colwise().sum().transpose();
      grad = grad * layers_[i].w;
    }
    return grad;
  }

  void zero_grad() {
    for (auto& l : layers_) {
      l.gw.setZero();
      l.gb.setZero();
    }
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }

  void write_params(double* out) const {
    std::size_t off = 0;
    for (const auto& l : layers_) {
      std::copy(l.w.data(), l.w.data() + l.w.size(), out + off);
      off += static_cast<std::size_t>(l.w.size());
      std::copy(l.b.data(), l.b.data() + l.b.size(), out + off);
      off += static_cast<std::size_t>(l.b.size());
    }
  }

  void read_params(const double* in) {
    std::size_t off = 0;
    for (auto& l : layers_) {
      std::copy(in + off, in + off + l.w.size(), l.w.data());
      off += static_cast<std::size_t>(l.w.size());
      std::copy(in + off, in + off + l.b.size(), l.b.data());
      off += static_cast<std::size_t>(l.b.size());
    }
  }

  void write_grads(double* out) const {
    std::size_t off = 0;
    for (const auto& l : layers_) {
      std::copy(l.gw.data(), l.gw.data() + l.gw.size(), out + off);
      off += static_cast<std::size_t>(l.gw.size());
      std::copy(l.gb.data(), l.gb.data() + l.gb.size(), out + off);
      off += static_cast<std::size_t>(l.gb.size());
    }
  }

  bool params_finite() const {
    for (const auto& l : layers_)
      if (!l.w.allFinite() || !l.b.allFinite()) return false;
    return true;
  }

 private:
  std::vector<Layer> layers_;
  std::vector<Eigen::MatrixXd> acts_;
};

// First-order adaptive-moment optimizer over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t dim, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-5)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim))),
        v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim))) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw ContractViolation("optimizer dimension mismatch");
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grads;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grads.array().square().matrix();
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    params -= (lr_ * (m_ / bc1).array() / ((v_ / bc2).array().sqrt() + eps_)).matrix();
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

}  // namespace tsm
