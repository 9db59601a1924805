#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsm/errors.hpp"
#include "tsm/graph.hpp"
#include "tsm/rng.hpp"

namespace tsm {

// Node embeddings from a truncated SVD of the biadjacency matrix W:
// W ~= P S Q^T, u_vectors = P*sqrt(S), v_vectors = Q*sqrt(S). Rows of
// u_vectors are test vectors, rows of v_vectors statement/fault vectors
// in graph V-index order.
struct EmbeddingSet {
  std::size_t k = 0;
  Eigen::MatrixXd u_vectors;  // |U| x k
  Eigen::MatrixXd v_vectors;  // |V| x k
  Eigen::VectorXd singular_values;  // length k, nonincreasing
};

enum class SimilarityMode { kCosine, kConstant };

// Pairwise test similarity, upper triangle only (i < j). Values in [0,1].
struct SimilarityMatrix {
  std::size_t n = 0;
  SimilarityMode mode = SimilarityMode::kCosine;
  double constant_value = 0.0;
  std::vector<double> upper;  // row-major strict upper triangle

  static std::size_t pair_index(std::size_t n, std::size_t i, std::size_t j) {
    // i < j required; offset of (i,j) in row-major strict upper triangle.
    return i * n - i * (i + 1) / 2 + (j - i - 1);
  }

  double at(std::size_t i, std::size_t j) const {
    if (i == j) throw ContractViolation("similarity at(i,i) is undefined");
    if (i > j) std::swap(i, j);
    if (j >= n) throw ContractViolation("similarity index out of range");
    if (mode == SimilarityMode::kConstant) return constant_value;
    return upper[pair_index(n, i, j)];
  }
};

namespace detail {

inline Eigen::MatrixXd biadjacency(const BipartiteGraph& g) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.u_size),
                                            static_cast<Eigen::Index>(g.v_size));
  for (std::size_t u = 0; u < g.u_size; ++u)
    for (std::size_t v : g.adj[u])
      w(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = 1.0;
  return w;
}

// Flip each singular-vector pair so the largest-magnitude entry of the
// left vector is nonnegative. Removes the sign ambiguity of SVD.
inline void fix_signs(Eigen::MatrixXd& p, Eigen::MatrixXd& q) {
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    Eigen::Index at = 0;
    p.col(c).cwiseAbs().maxCoeff(&at);
    if (p(at, c) < 0.0) {
      p.col(c) = -p.col(c);
      q.col(c) = -q.col(c);
    }
  }
}

// Randomized range-finder SVD (Halko et al. scheme): Gaussian sketch,
// power iterations for spectral decay, QR re-orthonormalization, small
// dense SVD of the projected matrix.
inline void randomized_svd(const Eigen::MatrixXd& w, std::size_t k, std::uint64_t seed,
                           Eigen::MatrixXd& p, Eigen::VectorXd& s, Eigen::MatrixXd& q) {
  constexpr std::size_t kOversample = 10;
  constexpr int kPowerIters = 2;
  const Eigen::Index rows = w.rows();
  const Eigen::Index cols = w.cols();
  const Eigen::Index l = std::min<Eigen::Index>(static_cast<Eigen::Index>(k + kOversample),
                                                std::min(rows, cols));

  auto rng = make_rng(seed, seed_stream::kSvd);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd omega(cols, l);
  for (Eigen::Index i = 0; i < cols; ++i)
    for (Eigen::Index j = 0; j < l; ++j) omega(i, j) = gauss(rng);

  Eigen::MatrixXd y = w * omega;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
  Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(rows, l);
  for (int it = 0; it < kPowerIters; ++it) {
    Eigen::MatrixXd z = w.transpose() * basis;
    Eigen::HouseholderQR<Eigen::MatrixXd> qrz(z);
    z = qrz.householderQ() * Eigen::MatrixXd::Identity(cols, l);
    Eigen::MatrixXd y2 = w * z;
    Eigen::HouseholderQR<Eigen::MatrixXd> qry(y2);
    basis = qry.householderQ() * Eigen::MatrixXd::Identity(rows, l);
  }

  Eigen::MatrixXd b = basis.transpose() * w;  // l x cols
  Eigen::BDCSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::Index kk = std::min<Eigen::Index>(static_cast<Eigen::Index>(k), svd.singularValues().size());
  p = basis * svd.matrixU().leftCols(kk);
  s = svd.singularValues().head(kk);
  q = svd.matrixV().leftCols(kk);
}

}  // namespace detail

// Threshold above which the randomized path replaces dense SVD.
inline constexpr std::size_t kDenseSvdCellLimit = 4'000'000;

inline EmbeddingSet compute_embeddings(const BipartiteGraph& g, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("compute_embeddings: k must be >= 1");
  if (g.edge_count == 0) throw ValidationError("compute_embeddings: graph has no edges");

  const std::size_t kmax = std::min(g.u_size, g.v_size);
  if (k > kmax) k = kmax;  // rank bound; callers may log the clamp

  Eigen::MatrixXd w = detail::biadjacency(g);
  Eigen::MatrixXd p, q;
  Eigen::VectorXd s;
  if (g.u_size * g.v_size <= kDenseSvdCellLimit) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto kk = static_cast<Eigen::Index>(k);
    p = svd.matrixU().leftCols(kk);
    s = svd.singularValues().head(kk);
    q = svd.matrixV().leftCols(kk);
  } else {
    detail::randomized_svd(w, k, seed, p, s, q);
  }
  detail::fix_signs(p, q);

  EmbeddingSet emb;
  emb.k = static_cast<std::size_t>(s.size());
  Eigen::VectorXd root = s.cwiseMax(0.0).cwiseSqrt();
  emb.u_vectors = p * root.asDiagonal();
  emb.v_vectors = q * root.asDiagonal();
  emb.singular_values = s;

  if (!emb.u_vectors.allFinite() || !emb.v_vectors.allFinite() || !emb.singular_values.allFinite())
    throw SolverError("compute_embeddings: non-finite values in decomposition");
  return emb;
}

// Rank-k reconstruction P S Q^T expressed through the stored vectors
// (u_vectors v_vectors^T = P S Q^T since each carries sqrt(S)).
inline Eigen::MatrixXd reconstruct(const EmbeddingSet& emb) {
  return emb.u_vectors * emb.v_vectors.transpose();
}

inline SimilarityMatrix compute_similarity(const EmbeddingSet& emb, SimilarityMode mode,
                                           double constant_value = 0.5) {
  SimilarityMatrix sim;
  sim.n = static_cast<std::size_t>(emb.u_vectors.rows());
  sim.mode = mode;
  sim.constant_value = constant_value;

  if (mode == SimilarityMode::kConstant) {
    if (constant_value < 0.0 || constant_value > 1.0)
      throw ValidationError("constant similarity must be in [0, 1]");
    return sim;
  }
  sim.upper.assign(sim.n * (sim.n - 1) / 2, 0.0);

  Eigen::VectorXd norms = emb.u_vectors.rowwise().norm();
  for (std::size_t i = 0; i < sim.n; ++i) {
    for (std::size_t j = i + 1; j < sim.n; ++j) {
      const double ni = norms(static_cast<Eigen::Index>(i));
      const double nj = norms(static_cast<Eigen::Index>(j));
      double c = 0.0;
      if (ni > 0.0 && nj > 0.0) {
        c = std::abs(emb.u_vectors.row(static_cast<Eigen::Index>(i))
                         .dot(emb.u_vectors.row(static_cast<Eigen::Index>(j)))) /
            (ni * nj);
        c = std::clamp(c, 0.0, 1.0);
      }
      sim.upper[SimilarityMatrix::pair_index(sim.n, i, j)] = c;
    }
  }
  return sim;
}

// Text export, 3-line header (rows, cols, dtype) then one row per line.
inline void export_embeddings(const Eigen::MatrixXd& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write embedding file: " + path);
  out << m.rows() << "\n" << m.cols() << "\nfloat64\n";
  out.precision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
    out << "\n";
  }
}

// Sparse coordinate text: `i j c_ij` per line, upper triangle.
inline void export_similarity(const SimilarityMatrix& sim, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write similarity file: " + path);
  out.precision(17);
  for (std::size_t i = 0; i < sim.n; ++i)
    for (std::size_t j = i + 1; j < sim.n; ++j) out << i << ' ' << j << ' ' << sim.at(i, j) << '\n';
}

}  // namespace tsm
