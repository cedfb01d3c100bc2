#include "screx/signature.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <limits>

namespace screx {

const char* neuron_kind_name(NeuronKind k) {
  switch (k) {
    case NeuronKind::normal: return "normal";
    case NeuronKind::always_on: return "always-on";
    case NeuronKind::always_off: return "always-off";
    case NeuronKind::input_off: return "input-off";
  }
  return "?";
}

namespace {

struct NullspaceResult {
  Eigen::VectorXd v;       // solution over the kept columns
  double residual = 0;     // |M v| with |v| = 1, unscaled matrix
  double cond_ratio = 0;   // sigma_{c-2} / sigma_0 of the column-scaled matrix
  std::vector<int> kept;   // kept column indices
};

// Right singular vector with the smallest singular value of M after dropping
// structurally dead columns and balancing column norms.
NullspaceResult nullspace(const Eigen::MatrixXd& M, const SolveOptions& opt,
                          int protect_last_cols) {
  const int rows = int(M.rows());
  const int cols = int(M.cols());

  NullspaceResult res;
  for (int j = 0; j < cols; ++j) {
    const bool protect = j >= cols - protect_last_cols;
    if (protect || M.col(j).lpNorm<Eigen::Infinity>() >= opt.dead_col_tol) res.kept.push_back(j);
  }
  const int c = int(res.kept.size());
  if (rows < c) throw TooFewPoints("nullspace: need at least as many rows as unknowns");

  Eigen::MatrixXd A(rows, c);
  Eigen::VectorXd scale(c);
  for (int j = 0; j < c; ++j) {
    const auto col = M.col(res.kept[j]);
    double norm = col.norm();
    if (norm == 0) norm = 1;
    scale[j] = 1.0 / norm;
    A.col(j) = col * scale[j];
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (c >= 2) {
    res.cond_ratio = sv[c - 2] / sv[0];
    if (!(res.cond_ratio > opt.cond_tol))
      throw RankDeficient("nullspace: system is rank deficient (cond ratio " +
                          std::to_string(res.cond_ratio) + ")");
  }
  Eigen::VectorXd v = svd.matrixV().col(c - 1);
  for (int j = 0; j < c; ++j) v[j] *= scale[j];  // undo column balancing
  const double n = v.norm();
  res.v = v / n;
  Eigen::VectorXd full = Eigen::VectorXd::Zero(cols);
  for (int j = 0; j < c; ++j) full[res.kept[j]] = res.v[j];
  res.residual = (M * full).norm();
  res.v = full;
  return res;
}

}  // namespace

SignatureEstimate solve_signature(const std::vector<std::vector<double>>& coord_rows,
                                  const SolveOptions& opt) {
  if (coord_rows.empty()) throw TooFewPoints("solve_signature: no points");
  const int n = int(coord_rows[0].size());
  const int z = int(coord_rows.size());
  if (z < n + 1)
    throw TooFewPoints("solve_signature: " + std::to_string(z) + " points for " +
                       std::to_string(n + 1) + " unknowns");

  Eigen::MatrixXd M(z, n + 1);
  for (int i = 0; i < z; ++i) {
    for (int j = 0; j < n; ++j) M(i, j) = coord_rows[i][j];
    M(i, n) = 1.0;
  }
  NullspaceResult ns = nullspace(M, opt, /*protect_last_cols=*/1);

  SignatureEstimate sig;
  sig.weights.assign(n, 0.0);
  double wnorm = 0;
  for (int j = 0; j < n; ++j) {
    sig.weights[j] = ns.v[j];
    wnorm += ns.v[j] * ns.v[j];
  }
  wnorm = std::sqrt(wnorm);
  if (wnorm < 1e-12)
    throw RankDeficient("solve_signature: weight part of the nullspace vanished");
  for (double& w : sig.weights) w /= wnorm;
  sig.bias = ns.v[n] / wnorm;
  sig.residual = ns.residual;
  for (int j = 0; j < n; ++j) {
    bool kept = false;
    for (int kj : ns.kept)
      if (kj == j) kept = true;
    if (!kept) sig.dead_coords.push_back(j);
  }
  return sig;
}

double recover_bias(std::span<const double> weights, std::span<const double> coords) {
  double dot = 0;
  for (size_t i = 0; i < weights.size(); ++i) dot += weights[i] * coords[i];
  return -dot;
}

void orient_signature(SignatureEstimate& sig, std::span<const double> coords, StateLabel label) {
  double v = sig.bias;
  for (size_t i = 0; i < sig.weights.size(); ++i) v += sig.weights[i] * coords[i];
  const bool positive = v > 0;
  const bool is_a = label == StateLabel::A_side;
  if (positive != is_a) {
    for (double& w : sig.weights) w = -w;
    sig.bias = -sig.bias;
  }
  sig.oriented = true;
}

JointSolution solve_joint(const JointSystem& sys, const SolveOptions& opt) {
  const int z = int(sys.normal_acts.size());
  if (z == 0) throw TooFewPoints("solve_joint: no probe points");
  const int m_norm = int(sys.normal_acts[0].size());

  int cols = m_norm;
  std::vector<int> block_at, indicator_at;
  for (const auto& sp : sys.specials) {
    block_at.push_back(cols);
    cols += int(sp.coords[0].size());
    if (sp.varying) {
      indicator_at.push_back(cols);
      cols += 1;
    } else {
      indicator_at.push_back(-1);
    }
  }
  const int const_col = cols;
  cols += 1;

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(z, cols);
  for (int i = 0; i < z; ++i) {
    for (int j = 0; j < m_norm; ++j) M(i, j) = sys.normal_acts[i][j];
    for (size_t s = 0; s < sys.specials.size(); ++s) {
      const auto& sp = sys.specials[s];
      if (!sp.active[i]) continue;
      const auto& row = sp.coords[i];
      for (size_t j = 0; j < row.size(); ++j) M(i, block_at[s] + int(j)) = row[j];
      if (indicator_at[s] >= 0) M(i, indicator_at[s]) = 1.0;
    }
    M(i, const_col) = 1.0;
  }

  NullspaceResult ns = nullspace(M, opt, /*protect_last_cols=*/1);
  JointSolution out;
  out.residual = ns.residual;
  out.cond_ratio = ns.cond_ratio;
  for (size_t s = 0; s < sys.specials.size(); ++s) {
    const int n_in = int(sys.specials[s].coords[0].size());
    std::vector<double> block(n_in);
    for (int j = 0; j < n_in; ++j) block[j] = ns.v[block_at[s] + j];
    out.blocks.push_back(std::move(block));
    out.block_bias.push_back(indicator_at[s] >= 0 ? ns.v[indicator_at[s]]
                                                  : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

SignatureEstimate signature_from_block(std::span<const double> block, double block_bias,
                                       NeuronKind kind) {
  SignatureEstimate sig;
  sig.kind = kind;
  sig.weights.assign(block.begin(), block.end());
  double n = 0;
  for (double w : sig.weights) n += w * w;
  n = std::sqrt(n);
  if (n < 1e-12) throw RankDeficient("signature_from_block: block vanished");
  for (double& w : sig.weights) w /= n;
  sig.bias = std::isnan(block_bias) ? 0.0 : block_bias / n;
  return sig;
}

}  // namespace screx
