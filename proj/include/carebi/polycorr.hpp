#pragma once

// Polychoric correlation for ordinal items, two-step estimation:
// thresholds from univariate margins, then a one-dimensional likelihood
// search for each pairwise correlation with thresholds held fixed.
// Includes sampling adequacy (KMO) and bootstrap asymptotic variances
// for downstream weighted least squares.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "carebi/codebook.hpp"
#include "carebi/common.hpp"
#include "carebi/dist.hpp"
#include "carebi/optim.hpp"
#include "carebi/rng.hpp"

namespace carebi {

// Thresholds for one item. codes lists the observed category codes in
// ascending order; taus has one entry fewer. Band k covers codes[k], i.e.
// latent interval (tau[k-1], tau[k]] with tau[-1] = -inf, tau[K-1] = +inf.
struct ThresholdSet {
  std::vector<double> taus;
  std::vector<int> codes;

  int n_bands() const { return static_cast<int>(codes.size()); }
  int band_of(int code) const {
    for (int k = 0; k < n_bands(); ++k)
      if (codes[k] == code) return k;
    throw NumericError("category code " + std::to_string(code) +
                       " not present in threshold set");
  }
  // tau with infinite padding: index -1 and n_bands()-1 are the ends
  double tau_at(int k) const {
    if (k < 0) return -std::numeric_limits<double>::infinity();
    if (k >= static_cast<int>(taus.size()))
      return std::numeric_limits<double>::infinity();
    return taus[static_cast<std::size_t>(k)];
  }
};

inline ThresholdSet estimate_thresholds(const std::vector<int>& col,
                                        const std::string& what = "item") {
  if (col.empty()) throw UserError("no observations for " + what);
  std::map<int, long> counts;
  for (int v : col) ++counts[v];
  if (counts.size() < 2)
    throw NumericError("degenerate item: " + what +
                       " has a single observed category");
  ThresholdSet ts;
  const double n = static_cast<double>(col.size());
  double cum = 0.0;
  std::size_t k = 0;
  for (const auto& [code, cnt] : counts) {
    ts.codes.push_back(code);
    if (++k < counts.size()) {
      cum += static_cast<double>(cnt);
      ts.taus.push_back(dist::norm_quantile(cum / n));
    }
  }
  return ts;
}

struct PairResult {
  double rho = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// Cumulative grid F[a][b] = P(X <= tau_i[a-1], Y <= tau_j[b-1]) shared by
// every cell, so each likelihood evaluation costs (ki-1)(kj-1) bivariate
// CDF calls instead of four per cell.
inline void cumulative_grid(const ThresholdSet& ti, const ThresholdSet& tj,
                            double rho, std::vector<double>& f) {
  const int ki = ti.n_bands(), kj = tj.n_bands();
  f.assign(static_cast<std::size_t>(ki + 1) * (kj + 1), 0.0);
  auto at = [&](int a, int b) -> double& {
    return f[static_cast<std::size_t>(a) * (kj + 1) + b];
  };
  for (int a = 1; a <= ki; ++a)
    for (int b = 1; b <= kj; ++b) {
      if (a == ki && b == kj)
        at(a, b) = 1.0;
      else if (a == ki)
        at(a, b) = dist::norm_cdf(tj.taus[static_cast<std::size_t>(b - 1)]);
      else if (b == kj)
        at(a, b) = dist::norm_cdf(ti.taus[static_cast<std::size_t>(a - 1)]);
      else
        at(a, b) = dist::bvn_cdf(ti.taus[static_cast<std::size_t>(a - 1)],
                                 tj.taus[static_cast<std::size_t>(b - 1)], rho);
    }
}

}  // namespace detail

constexpr double kRhoClamp = 0.999;

namespace detail {

// True when the occupied cells form a strictly monotone bijection between
// the two band sets: perfect association. The empty cells are then
// structural, so the continuity adjustment must not apply and the
// likelihood is maximized at the clamp boundary.
inline bool perfect_association(const std::vector<double>& table, int ki, int kj) {
  if (ki != kj) return false;
  std::vector<int> to(static_cast<std::size_t>(ki), -1);
  for (int a = 0; a < ki; ++a)
    for (int b = 0; b < kj; ++b) {
      if (table[static_cast<std::size_t>(a) * kj + b] == 0.0) continue;
      if (to[static_cast<std::size_t>(a)] != -1) return false;
      to[static_cast<std::size_t>(a)] = b;
    }
  bool inc = true, dec = true;
  for (int a = 1; a < ki; ++a) {
    inc = inc && to[static_cast<std::size_t>(a)] > to[static_cast<std::size_t>(a - 1)];
    dec = dec && to[static_cast<std::size_t>(a)] < to[static_cast<std::size_t>(a - 1)];
  }
  return inc || dec;
}

}  // namespace detail

// Pairwise polychoric correlation with thresholds held fixed. Zero-count
// cells receive a 0.5 continuity adjustment in the likelihood weights,
// except for perfect-association tables whose zeros are structural.
inline PairResult polychoric_pair(const std::vector<int>& col_i,
                                  const std::vector<int>& col_j,
                                  const ThresholdSet& ti, const ThresholdSet& tj,
                                  double tol = 1e-7) {
  if (col_i.size() != col_j.size())
    throw UserError("paired columns have different lengths");
  const int ki = ti.n_bands(), kj = tj.n_bands();
  std::vector<double> table(static_cast<std::size_t>(ki) * kj, 0.0);
  for (std::size_t r = 0; r < col_i.size(); ++r)
    table[static_cast<std::size_t>(ti.band_of(col_i[r])) * kj +
          tj.band_of(col_j[r])] += 1.0;
  if (!detail::perfect_association(table, ki, kj))
    for (double& c : table)
      if (c == 0.0) c = 0.5;

  std::vector<double> grid;
  auto nll = [&](double rho) {
    detail::cumulative_grid(ti, tj, rho, grid);
    auto at = [&](int a, int b) {
      return grid[static_cast<std::size_t>(a) * (kj + 1) + b];
    };
    double ll = 0.0;
    for (int a = 0; a < ki; ++a)
      for (int b = 0; b < kj; ++b) {
        const double w = table[static_cast<std::size_t>(a) * kj + b];
        if (w == 0.0) continue;
        const double p =
            at(a + 1, b + 1) - at(a, b + 1) - at(a + 1, b) + at(a, b);
        ll += w * std::log(std::max(p, 1e-300));
      }
    return -ll;
  };

  auto opt = optim::brent_min(nll, -kRhoClamp, kRhoClamp, tol, 300);
  if (!opt.converged)
    throw NumericError(
        "polychoric search did not converge after " +
        std::to_string(opt.iterations) + " iterations (last rho=" +
        std::to_string(opt.x) + ", nll=" + std::to_string(opt.f) + ")");
  // snap to the clamp boundary when it dominates the interior point
  for (double edge : {-kRhoClamp, kRhoClamp})
    if (nll(edge) <= opt.f) {
      opt.x = edge;
      opt.f = nll(edge);
    }
  PairResult res;
  res.rho = std::clamp(opt.x, -kRhoClamp, kRhoClamp);
  res.loglik = -opt.f;
  res.iterations = opt.iterations;
  res.converged = true;
  return res;
}

inline PairResult polychoric_pair(const std::vector<int>& col_i,
                                  const std::vector<int>& col_j,
                                  double tol = 1e-7) {
  return polychoric_pair(col_i, col_j, estimate_thresholds(col_i),
                         estimate_thresholds(col_j), tol);
}

struct PolychoricMatrix {
  Eigen::MatrixXd rho;
  std::vector<ThresholdSet> thresholds;
  std::vector<std::string> item_ids;
  long n_obs = 0;
  bool repaired = false;
  double min_eig_before = 0.0;
};

constexpr double kPsdFloor = 1e-6;

// Clip negative eigenvalues and rescale back to unit diagonal, repeating
// until the smallest eigenvalue reaches the floor. Returns true when a
// repair was applied.
inline bool repair_psd(Eigen::MatrixXd& r, double* min_eig_before = nullptr,
                       double floor = kPsdFloor, int max_rounds = 50) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  double min_eig = es.eigenvalues().minCoeff();
  if (min_eig_before) *min_eig_before = min_eig;
  if (min_eig >= floor) return false;
  for (int round = 0; round < max_rounds && min_eig < floor; ++round) {
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(2.0 * floor);
    r = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    Eigen::VectorXd d = r.diagonal().cwiseSqrt();
    for (int i = 0; i < r.rows(); ++i)
      for (int j = 0; j < r.cols(); ++j) r(i, j) /= d[i] * d[j];
    r = 0.5 * (r + r.transpose());
    r.diagonal().setOnes();
    es.compute(r);
    min_eig = es.eigenvalues().minCoeff();
  }
  if (min_eig < floor)
    throw NumericError("correlation matrix could not be repaired to be "
                       "positive definite (min eigenvalue " +
                       std::to_string(min_eig) + ")");
  return true;
}

inline PolychoricMatrix polychoric_matrix(
    const std::vector<std::vector<int>>& cols,
    const std::vector<std::string>& item_ids, double tol = 1e-7) {
  const int p = static_cast<int>(cols.size());
  if (p < 2) throw UserError("need at least two items for a correlation matrix");
  PolychoricMatrix out;
  out.item_ids = item_ids;
  out.n_obs = static_cast<long>(cols[0].size());
  out.thresholds.reserve(cols.size());
  for (int i = 0; i < p; ++i)
    out.thresholds.push_back(estimate_thresholds(
        cols[static_cast<std::size_t>(i)],
        i < static_cast<int>(item_ids.size()) ? item_ids[static_cast<std::size_t>(i)]
                                              : "item " + std::to_string(i + 1)));
  out.rho = Eigen::MatrixXd::Identity(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) {
      const auto pr = polychoric_pair(cols[static_cast<std::size_t>(i)],
                                      cols[static_cast<std::size_t>(j)],
                                      out.thresholds[static_cast<std::size_t>(i)],
                                      out.thresholds[static_cast<std::size_t>(j)],
                                      tol);
      out.rho(i, j) = out.rho(j, i) = pr.rho;
    }
  out.repaired = repair_psd(out.rho, &out.min_eig_before);
  return out;
}

inline PolychoricMatrix polychoric_matrix(const ResponseMatrix& m,
                                          double tol = 1e-7) {
  return polychoric_matrix(m.dense(), m.item_ids, tol);
}

struct KmoReport {
  double overall = 0.0;
  std::vector<double> per_item;
};

// Kaiser-Meyer-Olkin sampling adequacy from anti-image partial correlations.
inline KmoReport kmo(const Eigen::MatrixXd& r) {
  const int p = static_cast<int>(r.rows());
  if (p < 2 || r.cols() != p) throw UserError("KMO needs a square matrix, p >= 2");
  if (p == 2) {
    // with two variables the partial equals the raw correlation, so the
    // ratio is exactly one half whenever it is defined at all
    if (r(0, 1) == 0.0)
      throw NumericError("KMO undefined for uncorrelated variables");
    KmoReport rep;
    rep.overall = 0.5;
    rep.per_item = {0.5, 0.5};
    return rep;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(r);
  if (!lu.isInvertible())
    throw NumericError("correlation matrix is singular; cannot form "
                       "anti-image for KMO");
  const Eigen::MatrixXd s = lu.inverse();
  Eigen::MatrixXd q(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      q(i, j) = -s(i, j) / std::sqrt(s(i, i) * s(j, j));

  KmoReport rep;
  rep.per_item.resize(static_cast<std::size_t>(p));
  double sum_r2_all = 0.0, sum_q2_all = 0.0;
  for (int i = 0; i < p; ++i) {
    double sum_r2 = 0.0, sum_q2 = 0.0;
    for (int j = 0; j < p; ++j) {
      if (j == i) continue;
      sum_r2 += r(i, j) * r(i, j);
      sum_q2 += q(i, j) * q(i, j);
    }
    if (sum_r2 + sum_q2 == 0.0)
      throw NumericError("KMO undefined: item " + std::to_string(i + 1) +
                         " is uncorrelated with every other item");
    rep.per_item[static_cast<std::size_t>(i)] = sum_r2 / (sum_r2 + sum_q2);
    sum_r2_all += sum_r2;
    sum_q2_all += sum_q2;
  }
  rep.overall = sum_r2_all / (sum_r2_all + sum_q2_all);
  return rep;
}

inline KmoReport kmo(const PolychoricMatrix& m) { return kmo(m.rho); }

enum class WeightMethod { bootstrap, unit };

// Weights for diagonally weighted least squares, one entry per unordered
// pair (i < j, row-major order over the upper triangle).
struct WeightSet {
  std::vector<double> variances;
  WeightMethod method = WeightMethod::unit;
  int n_boot = 0;
};

inline std::size_t pair_index(int i, int j, int p) {
  if (i > j) std::swap(i, j);
  return static_cast<std::size_t>(i) * p - static_cast<std::size_t>(i) * (i + 1) / 2 +
         (j - i - 1);
}

inline WeightSet unit_weights(int p) {
  WeightSet w;
  w.method = WeightMethod::unit;
  w.variances.assign(static_cast<std::size_t>(p) * (p - 1) / 2, 1.0);
  return w;
}

// Nonparametric bootstrap of the pairwise polychoric estimates. Each
// replicate resamples rows with a deterministic per-replicate stream;
// replicates that degenerate an item are redrawn a bounded number of times.
inline WeightSet bootstrap_weights(const std::vector<std::vector<int>>& cols,
                                   int n_boot, std::uint64_t seed,
                                   double tol = 1e-4) {
  const int p = static_cast<int>(cols.size());
  const std::size_t n = cols.empty() ? 0 : cols[0].size();
  const std::size_t n_pairs = static_cast<std::size_t>(p) * (p - 1) / 2;
  if (n_boot < 50) throw UserError("bootstrap needs at least 50 replicates");
  std::vector<double> sum(n_pairs, 0.0), sum2(n_pairs, 0.0);

  std::vector<std::vector<int>> rcols(static_cast<std::size_t>(p),
                                      std::vector<int>(n));
  for (int b = 0; b < n_boot; ++b) {
    bool ok = false;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      rng::Stream st(rng::derive(seed, "boot", static_cast<std::uint64_t>(b) * 64 +
                                                   static_cast<std::uint64_t>(attempt)));
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t pick = st.next_below(n);
        for (int c = 0; c < p; ++c)
          rcols[static_cast<std::size_t>(c)][r] =
              cols[static_cast<std::size_t>(c)][pick];
      }
      ok = true;
      for (int c = 0; c < p && ok; ++c) {
        const auto& col = rcols[static_cast<std::size_t>(c)];
        ok = std::any_of(col.begin(), col.end(),
                         [&](int v) { return v != col[0]; });
      }
    }
    if (!ok)
      throw NumericError("bootstrap replicate " + std::to_string(b) +
                         " degenerate after 20 redraws; sample too small");
    std::vector<ThresholdSet> ts;
    ts.reserve(static_cast<std::size_t>(p));
    for (int c = 0; c < p; ++c)
      ts.push_back(estimate_thresholds(rcols[static_cast<std::size_t>(c)]));
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j) {
        const double rho =
            polychoric_pair(rcols[static_cast<std::size_t>(i)],
                            rcols[static_cast<std::size_t>(j)],
                            ts[static_cast<std::size_t>(i)],
                            ts[static_cast<std::size_t>(j)], tol)
                .rho;
        const std::size_t k = pair_index(i, j, p);
        sum[k] += rho;
        sum2[k] += rho * rho;
      }
  }

  WeightSet w;
  w.method = WeightMethod::bootstrap;
  w.n_boot = n_boot;
  w.variances.resize(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const double mean = sum[k] / n_boot;
    const double var = (sum2[k] - n_boot * mean * mean) / (n_boot - 1);
    w.variances[k] = std::max(var, 1e-10);
  }
  return w;
}

inline WeightSet bootstrap_weights(const ResponseMatrix& m, int n_boot,
                                   std::uint64_t seed, double tol = 1e-4) {
  return bootstrap_weights(m.dense(), n_boot, seed, tol);
}

}  // namespace carebi
