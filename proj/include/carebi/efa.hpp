#pragma once

// Exploratory factor analysis on a polychoric correlation matrix: factor
// count by parallel analysis, extraction by minimum residual, direct
// oblimin rotation, item retention rules, and fit indices.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "carebi/codebook.hpp"
#include "carebi/common.hpp"
#include "carebi/optim.hpp"
#include "carebi/polycorr.hpp"
#include "carebi/rng.hpp"

namespace carebi {

inline Eigen::VectorXd eigenvalues_desc(const Eigen::MatrixXd& r) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  return es.eigenvalues().reverse();
}

enum class PaCriterion { mean, percentile95 };

inline std::string to_string(PaCriterion c) {
  return c == PaCriterion::mean ? "mean" : "percentile95";
}

inline PaCriterion pa_criterion_from_string(const std::string& s) {
  if (s == "mean") return PaCriterion::mean;
  if (s == "percentile95") return PaCriterion::percentile95;
  throw UserError("unknown parallel-analysis criterion '" + s +
                  "' (expected mean or percentile95)");
}

struct ParallelAnalysisReport {
  Eigen::VectorXd observed_eigenvalues;   // descending
  Eigen::VectorXd reference_eigenvalues;  // criterion value at each rank
  int suggested_factors = 0;
  int n_sims = 0;
  PaCriterion criterion = PaCriterion::mean;
};

namespace detail {

// type-7 interpolated quantile of an unsorted copy
inline double quantile7(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * (static_cast<double>(v.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - lo) * (v[lo + 1] - v[lo]);
}

// one simulated column of iid draws from the observed marginal of `col`
inline std::vector<int> marginal_draw(const std::vector<int>& col,
                                      rng::Stream& st) {
  std::map<int, long> counts;
  for (int v : col) ++counts[v];
  std::vector<int> codes;
  std::vector<double> cum;
  double acc = 0.0;
  for (const auto& [code, cnt] : counts) {
    codes.push_back(code);
    acc += static_cast<double>(cnt);
    cum.push_back(acc);
  }
  const double n = acc;
  std::vector<int> out(col.size());
  for (int attempt = 0; attempt < 20; ++attempt) {
    for (auto& v : out) {
      const double u = st.next_uniform() * n;
      std::size_t k = 0;
      while (k + 1 < cum.size() && u > cum[k]) ++k;
      v = codes[k];
    }
    if (std::any_of(out.begin(), out.end(),
                    [&](int v) { return v != out[0]; }))
      return out;
  }
  throw NumericError("parallel analysis: simulated column degenerate after "
                     "20 redraws");
}

}  // namespace detail

// Horn's parallel analysis. Reference eigenvalues come from datasets of
// independent ordinal columns with the observed marginal proportions,
// correlated polychorically just like the real data. Per-item streams are
// keyed by item id, so column order cannot change the answer.
inline ParallelAnalysisReport parallel_analysis(
    const std::vector<std::vector<int>>& cols,
    const std::vector<std::string>& item_ids, int n_sims, std::uint64_t seed,
    PaCriterion criterion = PaCriterion::mean, double rho_tol = 1e-4) {
  if (n_sims < 100) throw UserError("parallel analysis needs n_sims >= 100");
  const int p = static_cast<int>(cols.size());
  ParallelAnalysisReport rep;
  rep.n_sims = n_sims;
  rep.criterion = criterion;
  rep.observed_eigenvalues =
      eigenvalues_desc(polychoric_matrix(cols, item_ids, rho_tol).rho);

  std::vector<std::vector<double>> sim_eigs(
      static_cast<std::size_t>(p), std::vector<double>(static_cast<std::size_t>(n_sims)));
  std::vector<std::vector<int>> sim_cols(static_cast<std::size_t>(p));
  for (int s = 0; s < n_sims; ++s) {
    for (int j = 0; j < p; ++j) {
      rng::Stream st(rng::derive(seed, "pa-item:" + item_ids[static_cast<std::size_t>(j)],
                                 static_cast<std::uint64_t>(s)));
      sim_cols[static_cast<std::size_t>(j)] =
          detail::marginal_draw(cols[static_cast<std::size_t>(j)], st);
    }
    const Eigen::VectorXd ev =
        eigenvalues_desc(polychoric_matrix(sim_cols, item_ids, rho_tol).rho);
    for (int j = 0; j < p; ++j)
      sim_eigs[static_cast<std::size_t>(j)][static_cast<std::size_t>(s)] = ev[j];
  }

  rep.reference_eigenvalues.resize(p);
  for (int j = 0; j < p; ++j) {
    const auto& v = sim_eigs[static_cast<std::size_t>(j)];
    if (criterion == PaCriterion::mean) {
      double s = 0.0;
      for (double x : v) s += x;
      rep.reference_eigenvalues[j] = s / n_sims;
    } else {
      rep.reference_eigenvalues[j] = detail::quantile7(v, 0.95);
    }
  }

  // leading run: stop at the first rank that fails to beat its reference
  rep.suggested_factors = 0;
  for (int j = 0; j < p; ++j) {
    if (rep.observed_eigenvalues[j] > rep.reference_eigenvalues[j])
      ++rep.suggested_factors;
    else
      break;
  }
  return rep;
}

inline ParallelAnalysisReport parallel_analysis(
    const ResponseMatrix& m, int n_sims, std::uint64_t seed,
    PaCriterion criterion = PaCriterion::mean, double rho_tol = 1e-4) {
  return parallel_analysis(m.dense(), m.item_ids, n_sims, seed, criterion,
                           rho_tol);
}

struct ScreeRow {
  int rank = 0;
  double eigenvalue = 0.0;
  double first_difference = 0.0;  // e_k - e_{k+1}; 0 at the last rank
};

inline std::vector<ScreeRow> scree_table(const Eigen::MatrixXd& rho) {
  const Eigen::VectorXd ev = eigenvalues_desc(rho);
  std::vector<ScreeRow> out;
  for (int j = 0; j < ev.size(); ++j)
    out.push_back({j + 1, ev[j],
                   j + 1 < ev.size() ? ev[j] - ev[j + 1] : 0.0});
  return out;
}

struct MinresResult {
  Eigen::MatrixXd loadings;  // p x m, unrotated, factors by descending eigenvalue
  Eigen::VectorXd psi;       // uniquenesses on [0.001, 1]
  double f_min = 0.0;
  int iterations = 0;
  bool converged = false;
  bool heywood = false;
};

namespace detail {

inline Eigen::MatrixXd reduced_loadings(const Eigen::MatrixXd& r,
                                        const Eigen::VectorXd& psi, int m) {
  Eigen::MatrixXd rstar = r;
  rstar.diagonal() = Eigen::VectorXd::Ones(r.rows()) - psi;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rstar);
  const int p = static_cast<int>(r.rows());
  Eigen::MatrixXd l(p, m);
  for (int k = 0; k < m; ++k) {
    const int src = p - 1 - k;  // descending order
    const double ev = std::max(es.eigenvalues()[src], 0.0);
    l.col(k) = es.eigenvectors().col(src) * std::sqrt(ev);
  }
  return l;
}

inline double minres_objective(const Eigen::MatrixXd& r,
                               const Eigen::VectorXd& psi, int m,
                               Eigen::MatrixXd* loadings_out = nullptr) {
  const Eigen::MatrixXd l = reduced_loadings(r, psi, m);
  const Eigen::MatrixXd resid = r - l * l.transpose();
  double f = 0.0;
  for (int i = 0; i < r.rows(); ++i)
    for (int j = i + 1; j < r.cols(); ++j) f += resid(i, j) * resid(i, j);
  if (loadings_out) *loadings_out = l;
  return f;
}

}  // namespace detail

constexpr double kPsiFloor = 0.001;

// Minimum-residual extraction: minimize the off-diagonal squared residuals
// of R - LL' over the uniquenesses, with L recovered from the top-m
// eigenpairs of the reduced matrix. Starts from 1 - SMC.
inline MinresResult fit_minres(const Eigen::MatrixXd& r, int m) {
  const int p = static_cast<int>(r.rows());
  if (m < 1 || m >= p) throw UserError("factor count must satisfy 1 <= m < p");

  Eigen::VectorXd psi0(p);
  {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(r);
    if (!lu.isInvertible())
      throw NumericError("correlation matrix singular; cannot form SMC starts");
    const Eigen::VectorXd dinv = lu.inverse().diagonal();
    for (int i = 0; i < p; ++i)
      psi0[i] = std::clamp(1.0 / dinv[i], 0.005, 0.999);
  }

  auto fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const double f = detail::minres_objective(r, x, m);
    if (g)
      *g = optim::numerical_gradient(
          [&](const Eigen::VectorXd& y) {
            return detail::minres_objective(r, y, m);
          },
          x, 1e-6);
    return f;
  };

  optim::BfgsOptions opt;
  opt.max_iter = 500;
  opt.grad_tol = 1e-7;
  opt.f_abs_tol = 1e-9;
  opt.lower = Eigen::VectorXd::Constant(p, kPsiFloor);
  opt.upper = Eigen::VectorXd::Ones(p);
  const auto sol = optim::bfgs_minimize(fg, psi0, opt);
  if (!sol.converged)
    throw NumericError("minres did not converge after " +
                       std::to_string(sol.iterations) + " iterations");

  MinresResult res;
  res.psi = sol.x;
  res.iterations = sol.iterations;
  res.converged = true;
  res.f_min = detail::minres_objective(r, sol.x, m, &res.loadings);
  for (int i = 0; i < p; ++i)
    if (res.psi[i] <= kPsiFloor + 1e-12) res.heywood = true;
  if ((res.loadings.array().square().rowwise().sum() > 1.0 + 1e-8).any())
    res.heywood = true;
  // deterministic column signs: largest |loading| positive
  for (int k = 0; k < m; ++k) {
    int arg = 0;
    res.loadings.col(k).cwiseAbs().maxCoeff(&arg);
    if (res.loadings(arg, k) < 0.0) res.loadings.col(k) = -res.loadings.col(k);
  }
  return res;
}

struct ObliminResult {
  Eigen::MatrixXd pattern;  // p x m
  Eigen::MatrixXd phi;      // m x m factor correlations
  double f = 0.0;           // criterion value at the solution
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// direct oblimin criterion value and gradient with respect to the pattern
inline double oblimin_q(const Eigen::MatrixXd& l, double gamma,
                        Eigen::MatrixXd* gq) {
  const int p = static_cast<int>(l.rows());
  const int m = static_cast<int>(l.cols());
  const Eigen::MatrixXd l2 = l.array().square();
  Eigen::MatrixXd n = Eigen::MatrixXd::Ones(m, m);
  n.diagonal().setZero();
  Eigen::MatrixXd x = l2 * n;
  if (gamma != 0.0)
    x = (Eigen::MatrixXd::Identity(p, p) -
         Eigen::MatrixXd::Constant(p, p, gamma / p)) *
        x;
  if (gq) *gq = l.cwiseProduct(x);
  return (l2.cwiseProduct(x)).sum() / 4.0;
}

}  // namespace detail

// Gradient-projection rotation over oblique transformations with unit-length
// columns. Starts from the identity; falls back to seeded random starts if a
// start fails to converge.
inline ObliminResult rotate_oblimin(const Eigen::MatrixXd& loadings,
                                    double gamma = 0.0, double eps = 1e-7,
                                    int max_iter = 2000) {
  const int m = static_cast<int>(loadings.cols());
  const int p = static_cast<int>(loadings.rows());
  ObliminResult best;
  if (m == 1) {
    best.pattern = loadings;
    best.phi = Eigen::MatrixXd::Ones(1, 1);
    best.converged = true;
    return best;
  }

  auto run = [&](Eigen::MatrixXd t) {
    ObliminResult res;
    Eigen::MatrixXd ti = t.inverse();
    Eigen::MatrixXd l = loadings * ti.transpose();
    Eigen::MatrixXd gq;
    double f = detail::oblimin_q(l, gamma, &gq);
    Eigen::MatrixXd g = -(l.transpose() * gq * ti).transpose();
    double al = 1.0;
    for (int iter = 0; iter < max_iter; ++iter) {
      res.iterations = iter + 1;
      const Eigen::VectorXd diag = (t.cwiseProduct(g)).colwise().sum().transpose();
      const Eigen::MatrixXd gp = g - t * diag.asDiagonal();
      const double s = gp.norm();
      if (s < eps) {
        res.converged = true;
        break;
      }
      al *= 2.0;
      Eigen::MatrixXd tt;
      double ft = f;
      for (int half = 0; half <= 24; ++half) {
        Eigen::MatrixXd x = t - al * gp;
        Eigen::VectorXd v = x.colwise().norm().transpose();
        for (int k = 0; k < m; ++k) x.col(k) /= v[k];
        tt = x;
        const Eigen::MatrixXd tti = tt.inverse();
        l = loadings * tti.transpose();
        ft = detail::oblimin_q(l, gamma, &gq);
        if (ft < f - 0.5 * s * s * al) break;
        al *= 0.5;
      }
      t = tt;
      f = ft;
      const Eigen::MatrixXd tinv = t.inverse();
      l = loadings * tinv.transpose();
      detail::oblimin_q(l, gamma, &gq);
      g = -(l.transpose() * gq * tinv).transpose();
    }
    res.pattern = l;
    res.phi = t.transpose() * t;
    res.f = f;
    return res;
  };

  best = run(Eigen::MatrixXd::Identity(m, m));
  for (int attempt = 0; attempt < 10 && !best.converged; ++attempt) {
    rng::Stream st(rng::derive(0x9b1edc5u, "oblq", static_cast<std::uint64_t>(attempt)));
    Eigen::MatrixXd t(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) t(i, j) = st.next_normal();
    for (int k = 0; k < m; ++k) t.col(k) /= t.col(k).norm();
    const ObliminResult cand = run(t);
    if (cand.converged) best = cand;
  }
  if (!best.converged)
    throw NumericError("oblimin rotation did not converge after random restarts");

  // sign convention: each factor's largest-|loading| positive
  for (int k = 0; k < m; ++k) {
    int arg = 0;
    best.pattern.col(k).cwiseAbs().maxCoeff(&arg);
    if (best.pattern(arg, k) < 0.0) {
      best.pattern.col(k) = -best.pattern.col(k);
      best.phi.col(k) = -best.phi.col(k);
      best.phi.row(k) = -best.phi.row(k);
    }
  }
  // order by explained variance, descending sum of squared pattern loadings
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) order[static_cast<std::size_t>(k)] = k;
  const Eigen::VectorXd ss =
      best.pattern.array().square().colwise().sum().transpose();
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return ss[a] > ss[b]; });
  Eigen::MatrixXd pat(p, m), phi(m, m);
  for (int k = 0; k < m; ++k) pat.col(k) = best.pattern.col(order[static_cast<std::size_t>(k)]);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      phi(a, b) = best.phi(order[static_cast<std::size_t>(a)],
                           order[static_cast<std::size_t>(b)]);
  best.pattern = pat;
  best.phi = phi;
  return best;
}

inline Eigen::VectorXd communalities(const Eigen::MatrixXd& pattern,
                                     const Eigen::MatrixXd& phi) {
  if (pattern.cols() != phi.rows() || phi.rows() != phi.cols())
    throw UserError("pattern and phi are not conformable");
  return (pattern * phi).cwiseProduct(pattern).rowwise().sum();
}

struct EfaFit {
  double chi_square = 0.0;
  double df = 0.0;
  double tli = 0.0;
  double rmsea = 0.0;
  double bic = 0.0;
  double chi_square_null = 0.0;
  double df_null = 0.0;
};

struct EfaSolution {
  Eigen::MatrixXd pattern;
  Eigen::MatrixXd phi;
  Eigen::VectorXd communality;
  Eigen::VectorXd uniqueness;
  EfaFit fit;
  bool heywood = false;
};

// T = (n-1) F against the independence null; TLI, RMSEA, BIC as reported.
inline EfaFit efa_fit_indices(const Eigen::MatrixXd& rho,
                              const Eigen::MatrixXd& pattern,
                              const Eigen::MatrixXd& phi, long n_obs) {
  const int p = static_cast<int>(rho.rows());
  const int m = static_cast<int>(pattern.cols());
  EfaFit fit;
  fit.df = ((p - m) * (p - m) - p - m) / 2.0;
  if (fit.df <= 0.0)
    throw UserError("no degrees of freedom for " + std::to_string(m) +
                    " factors on " + std::to_string(p) + " items");
  const Eigen::MatrixXd implied = pattern * phi * pattern.transpose();
  double f = 0.0, f0 = 0.0;
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) {
      const double e = rho(i, j) - implied(i, j);
      f += e * e;
      f0 += rho(i, j) * rho(i, j);
    }
  fit.chi_square = (n_obs - 1) * f;
  fit.chi_square_null = (n_obs - 1) * f0;
  fit.df_null = p * (p - 1) / 2.0;
  const double null_ratio = fit.chi_square_null / fit.df_null;
  fit.tli = (null_ratio - fit.chi_square / fit.df) / (null_ratio - 1.0);
  fit.rmsea = std::sqrt(std::max(fit.chi_square - fit.df, 0.0) /
                        (fit.df * (n_obs - 1)));
  fit.bic = fit.chi_square - fit.df * std::log(static_cast<double>(n_obs));
  return fit;
}

enum class DropReason { kept, low_primary, cross_loading, low_communality,
                        conceptual_override };

inline std::string to_string(DropReason r) {
  switch (r) {
    case DropReason::kept: return "kept";
    case DropReason::low_primary: return "low_primary";
    case DropReason::cross_loading: return "cross_loading";
    case DropReason::low_communality: return "low_communality";
    case DropReason::conceptual_override: return "conceptual_override";
  }
  return "?";
}

struct RetentionRow {
  std::string item_id;
  int primary_factor = 0;      // 0-based column of the largest |loading|
  double primary_loading = 0.0;
  double max_cross = 0.0;
  double communality = 0.0;
  bool kept = false;
  DropReason reason = DropReason::kept;
};

struct RetentionReport {
  std::vector<RetentionRow> rows;
  double load_min = 0.40, cross_max = 0.32, comm_min = 0.40;

  std::vector<std::string> kept_ids() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
      if (r.kept) out.push_back(r.item_id);
    return out;
  }
};

// Keep an item iff its primary |loading| clears load_min, every other
// |loading| stays under cross_max, and communality reaches comm_min. Items
// named in `overrides` are kept regardless, tagged conceptual_override.
// A drop records the first failed criterion in that order.
inline RetentionReport retention_filter(const Eigen::MatrixXd& pattern,
                                        const Eigen::VectorXd& communality,
                                        const std::vector<std::string>& item_ids,
                                        double load_min = 0.40,
                                        double cross_max = 0.32,
                                        double comm_min = 0.40,
                                        const std::vector<std::string>& overrides = {}) {
  for (double t : {load_min, cross_max, comm_min})
    if (t <= 0.0 || t >= 1.0) throw UserError("retention thresholds must be in (0,1)");
  RetentionReport rep;
  rep.load_min = load_min;
  rep.cross_max = cross_max;
  rep.comm_min = comm_min;
  const int p = static_cast<int>(pattern.rows());
  for (int i = 0; i < p; ++i) {
    RetentionRow row;
    row.item_id = item_ids[static_cast<std::size_t>(i)];
    int arg = 0;
    pattern.row(i).cwiseAbs().maxCoeff(&arg);
    row.primary_factor = arg;
    row.primary_loading = pattern(i, arg);
    row.max_cross = 0.0;
    for (int k = 0; k < pattern.cols(); ++k)
      if (k != arg) row.max_cross = std::max(row.max_cross, std::fabs(pattern(i, k)));
    row.communality = communality[i];
    if (std::fabs(row.primary_loading) <= load_min)
      row.reason = DropReason::low_primary;
    else if (row.max_cross >= cross_max)
      row.reason = DropReason::cross_loading;
    else if (row.communality < comm_min)
      row.reason = DropReason::low_communality;
    else
      row.reason = DropReason::kept;
    row.kept = row.reason == DropReason::kept;
    if (!row.kept &&
        std::find(overrides.begin(), overrides.end(), row.item_id) != overrides.end()) {
      row.kept = true;
      row.reason = DropReason::conceptual_override;
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

}  // namespace carebi
