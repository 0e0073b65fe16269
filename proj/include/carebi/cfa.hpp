#pragma once

// Confirmatory factor models on a polychoric matrix, fit by diagonally
// weighted least squares over the unique correlations. Two structures: a
// bifactor model (orthogonal general + group factors, the scoring model)
// and a higher-order variant kept for interpretation only. Thresholds are
// fixed at their stage-one estimates.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "carebi/common.hpp"
#include "carebi/efa.hpp"
#include "carebi/optim.hpp"
#include "carebi/polycorr.hpp"

namespace carebi {

enum class CfaVariant { bifactor, higher_order, null_model };

inline std::string to_string(CfaVariant v) {
  switch (v) {
    case CfaVariant::bifactor: return "bifactor";
    case CfaVariant::higher_order: return "higher_order";
    case CfaVariant::null_model: return "null";
  }
  return "?";
}

struct ModelSpec {
  std::vector<std::string> item_ids;           // data column order
  std::vector<std::string> group_ids;
  std::vector<int> group_of;                   // per item; -1 = general only
  std::vector<std::pair<int, int>> extra;      // (item, group) beyond the pattern
  CfaVariant variant = CfaVariant::bifactor;
  std::vector<std::string> second_ids;         // higher-order layer
  std::vector<int> second_of;                  // per group
  bool singleton_second_warning = false;

  int n_items() const { return static_cast<int>(item_ids.size()); }
  int n_groups() const { return static_cast<int>(group_ids.size()); }

  int group_index(const std::string& id) const {
    for (int g = 0; g < n_groups(); ++g)
      if (group_ids[static_cast<std::size_t>(g)] == id) return g;
    return -1;
  }
  int item_index(const std::string& id) const {
    for (int i = 0; i < n_items(); ++i)
      if (item_ids[static_cast<std::size_t>(i)] == id) return i;
    return -1;
  }

  // free (item, group) loading slots: default pattern plus extras
  std::vector<std::pair<int, int>> loading_slots() const {
    std::vector<std::pair<int, int>> slots;
    for (int i = 0; i < n_items(); ++i)
      if (group_of[static_cast<std::size_t>(i)] >= 0)
        slots.emplace_back(i, group_of[static_cast<std::size_t>(i)]);
    for (const auto& e : extra) slots.push_back(e);
    return slots;
  }
};

// Bifactor: every item on the general factor, plus its single group factor.
inline ModelSpec build_bifactor_spec(
    const std::vector<std::string>& item_ids,
    const std::vector<std::pair<std::string, std::string>>& assignments,
    const std::vector<std::pair<std::string, std::string>>& extras = {}) {
  ModelSpec spec;
  spec.item_ids = item_ids;
  spec.group_of.assign(item_ids.size(), -1);
  for (const auto& [item, group] : assignments) {
    const int i = spec.item_index(item);
    if (i < 0) throw UserError("assignment for unknown item '" + item + "'");
    int g = spec.group_index(group);
    if (g < 0) {
      spec.group_ids.push_back(group);
      g = spec.n_groups() - 1;
    }
    if (spec.group_of[static_cast<std::size_t>(i)] >= 0)
      throw UserError("item '" + item + "' assigned to two groups");
    spec.group_of[static_cast<std::size_t>(i)] = g;
  }
  for (int i = 0; i < spec.n_items(); ++i)
    if (spec.group_of[static_cast<std::size_t>(i)] < 0)
      throw UserError("item '" + item_ids[static_cast<std::size_t>(i)] +
                      "' not assigned to any group");
  for (int g = 0; g < spec.n_groups(); ++g) {
    const long size =
        std::count(spec.group_of.begin(), spec.group_of.end(), g);
    if (size < 2)
      throw UserError("group '" + spec.group_ids[static_cast<std::size_t>(g)] +
                      "' has fewer than two items");
  }
  for (const auto& [item, group] : extras) {
    const int i = spec.item_index(item);
    const int g = spec.group_index(group);
    if (i < 0) throw UserError("extra loading for unknown item '" + item + "'");
    if (g < 0) throw UserError("extra loading on unknown group '" + group + "'");
    if (spec.group_of[static_cast<std::size_t>(i)] == g)
      throw UserError("extra loading duplicates the pattern for item '" + item + "'");
    spec.extra.emplace_back(i, g);
  }
  return spec;
}

// Higher-order layer on top of a bifactor item layout: first-order factors
// load on second-order factors which load on the general factor, so the
// hierarchy is a tree. Interpretation aid only; never used for scoring.
inline ModelSpec build_higher_order_spec(
    const ModelSpec& base,
    const std::vector<std::pair<std::string, std::string>>& first_to_second) {
  if (base.variant != CfaVariant::bifactor)
    throw UserError("higher-order layer requires a bifactor item layout");
  ModelSpec spec = base;
  spec.variant = CfaVariant::higher_order;
  spec.second_of.assign(static_cast<std::size_t>(base.n_groups()), -1);
  std::set<std::string> firsts, seconds;
  for (const auto& [first, second] : first_to_second) {
    firsts.insert(first);
    seconds.insert(second);
  }
  for (const auto& name : firsts)
    if (seconds.count(name))
      throw UserError("'" + name +
                      "' appears as both a first- and second-order factor; "
                      "hierarchy must be a tree");
  for (const auto& [first, second] : first_to_second) {
    const int g = spec.group_index(first);
    if (g < 0) throw UserError("hierarchy maps unknown factor '" + first + "'");
    if (spec.second_of[static_cast<std::size_t>(g)] >= 0)
      throw UserError("factor '" + first + "' mapped to two second-order factors");
    int s = -1;
    for (int k = 0; k < static_cast<int>(spec.second_ids.size()); ++k)
      if (spec.second_ids[static_cast<std::size_t>(k)] == second) s = k;
    if (s < 0) {
      spec.second_ids.push_back(second);
      s = static_cast<int>(spec.second_ids.size()) - 1;
    }
    spec.second_of[static_cast<std::size_t>(g)] = s;
  }
  for (int g = 0; g < spec.n_groups(); ++g)
    if (spec.second_of[static_cast<std::size_t>(g)] < 0)
      throw UserError("factor '" + spec.group_ids[static_cast<std::size_t>(g)] +
                      "' not mapped to a second-order factor");
  spec.singleton_second_warning = spec.second_ids.size() == 1;
  return spec;
}

struct CfaFit {
  ModelSpec spec;
  Eigen::VectorXd lambda_g;            // p (bifactor only)
  Eigen::MatrixXd lambda_s;            // p x G, zeros off the pattern
  Eigen::VectorXd gamma;               // G (higher-order only)
  Eigen::VectorXd delta;               // S (higher-order only)
  std::vector<ThresholdSet> thresholds;
  long n_obs = 0;
  double f_min = 0.0;
  double chi_square = 0.0;
  double df = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> flagged;    // items with a |loading| > 1
  std::string adjustment = "naive";
};

// first-order factor correlation implied by the higher-order layer
inline Eigen::MatrixXd first_order_phi(const ModelSpec& spec,
                                       const Eigen::VectorXd& gamma,
                                       const Eigen::VectorXd& delta) {
  const int ng = spec.n_groups();
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(ng, ng);
  for (int k = 0; k < ng; ++k)
    for (int l = 0; l < ng; ++l) {
      if (k == l) continue;
      const int a = spec.second_of[static_cast<std::size_t>(k)];
      const int b = spec.second_of[static_cast<std::size_t>(l)];
      const double psi = a == b ? 1.0 : delta[a] * delta[b];
      phi(k, l) = gamma[k] * gamma[l] * psi;
    }
  return phi;
}

inline Eigen::MatrixXd implied_correlation(const CfaFit& fit) {
  const int p = fit.spec.n_items();
  Eigen::MatrixXd sigma;
  switch (fit.spec.variant) {
    case CfaVariant::null_model:
      sigma = Eigen::MatrixXd::Identity(p, p);
      return sigma;
    case CfaVariant::bifactor:
      sigma = fit.lambda_g * fit.lambda_g.transpose() +
              fit.lambda_s * fit.lambda_s.transpose();
      break;
    case CfaVariant::higher_order: {
      const Eigen::MatrixXd phi =
          first_order_phi(fit.spec, fit.gamma, fit.delta);
      sigma = fit.lambda_s * phi * fit.lambda_s.transpose();
      break;
    }
  }
  sigma.diagonal().setOnes();
  return sigma;
}

namespace detail {

inline std::vector<double> effective_weights(const WeightSet& w, long n_obs,
                                             std::size_t n_pairs) {
  if (w.variances.size() != n_pairs)
    throw UserError("weight set has " + std::to_string(w.variances.size()) +
                    " entries, expected " + std::to_string(n_pairs));
  std::vector<double> out = w.variances;
  for (double v : out)
    if (!(v > 0.0)) throw UserError("weights must be strictly positive");
  // bootstrap variances estimate Var(s); the fit function divides by the
  // variance of sqrt(n)*s so that (n-1)*F_min is chi-square scaled
  if (w.method == WeightMethod::bootstrap)
    for (double& v : out) v *= static_cast<double>(n_obs);
  return out;
}

// parameter vector layout:
//   bifactor:     [lambda_g (p) | slot loadings]
//   higher-order: [slot loadings | gamma (ng) | delta (ns)]
inline void unpack_theta(const ModelSpec& spec, const Eigen::VectorXd& th,
                         CfaFit& fit) {
  const int p = spec.n_items();
  const int ng = spec.n_groups();
  const int ns = static_cast<int>(spec.second_ids.size());
  const auto slots = spec.loading_slots();
  fit.lambda_s = Eigen::MatrixXd::Zero(p, ng);
  if (spec.variant == CfaVariant::higher_order) {
    fit.lambda_g = Eigen::VectorXd::Zero(p);
    for (std::size_t k = 0; k < slots.size(); ++k)
      fit.lambda_s(slots[k].first, slots[k].second) += th[static_cast<int>(k)];
    fit.gamma = th.segment(static_cast<int>(slots.size()), ng);
    fit.delta = th.segment(static_cast<int>(slots.size()) + ng, ns);
  } else {
    fit.lambda_g = th.head(p);
    for (std::size_t k = 0; k < slots.size(); ++k)
      fit.lambda_s(slots[k].first, slots[k].second) +=
          th[p + static_cast<int>(k)];
  }
}

// fit function and its analytic gradient at parameter vector th
inline double dwls_objective(const ModelSpec& spec, const Eigen::MatrixXd& rho,
                             const std::vector<double>& w,
                             const Eigen::VectorXd& th,
                             Eigen::VectorXd* grad = nullptr) {
  const int p = spec.n_items();
  const int ng = spec.n_groups();
  const int ns = static_cast<int>(spec.second_ids.size());
  const auto slots = spec.loading_slots();
  const bool hi = spec.variant == CfaVariant::higher_order;
  CfaFit tmp;
  tmp.spec = spec;
  unpack_theta(spec, th, tmp);
  const Eigen::MatrixXd sigma = implied_correlation(tmp);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p, p);
  double f = 0.0;
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) {
      const double wk = w[pair_index(i, j, p)];
      const double r = sigma(i, j) - rho(i, j);
      f += r * r / wk;
      m(i, j) = m(j, i) = r / wk;
    }
  if (grad) {
    grad->resize(th.size());
    if (hi) {
      const Eigen::MatrixXd phi = first_order_phi(spec, tmp.gamma, tmp.delta);
      const Eigen::MatrixXd gl = 2.0 * m * tmp.lambda_s * phi;
      for (std::size_t k = 0; k < slots.size(); ++k)
        (*grad)[static_cast<int>(k)] = gl(slots[k].first, slots[k].second);
      const Eigen::MatrixXd b =
          tmp.lambda_s.transpose() * m * tmp.lambda_s;  // ng x ng
      for (int k = 0; k < ng; ++k) {
        double gk = 0.0;
        for (int l = 0; l < ng; ++l) {
          if (l == k) continue;
          const int a = spec.second_of[static_cast<std::size_t>(k)];
          const int bb = spec.second_of[static_cast<std::size_t>(l)];
          const double psi = a == bb ? 1.0 : tmp.delta[a] * tmp.delta[bb];
          gk += b(k, l) * psi * tmp.gamma[l];
        }
        (*grad)[static_cast<int>(slots.size()) + k] = 2.0 * gk;
      }
      for (int a = 0; a < ns; ++a) {
        double ga = 0.0;
        for (int k = 0; k < ng; ++k) {
          if (spec.second_of[static_cast<std::size_t>(k)] != a) continue;
          for (int l = 0; l < ng; ++l) {
            const int bb = spec.second_of[static_cast<std::size_t>(l)];
            if (bb == a) continue;
            ga += b(k, l) * tmp.gamma[k] * tmp.gamma[l] * tmp.delta[bb];
          }
        }
        (*grad)[static_cast<int>(slots.size()) + ng + a] = 2.0 * ga;
      }
    } else {
      const Eigen::VectorXd gg = 2.0 * m * tmp.lambda_g;
      const Eigen::MatrixXd gs = 2.0 * m * tmp.lambda_s;
      for (int i = 0; i < p; ++i) (*grad)[i] = gg[i];
      for (std::size_t k = 0; k < slots.size(); ++k)
        (*grad)[p + static_cast<int>(k)] = gs(slots[k].first, slots[k].second);
    }
  }
  return f;
}

}  // namespace detail

// Independence baseline on the same correlations and weights.
inline CfaFit fit_null(const PolychoricMatrix& rho, const WeightSet& weights,
                       long n_obs) {
  const int p = static_cast<int>(rho.rho.rows());
  const std::size_t n_pairs = static_cast<std::size_t>(p) * (p - 1) / 2;
  const auto w = detail::effective_weights(weights, n_obs, n_pairs);
  CfaFit fit;
  fit.spec.variant = CfaVariant::null_model;
  fit.spec.item_ids = rho.item_ids;
  fit.spec.group_of.assign(rho.item_ids.size(), -1);
  fit.thresholds = rho.thresholds;
  fit.n_obs = n_obs;
  double f = 0.0;
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j)
      f += rho.rho(i, j) * rho.rho(i, j) / w[pair_index(i, j, p)];
  fit.f_min = f;
  fit.chi_square = (n_obs - 1) * f;
  fit.df = static_cast<double>(n_pairs);
  fit.converged = true;
  return fit;
}

// DWLS fit: minimize sum over unique correlations of (s_k - sigma_k)^2 / w_k
// by BFGS with the analytic gradient. General-factor starting values come
// from a one-factor minimum-residual extraction.
inline CfaFit fit_dwls(const ModelSpec& spec, const PolychoricMatrix& rho,
                       const WeightSet& weights, long n_obs) {
  const int p = spec.n_items();
  const int ng = spec.n_groups();
  const int ns = static_cast<int>(spec.second_ids.size());
  if (static_cast<int>(rho.rho.rows()) != p)
    throw UserError("model and correlation matrix disagree on item count");
  if (spec.variant == CfaVariant::null_model)
    throw UserError("fit the null model with fit_null");
  const std::size_t n_pairs = static_cast<std::size_t>(p) * (p - 1) / 2;
  const auto w = detail::effective_weights(weights, n_obs, n_pairs);
  const auto slots = spec.loading_slots();
  const bool hi = spec.variant == CfaVariant::higher_order;
  const int n_free = hi ? static_cast<int>(slots.size()) + ng + ns
                        : p + static_cast<int>(slots.size());
  const double df = static_cast<double>(n_pairs) - n_free;
  if (df < 0.0)
    throw UserError("model is not identified: " + std::to_string(n_free) +
                    " free parameters for " + std::to_string(n_pairs) +
                    " unique correlations");

  auto fg = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad) {
    return detail::dwls_objective(spec, rho.rho, w, th, grad);
  };

  Eigen::VectorXd th0(n_free);
  {
    const Eigen::VectorXd lg0 = fit_minres(rho.rho, 1).loadings.col(0);
    if (hi) {
      for (std::size_t k = 0; k < slots.size(); ++k)
        th0[static_cast<int>(k)] = std::max(lg0[slots[k].first], 0.3);
      for (int k = 0; k < ng; ++k) th0[static_cast<int>(slots.size()) + k] = 0.7;
      for (int a = 0; a < ns; ++a)
        th0[static_cast<int>(slots.size()) + ng + a] = 0.7;
    } else {
      th0.head(p) = lg0;
      for (std::size_t k = 0; k < slots.size(); ++k)
        th0[p + static_cast<int>(k)] = 0.2;
    }
  }

  optim::BfgsOptions opt;
  opt.max_iter = 500;
  opt.grad_tol = 1e-6;
  const auto sol = optim::bfgs_minimize(fg, th0, opt);
  if (!sol.converged)
    throw NumericError("DWLS fit did not converge after " +
                       std::to_string(sol.iterations) + " iterations");

  CfaFit fit;
  fit.spec = spec;
  detail::unpack_theta(spec, sol.x, fit);
  fit.thresholds = rho.thresholds;
  fit.n_obs = n_obs;
  fit.f_min = sol.f;
  fit.chi_square = (n_obs - 1) * sol.f;
  fit.df = df;
  fit.iterations = sol.iterations;
  fit.converged = true;

  // orientation: each factor's largest-|loading| indicator positive
  auto flip_col = [](Eigen::MatrixXd& mat, int col) { mat.col(col) = -mat.col(col); };
  if (!hi) {
    int arg = 0;
    fit.lambda_g.cwiseAbs().maxCoeff(&arg);
    if (fit.lambda_g[arg] < 0.0) fit.lambda_g = -fit.lambda_g;
    for (int g = 0; g < ng; ++g) {
      if (fit.lambda_s.col(g).cwiseAbs().maxCoeff(&arg); fit.lambda_s(arg, g) < 0.0)
        flip_col(fit.lambda_s, g);
    }
  } else {
    int arg = 0;
    for (int g = 0; g < ng; ++g) {
      if (fit.lambda_s.col(g).cwiseAbs().maxCoeff(&arg); fit.lambda_s(arg, g) < 0.0) {
        flip_col(fit.lambda_s, g);
        fit.gamma[g] = -fit.gamma[g];
      }
    }
    for (int a = 0; a < ns; ++a) {
      double best = 0.0;
      int bk = -1;
      for (int k = 0; k < ng; ++k)
        if (spec.second_of[static_cast<std::size_t>(k)] == a &&
            std::fabs(fit.gamma[k]) > best) {
          best = std::fabs(fit.gamma[k]);
          bk = k;
        }
      if (bk >= 0 && fit.gamma[bk] < 0.0) {
        for (int k = 0; k < ng; ++k)
          if (spec.second_of[static_cast<std::size_t>(k)] == a)
            fit.gamma[k] = -fit.gamma[k];
        fit.delta[a] = -fit.delta[a];
      }
    }
    fit.delta.cwiseAbs().maxCoeff(&arg);
    if (fit.delta[arg] < 0.0) fit.delta = -fit.delta;
  }

  for (int i = 0; i < p; ++i) {
    double biggest = std::fabs(fit.lambda_g[i]);
    for (int g = 0; g < ng; ++g)
      biggest = std::max(biggest, std::fabs(fit.lambda_s(i, g)));
    if (biggest > 1.0)
      fit.flagged.push_back(spec.item_ids[static_cast<std::size_t>(i)]);
  }
  return fit;
}

struct CfaIndices {
  double cfi = 0.0;
  double tli = 0.0;
  double rmsea = 0.0;
};

inline CfaIndices cfa_fit_indices(const CfaFit& fit, const CfaFit& null_fit) {
  if (null_fit.chi_square <= null_fit.df)
    throw NumericError("null model is not worse than saturated; indices undefined");
  CfaIndices ix;
  const double t = fit.chi_square, d = fit.df;
  const double t0 = null_fit.chi_square, d0 = null_fit.df;
  ix.cfi = 1.0 - std::max(t - d, 0.0) / std::max(t0 - d0, 0.0);
  const double null_ratio = t0 / d0;
  ix.tli = (null_ratio - t / d) / (null_ratio - 1.0);
  ix.rmsea = std::sqrt(std::max(t - d, 0.0) / (d * (fit.n_obs - 1)));
  return ix;
}

// model-refinement loop gate reported alongside the indices
inline bool acceptance_predicate(const CfaIndices& ix, double omega_h,
                                 double tli_min = 0.9, double cfi_min = 0.9,
                                 double rmsea_max = 0.08,
                                 double omega_h_min = 0.70) {
  return ix.tli >= tli_min && ix.cfi >= cfi_min && ix.rmsea <= rmsea_max &&
         omega_h >= omega_h_min;
}

struct CfaOmega {
  double omega_h = 0.0;
  std::vector<double> omega_s;  // spec group order
  double ecv = 0.0;             // general factor's share of common variance
};

// Variance-ratio reliabilities from the converged bifactor solution. Group
// blocks are the pattern's item sets; cross loadings contribute to whatever
// block they land in.
inline CfaOmega omega(const CfaFit& fit) {
  if (fit.spec.variant != CfaVariant::bifactor)
    throw UserError("omega requires a bifactor fit");
  if (!fit.converged) throw UserError("omega requires a converged fit");
  const int p = fit.spec.n_items();
  const int ng = fit.spec.n_groups();
  Eigen::VectorXd u(p);
  for (int i = 0; i < p; ++i)
    u[i] = 1.0 - fit.lambda_g[i] * fit.lambda_g[i] -
           fit.lambda_s.row(i).squaredNorm();
  const double sum_g = fit.lambda_g.sum();
  double var_total = sum_g * sum_g + u.sum();
  for (int g = 0; g < ng; ++g) {
    const double s = fit.lambda_s.col(g).sum();
    var_total += s * s;
  }
  CfaOmega om;
  om.omega_h = sum_g * sum_g / var_total;
  const double common_g = fit.lambda_g.squaredNorm();
  const double common_all = common_g + fit.lambda_s.squaredNorm();
  om.ecv = common_all > 0.0 ? common_g / common_all : 0.0;
  om.omega_s.assign(static_cast<std::size_t>(ng), 0.0);
  for (int g = 0; g < ng; ++g) {
    double bg = 0.0, bu = 0.0;
    Eigen::VectorXd bs = Eigen::VectorXd::Zero(ng);
    for (int i = 0; i < p; ++i) {
      if (fit.spec.group_of[static_cast<std::size_t>(i)] != g) continue;
      bg += fit.lambda_g[i];
      bu += u[i];
      bs += fit.lambda_s.row(i).transpose();
    }
    const double block_var = bg * bg + bs.squaredNorm() + bu;
    om.omega_s[static_cast<std::size_t>(g)] =
        block_var > 0.0 ? bs[g] * bs[g] / block_var : 0.0;
  }
  return om;
}

// ---------------------------------------------------------------------------
// model-spec text format, one directive per line, '#' comments:
//   group <group_id> <item_id> [<item_id> ...]
//   extra <item_id> <group_id>
//   hierarchy <group_id> <second_order_id>

inline ModelSpec parse_model_spec(const std::string& text,
                                  const std::vector<std::string>& item_ids) {
  std::vector<std::pair<std::string, std::string>> assignments, extras, hier;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto toks = tokenize(trim(line));
    if (toks.empty()) continue;
    const std::string where = "model spec line " + std::to_string(lineno);
    if (toks[0] == "group") {
      if (toks.size() < 3) throw UserError(where + ": group needs a name and items");
      for (std::size_t k = 2; k < toks.size(); ++k)
        assignments.emplace_back(toks[k], toks[1]);
    } else if (toks[0] == "extra") {
      if (toks.size() != 3) throw UserError(where + ": extra needs item and group");
      extras.emplace_back(toks[1], toks[2]);
    } else if (toks[0] == "hierarchy") {
      if (toks.size() != 3)
        throw UserError(where + ": hierarchy needs factor and second-order name");
      hier.emplace_back(toks[1], toks[2]);
    } else {
      throw UserError(where + ": unknown directive '" + toks[0] + "'");
    }
  }
  ModelSpec spec = build_bifactor_spec(item_ids, assignments, extras);
  if (!hier.empty()) spec = build_higher_order_spec(spec, hier);
  return spec;
}

inline ModelSpec load_model_spec(const std::string& path,
                                 const std::vector<std::string>& item_ids) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open model spec: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_spec(ss.str(), item_ids);
}

// ---------------------------------------------------------------------------
// fitted-model document: everything scoring needs, versioned json

inline nlohmann::json model_to_json(const CfaFit& fit) {
  nlohmann::json j;
  j["format"] = "carebi-model";
  j["format_version"] = 1;
  j["variant"] = to_string(fit.spec.variant);
  j["adjustment"] = fit.adjustment;
  j["items"] = fit.spec.item_ids;
  j["groups"] = fit.spec.group_ids;
  j["group_of"] = fit.spec.group_of;
  nlohmann::json extras = nlohmann::json::array();
  for (const auto& [i, g] : fit.spec.extra)
    extras.push_back({{"item", fit.spec.item_ids[static_cast<std::size_t>(i)]},
                      {"group", fit.spec.group_ids[static_cast<std::size_t>(g)]}});
  j["extra_loadings"] = extras;
  j["lambda_g"] = std::vector<double>(fit.lambda_g.data(),
                                      fit.lambda_g.data() + fit.lambda_g.size());
  nlohmann::json ls = nlohmann::json::array();
  for (int i = 0; i < fit.lambda_s.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(fit.lambda_s.cols()));
    for (int g = 0; g < fit.lambda_s.cols(); ++g)
      row[static_cast<std::size_t>(g)] = fit.lambda_s(i, g);
    ls.push_back(row);
  }
  j["lambda_s"] = ls;
  if (fit.spec.variant == CfaVariant::higher_order) {
    j["second_order"] = fit.spec.second_ids;
    j["second_of"] = fit.spec.second_of;
    j["gamma"] = std::vector<double>(fit.gamma.data(),
                                     fit.gamma.data() + fit.gamma.size());
    j["delta"] = std::vector<double>(fit.delta.data(),
                                     fit.delta.data() + fit.delta.size());
  }
  nlohmann::json th = nlohmann::json::array();
  for (const auto& t : fit.thresholds)
    th.push_back({{"taus", t.taus}, {"codes", t.codes}});
  j["thresholds"] = th;
  j["n_obs"] = fit.n_obs;
  j["fit"] = {{"f_min", fit.f_min},
              {"chi_square", fit.chi_square},
              {"df", fit.df},
              {"iterations", fit.iterations},
              {"converged", fit.converged}};
  if (!fit.flagged.empty()) j["flagged_items"] = fit.flagged;
  return j;
}

inline CfaFit model_from_json(const nlohmann::json& j) {
  if (!j.contains("format") || j.at("format") != "carebi-model")
    throw UserError("not a carebi model document");
  if (j.at("format_version").get<int>() != 1)
    throw UserError("unsupported model format version");
  CfaFit fit;
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "bifactor") fit.spec.variant = CfaVariant::bifactor;
  else if (variant == "higher_order") fit.spec.variant = CfaVariant::higher_order;
  else throw UserError("unknown model variant '" + variant + "'");
  for (const auto& s : j.at("items")) fit.spec.item_ids.push_back(s.get<std::string>());
  for (const auto& s : j.at("groups")) fit.spec.group_ids.push_back(s.get<std::string>());
  for (const auto& g : j.at("group_of")) fit.spec.group_of.push_back(g.get<int>());
  if (j.contains("extra_loadings"))
    for (const auto& e : j.at("extra_loadings"))
      fit.spec.extra.emplace_back(
          fit.spec.item_index(e.at("item").get<std::string>()),
          fit.spec.group_index(e.at("group").get<std::string>()));
  const int p = fit.spec.n_items();
  const int ng = fit.spec.n_groups();
  fit.lambda_g.resize(p);
  {
    int i = 0;
    for (const auto& v : j.at("lambda_g")) fit.lambda_g[i++] = v.get<double>();
  }
  fit.lambda_s.resize(p, ng);
  {
    int i = 0;
    for (const auto& row : j.at("lambda_s")) {
      int g = 0;
      for (const auto& v : row) fit.lambda_s(i, g++) = v.get<double>();
      ++i;
    }
  }
  if (fit.spec.variant == CfaVariant::higher_order) {
    for (const auto& s : j.at("second_order"))
      fit.spec.second_ids.push_back(s.get<std::string>());
    for (const auto& s : j.at("second_of"))
      fit.spec.second_of.push_back(s.get<int>());
    fit.gamma.resize(ng);
    int k = 0;
    for (const auto& v : j.at("gamma")) fit.gamma[k++] = v.get<double>();
    fit.delta.resize(static_cast<int>(fit.spec.second_ids.size()));
    k = 0;
    for (const auto& v : j.at("delta")) fit.delta[k++] = v.get<double>();
  }
  for (const auto& t : j.at("thresholds")) {
    ThresholdSet ts;
    for (const auto& v : t.at("taus")) ts.taus.push_back(v.get<double>());
    for (const auto& v : t.at("codes")) ts.codes.push_back(v.get<int>());
    fit.thresholds.push_back(std::move(ts));
  }
  fit.n_obs = j.at("n_obs").get<long>();
  fit.f_min = j.at("fit").at("f_min").get<double>();
  fit.chi_square = j.at("fit").at("chi_square").get<double>();
  fit.df = j.at("fit").at("df").get<double>();
  fit.iterations = j.at("fit").at("iterations").get<int>();
  fit.converged = j.at("fit").at("converged").get<bool>();
  if (j.contains("flagged_items"))
    for (const auto& s : j.at("flagged_items"))
      fit.flagged.push_back(s.get<std::string>());
  fit.adjustment = j.at("adjustment").get<std::string>();
  return fit;
}

}  // namespace carebi
