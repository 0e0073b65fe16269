#pragma once

// Criterion validity: outcomes regressed on the CareBI score with
// cluster-robust (sandwich) inference in place of the original
// mixed-effects models. Three one-parameter exponential families cover the
// binary / count / positive-continuous outcome types; estimates are
// reported on the exp scale (odds ratio, rate ratio, ratio of means).

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "carebi/common.hpp"
#include "carebi/csv.hpp"
#include "carebi/dist.hpp"
#include "carebi/scoring.hpp"

namespace carebi {

enum class GlmFamily { logistic, poisson, log_link_gamma };

inline std::string to_string(GlmFamily f) {
  switch (f) {
    case GlmFamily::logistic: return "logistic";
    case GlmFamily::poisson: return "poisson";
    case GlmFamily::log_link_gamma: return "log_link_gamma";
  }
  return "?";
}

inline GlmFamily glm_family_from_string(const std::string& s) {
  if (s == "logistic") return GlmFamily::logistic;
  if (s == "poisson") return GlmFamily::poisson;
  if (s == "log_link_gamma" || s == "gamma") return GlmFamily::log_link_gamma;
  throw UserError("unknown GLM family '" + s + "'");
}

inline std::string estimate_label(GlmFamily f) {
  switch (f) {
    case GlmFamily::logistic: return "OR";
    case GlmFamily::poisson: return "RR";
    case GlmFamily::log_link_gamma: return "ratio of means";
  }
  return "?";
}

struct GlmFit {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd exp_coefficients;
  Eigen::VectorXd cluster_robust_se;
  std::vector<std::pair<double, double>> ci95;  // exp scale, ordered
  Eigen::VectorXd p_values;                     // Wald, two-sided
  int n_clusters = 0;
  int iterations = 0;
  double deviance = 0.0;
  bool converged = false;
};

namespace detail {

inline void check_family_support(const Eigen::VectorXd& y, GlmFamily fam) {
  for (long i = 0; i < y.size(); ++i) {
    const double v = y[i];
    switch (fam) {
      case GlmFamily::logistic:
        if (v != 0.0 && v != 1.0)
          throw UserError("logistic outcome must be 0/1, got " +
                          std::to_string(v));
        break;
      case GlmFamily::poisson:
        if (v < 0.0 || v != std::floor(v))
          throw UserError("poisson outcome must be a nonnegative integer");
        break;
      case GlmFamily::log_link_gamma:
        if (v <= 0.0)
          throw UserError("gamma outcome must be strictly positive");
        break;
    }
  }
}

inline double glm_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                           GlmFamily fam) {
  double dev = 0.0;
  for (long i = 0; i < y.size(); ++i) {
    const double yi = y[i], mi = mu[i];
    switch (fam) {
      case GlmFamily::logistic:
        if (yi > 0.0) dev += yi * std::log(yi / mi);
        if (yi < 1.0) dev += (1.0 - yi) * std::log((1.0 - yi) / (1.0 - mi));
        break;
      case GlmFamily::poisson:
        if (yi > 0.0) dev += yi * std::log(yi / mi);
        dev -= yi - mi;
        break;
      case GlmFamily::log_link_gamma:
        dev += -std::log(yi / mi) + (yi - mi) / mi;
        break;
    }
  }
  return 2.0 * dev;
}

}  // namespace detail

// IRLS with a log or logit link, then a cluster-aggregated sandwich
// variance with the G/(G-1) small-sample factor. Empty cluster ids mean
// "cluster unknown": each such row is its own cluster, which makes the
// estimator collapse to the heteroskedasticity-robust form.
inline GlmFit fit_glm(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                      GlmFamily family,
                      const std::vector<std::string>& clusters) {
  const long n = y.size();
  const long k = x.cols();
  if (x.rows() != n) throw UserError("outcome and design row counts differ");
  if (static_cast<long>(clusters.size()) != n)
    throw UserError("cluster vector length differs from row count");
  if (n <= k) throw UserError("more parameters than observations");
  detail::check_family_support(y, family);
  if ((y.array() == y[0]).all())
    throw NumericError("outcome is constant; nothing to model");
  {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(x.transpose() * x);
    if (lu.rank() < k) throw UserError("design matrix is rank deficient");
  }

  // standard mu starts keep the first working response finite
  Eigen::VectorXd mu(n);
  for (long i = 0; i < n; ++i)
    mu[i] = family == GlmFamily::logistic ? (y[i] + 0.5) / 2.0 : y[i] + 0.1;
  Eigen::VectorXd eta(n), beta = Eigen::VectorXd::Zero(k);
  for (long i = 0; i < n; ++i)
    eta[i] = family == GlmFamily::logistic
                 ? std::log(mu[i] / (1.0 - mu[i]))
                 : std::log(mu[i]);

  GlmFit fit;
  double dev = detail::glm_deviance(y, mu, family);
  Eigen::VectorXd w(n), z(n);
  for (int iter = 0; iter < 100; ++iter) {
    fit.iterations = iter + 1;
    for (long i = 0; i < n; ++i) {
      switch (family) {
        case GlmFamily::logistic:
          w[i] = mu[i] * (1.0 - mu[i]);
          z[i] = eta[i] + (y[i] - mu[i]) / w[i];
          break;
        case GlmFamily::poisson:
          w[i] = mu[i];
          z[i] = eta[i] + (y[i] - mu[i]) / mu[i];
          break;
        case GlmFamily::log_link_gamma:
          w[i] = 1.0;
          z[i] = eta[i] + (y[i] - mu[i]) / mu[i];
          break;
      }
    }
    const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
    beta = (xtw * x).ldlt().solve(xtw * z);
    eta = x * beta;
    if (eta.cwiseAbs().maxCoeff() > 30.0 || beta.cwiseAbs().maxCoeff() > 30.0)
      throw NumericError("separation detected: coefficients diverging "
                         "(|eta| exceeded 30)");
    for (long i = 0; i < n; ++i)
      mu[i] = family == GlmFamily::logistic ? 1.0 / (1.0 + std::exp(-eta[i]))
                                            : std::exp(eta[i]);
    const double dev_new = detail::glm_deviance(y, mu, family);
    const bool done = std::fabs(dev_new - dev) / (std::fabs(dev_new) + 0.1) < 1e-8;
    dev = dev_new;
    if (done) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged)
    throw NumericError("IRLS did not converge in 100 iterations");
  fit.deviance = dev;
  fit.coefficients = beta;

  // score residuals; the dispersion factor cancels from the sandwich
  Eigen::VectorXd s(n);
  for (long i = 0; i < n; ++i)
    s[i] = family == GlmFamily::log_link_gamma ? (y[i] - mu[i]) / mu[i]
                                               : y[i] - mu[i];
  std::map<std::string, Eigen::VectorXd> score_by_cluster;
  long own = 0;
  for (long i = 0; i < n; ++i) {
    const std::string id =
        clusters[static_cast<std::size_t>(i)].empty()
            ? "\x01row" + std::to_string(own++)
            : clusters[static_cast<std::size_t>(i)];
    auto [it, fresh] = score_by_cluster.try_emplace(id, Eigen::VectorXd::Zero(k));
    it->second += x.row(i).transpose() * s[i];
    (void)fresh;
  }
  const int g = static_cast<int>(score_by_cluster.size());
  fit.n_clusters = g;
  if (g < 2) throw UserError("need at least two clusters for robust inference");
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(k, k);
  for (const auto& [id, u] : score_by_cluster) bread += u * u.transpose();
  const Eigen::MatrixXd a = x.transpose() * w.asDiagonal() * x;
  const Eigen::MatrixXd ainv = a.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd vc =
      ainv * bread * ainv * (static_cast<double>(g) / (g - 1));

  fit.exp_coefficients = beta.array().exp();
  fit.cluster_robust_se.resize(k);
  fit.p_values.resize(k);
  for (long j = 0; j < k; ++j) {
    const double se = std::sqrt(vc(j, j));
    fit.cluster_robust_se[j] = se;
    fit.ci95.emplace_back(std::exp(beta[j] - 1.96 * se),
                          std::exp(beta[j] + 1.96 * se));
    const double zstat = beta[j] / se;
    fit.p_values[j] = 2.0 * dist::norm_cdf(-std::fabs(zstat));
  }
  return fit;
}

// z-scoring with the n-1 (sample) standard deviation, matching the score
// examples in the report conventions: {0, 100} -> -0.7071, +0.7071.
inline Eigen::VectorXd standardize(const Eigen::VectorXd& x) {
  if (x.size() < 2) throw UserError("need at least two values to standardize");
  const double mean = x.mean();
  const double ss = (x.array() - mean).square().sum();
  if (ss <= 0.0) throw UserError("constant vector cannot be standardized");
  const double sd = std::sqrt(ss / (static_cast<double>(x.size()) - 1.0));
  return (x.array() - mean) / sd;
}

enum class PredictorForm { continuous_std, categorical };

inline std::string to_string(PredictorForm f) {
  return f == PredictorForm::continuous_std ? "continuous_std" : "categorical";
}

inline PredictorForm predictor_form_from_string(const std::string& s) {
  if (s == "continuous_std" || s == "continuous") return PredictorForm::continuous_std;
  if (s == "categorical") return PredictorForm::categorical;
  throw UserError("unknown predictor form '" + s + "'");
}

struct OutcomeSpec {
  std::string name;
  GlmFamily family = GlmFamily::logistic;
  PredictorForm form = PredictorForm::continuous_std;
  std::string column;
  std::string cluster_column;      // empty: use the cohort's cluster ids
  std::optional<int> binarize_ge;  // ordinal outcome: 1 iff value >= cut
};

inline std::string significance_stars(double p) {
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

struct ValidityRow {
  std::string outcome;
  std::string term;     // "per SD", "Moderate vs Low", "High vs Low"
  std::string family;
  std::string label;    // OR / RR / ratio of means
  double estimate = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p = 1.0;
  std::string stars;
  long n = 0;
  int n_clusters = 0;
  std::string error;    // nonempty: fit failed, other fields unset
};

// One table row per reported coefficient: the standardized-score slope for
// continuous form, the two non-reference category contrasts for categorical
// form. Rows with missing outcome values are dropped per outcome
// (complete-case); per-outcome failures land in `error` without aborting
// the table.
inline std::vector<ValidityRow> validity_table(
    const std::vector<OutcomeSpec>& specs, const std::vector<long>& index,
    const std::vector<Category>& category,
    const std::vector<std::string>& clusters, const csv::Table& outcomes) {
  const std::size_t n_all = index.size();
  if (category.size() != n_all || clusters.size() != n_all ||
      outcomes.rows.size() != n_all)
    throw UserError("validation inputs are not row-aligned");

  std::vector<ValidityRow> table;
  for (const auto& spec : specs) {
    auto fail = [&](const std::string& msg) {
      ValidityRow row;
      row.outcome = spec.name;
      row.family = to_string(spec.family);
      row.label = estimate_label(spec.family);
      row.error = msg;
      table.push_back(std::move(row));
    };
    try {
      const int col = outcomes.col_index(spec.column);
      if (col < 0)
        throw UserError("outcome column '" + spec.column + "' not found");
      int clu_col = -1;
      if (!spec.cluster_column.empty()) {
        clu_col = outcomes.col_index(spec.cluster_column);
        if (clu_col < 0)
          throw UserError("cluster column '" + spec.cluster_column +
                          "' not found");
      }
      std::vector<double> yv;
      std::vector<long> idxv;
      std::vector<Category> catv;
      std::vector<std::string> cluv;
      for (std::size_t r = 0; r < n_all; ++r) {
        const std::string& cell = outcomes.rows[r][static_cast<std::size_t>(col)];
        if (trim(cell).empty() || trim(cell) == "NA") continue;
        double v = 0.0;
        try {
          v = std::stod(cell);
        } catch (const std::exception&) {
          throw UserError("outcome '" + spec.column + "' has non-numeric value '" +
                          cell + "'");
        }
        if (spec.binarize_ge) v = v >= *spec.binarize_ge ? 1.0 : 0.0;
        yv.push_back(v);
        idxv.push_back(index[r]);
        catv.push_back(category[r]);
        cluv.push_back(clu_col >= 0
                           ? trim(outcomes.rows[r][static_cast<std::size_t>(clu_col)])
                           : clusters[r]);
      }
      const long n = static_cast<long>(yv.size());
      if (n < 10) throw UserError("fewer than 10 usable rows");
      Eigen::VectorXd y(n);
      for (long i = 0; i < n; ++i) y[i] = yv[static_cast<std::size_t>(i)];

      if (spec.form == PredictorForm::continuous_std) {
        Eigen::VectorXd raw(n);
        for (long i = 0; i < n; ++i) raw[i] = static_cast<double>(idxv[static_cast<std::size_t>(i)]);
        Eigen::MatrixXd x(n, 2);
        x.col(0).setOnes();
        x.col(1) = standardize(raw);
        const GlmFit fit = fit_glm(y, x, spec.family, cluv);
        ValidityRow row;
        row.outcome = spec.name;
        row.term = "per SD";
        row.family = to_string(spec.family);
        row.label = estimate_label(spec.family);
        row.estimate = fit.exp_coefficients[1];
        row.ci_lo = fit.ci95[1].first;
        row.ci_hi = fit.ci95[1].second;
        row.p = fit.p_values[1];
        row.stars = significance_stars(row.p);
        row.n = n;
        row.n_clusters = fit.n_clusters;
        table.push_back(std::move(row));
      } else {
        Eigen::MatrixXd x(n, 3);
        x.col(0).setOnes();
        for (long i = 0; i < n; ++i) {
          const Category c = catv[static_cast<std::size_t>(i)];
          x(i, 1) = c == Category::Moderate ? 1.0 : 0.0;
          x(i, 2) = c == Category::High ? 1.0 : 0.0;
        }
        const GlmFit fit = fit_glm(y, x, spec.family, cluv);
        const char* terms[2] = {"Moderate vs Low", "High vs Low"};
        for (int j = 1; j <= 2; ++j) {
          ValidityRow row;
          row.outcome = spec.name;
          row.term = terms[j - 1];
          row.family = to_string(spec.family);
          row.label = estimate_label(spec.family);
          row.estimate = fit.exp_coefficients[j];
          row.ci_lo = fit.ci95[static_cast<std::size_t>(j)].first;
          row.ci_hi = fit.ci95[static_cast<std::size_t>(j)].second;
          row.p = fit.p_values[j];
          row.stars = significance_stars(row.p);
          row.n = n;
          row.n_clusters = fit.n_clusters;
          table.push_back(std::move(row));
        }
      }
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }
  return table;
}

}  // namespace carebi
