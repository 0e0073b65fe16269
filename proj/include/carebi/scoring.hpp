#pragma once

// CareBI scores: ordinal responses are mapped to truncated-normal
// conditional means on the latent metric, combined with Thurstone
// regression weights into a general-factor score, rescaled to 0-100 on the
// fitting cohort's observed range, and categorized by thresholds derived
// from one-dimensional k-means.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "carebi/cfa.hpp"
#include "carebi/codebook.hpp"
#include "carebi/common.hpp"
#include "carebi/dist.hpp"
#include "carebi/polycorr.hpp"

namespace carebi {

// E[Z | tau_lo < Z <= tau_hi] for a standard normal
inline double truncated_normal_mean(double lo, double hi) {
  const double phi_lo = std::isinf(lo) ? 0.0 : dist::norm_pdf(lo);
  const double phi_hi = std::isinf(hi) ? 0.0 : dist::norm_pdf(hi);
  const double mass = dist::norm_cdf(hi) - dist::norm_cdf(lo);
  if (mass <= 0.0)
    throw NumericError("empty band in truncated-normal mean");
  return (phi_lo - phi_hi) / mass;
}

// N x p conditional means; strictly increasing in category within an item
inline Eigen::MatrixXd latent_response_means(
    const ResponseMatrix& m, const std::vector<ThresholdSet>& thresholds) {
  if (thresholds.size() != m.n_items())
    throw UserError("threshold table does not match item count");
  const std::size_t n = m.n_rows();
  Eigen::MatrixXd xstar(static_cast<long>(n), static_cast<long>(m.n_items()));
  for (std::size_t j = 0; j < m.n_items(); ++j) {
    const ThresholdSet& ts = thresholds[j];
    for (std::size_t i = 0; i < n; ++i) {
      const Cell& c = m.columns[j][i];
      if (!c)
        throw UserError("missing cell at row " + m.row_ids[i] + ", item " +
                        m.item_ids[j] + "; impute before scoring");
      const int band = ts.band_of(*c);
      xstar(static_cast<long>(i), static_cast<long>(j)) =
          truncated_normal_mean(ts.tau_at(band - 1), ts.tau_at(band));
    }
  }
  return xstar;
}

// Thurstone regression weights for the general factor on the model-implied
// correlation matrix: score_n = lambda_g' Sigma^-1 xstar_n.
inline Eigen::VectorXd regression_scores(const CfaFit& fit,
                                         const Eigen::MatrixXd& xstar) {
  if (fit.spec.variant != CfaVariant::bifactor)
    throw UserError("scoring requires a bifactor model");
  if (!fit.converged) throw UserError("scoring requires a converged fit");
  if (xstar.cols() != fit.spec.n_items())
    throw UserError("latent-response matrix does not match model items");
  const Eigen::MatrixXd sigma = implied_correlation(fit);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(sigma);
  if (!lu.isInvertible())
    throw NumericError("model-implied correlation matrix is singular");
  const Eigen::VectorXd wts = lu.solve(fit.lambda_g);
  return xstar * wts;
}

struct RescaleResult {
  std::vector<long> index;  // integers in [0, 100]
  double min_raw = 0.0;     // frozen cohort scale
  double max_raw = 0.0;
};

inline long apply_scale(double raw, double min_raw, double max_raw) {
  const double z = 100.0 * (raw - min_raw) / (max_raw - min_raw);
  return std::clamp(round_half_away(z), 0L, 100L);
}

// Cohort min-max rescale: lowest observed score maps to 0, highest to 100,
// rounding half away from zero. The (min, max) pair is the frozen scale a
// serialized model carries for scoring new respondents.
inline RescaleResult rescale_minmax(const Eigen::VectorXd& raw) {
  if (raw.size() < 2) throw UserError("need at least two scores to rescale");
  RescaleResult res;
  res.min_raw = raw.minCoeff();
  res.max_raw = raw.maxCoeff();
  if (res.max_raw <= res.min_raw) throw UserError("no score variance");
  res.index.reserve(static_cast<std::size_t>(raw.size()));
  for (long i = 0; i < raw.size(); ++i)
    res.index.push_back(apply_scale(raw[i], res.min_raw, res.max_raw));
  return res;
}

struct BurdenThresholds {
  std::vector<double> centers;   // ascending cluster centers
  std::vector<long> boundaries;  // rounded midpoints between adjacent centers
  std::string name;              // nonempty for named presets
};

// Exact k-means in one dimension: clusters are contiguous runs of the
// sorted values, so dynamic programming over distinct values (weighted by
// multiplicity) finds the global within-cluster-SSE optimum. Deterministic;
// ties broken toward the shortest rightmost cluster.
inline BurdenThresholds kmeans_thresholds(const std::vector<long>& index,
                                          int k = 3) {
  if (k < 2) throw UserError("k must be at least 2");
  std::vector<double> vals;
  std::vector<double> wts;
  {
    std::map<long, long> counts;
    for (long v : index) ++counts[v];
    for (const auto& [v, c] : counts) {
      vals.push_back(static_cast<double>(v));
      wts.push_back(static_cast<double>(c));
    }
  }
  const int d = static_cast<int>(vals.size());
  if (d < k)
    throw UserError("fewer than " + std::to_string(k) + " distinct values");

  // prefix sums of weight, weighted value, weighted square over vals[0..i)
  std::vector<double> pw(d + 1, 0.0), ps(d + 1, 0.0), ps2(d + 1, 0.0);
  for (int i = 0; i < d; ++i) {
    pw[i + 1] = pw[i] + wts[i];
    ps[i + 1] = ps[i] + wts[i] * vals[i];
    ps2[i + 1] = ps2[i] + wts[i] * vals[i] * vals[i];
  }
  auto seg_cost = [&](int a, int b) {  // vals[a..b)
    const double w = pw[b] - pw[a], s = ps[b] - ps[a], s2 = ps2[b] - ps2[a];
    return s2 - s * s / w;
  };

  const double big = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(
      static_cast<std::size_t>(k) + 1, std::vector<double>(d + 1, big));
  std::vector<std::vector<int>> split(
      static_cast<std::size_t>(k) + 1, std::vector<int>(d + 1, 0));
  best[0][0] = 0.0;
  for (int c = 1; c <= k; ++c)
    for (int b = c; b <= d; ++b)
      for (int a = c - 1; a < b; ++a) {
        const double f = best[static_cast<std::size_t>(c) - 1][a] + seg_cost(a, b);
        if (f < best[static_cast<std::size_t>(c)][b]) {
          best[static_cast<std::size_t>(c)][b] = f;
          split[static_cast<std::size_t>(c)][b] = a;
        }
      }

  std::vector<int> cuts(static_cast<std::size_t>(k) + 1, 0);
  cuts[static_cast<std::size_t>(k)] = d;
  for (int c = k; c > 0; --c)
    cuts[static_cast<std::size_t>(c) - 1] =
        split[static_cast<std::size_t>(c)][cuts[static_cast<std::size_t>(c)]];

  BurdenThresholds th;
  for (int c = 0; c < k; ++c) {
    const int a = cuts[static_cast<std::size_t>(c)];
    const int b = cuts[static_cast<std::size_t>(c) + 1];
    th.centers.push_back((ps[b] - ps[a]) / (pw[b] - pw[a]));
  }
  for (int c = 0; c + 1 < k; ++c)
    th.boundaries.push_back(round_half_away(
        0.5 * (th.centers[static_cast<std::size_t>(c)] +
               th.centers[static_cast<std::size_t>(c) + 1])));
  return th;
}

// exhaustive 1-D clustering reference: published thresholds as a preset
inline BurdenThresholds named_preset(const std::string& name) {
  if (name == "paper-2022") {
    BurdenThresholds th;
    th.name = name;
    th.boundaries = {30, 50};
    return th;
  }
  throw UserError("unknown threshold preset '" + name + "'");
}

enum class Category { Low, Moderate, High };

inline std::string to_string(Category c) {
  switch (c) {
    case Category::Low: return "Low";
    case Category::Moderate: return "Moderate";
    case Category::High: return "High";
  }
  return "?";
}

// Low iff index <= b1; Moderate iff b1 < index <= b2; High otherwise.
inline Category classify(long index, const BurdenThresholds& th) {
  if (th.boundaries.size() != 2)
    throw UserError("classification needs exactly two boundaries");
  if (index < 0 || index > 100)
    throw UserError("index " + std::to_string(index) + " outside [0, 100]");
  if (index <= th.boundaries[0]) return Category::Low;
  if (index <= th.boundaries[1]) return Category::Moderate;
  return Category::High;
}

inline nlohmann::json thresholds_to_json(const BurdenThresholds& th) {
  nlohmann::json j;
  if (!th.name.empty()) j["preset"] = th.name;
  if (!th.centers.empty()) j["centers"] = th.centers;
  j["boundaries"] = th.boundaries;
  return j;
}

inline BurdenThresholds thresholds_from_json(const nlohmann::json& j) {
  BurdenThresholds th;
  if (j.contains("preset")) th.name = j.at("preset").get<std::string>();
  if (j.contains("centers"))
    for (const auto& v : j.at("centers")) th.centers.push_back(v.get<double>());
  for (const auto& v : j.at("boundaries")) th.boundaries.push_back(v.get<long>());
  if (th.boundaries.size() < 1) throw UserError("thresholds file has no boundaries");
  return th;
}

}  // namespace carebi
