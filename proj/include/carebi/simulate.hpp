#pragma once

// Synthetic ordinal data from a known bifactor structure. Draws are routed
// through per-entity seed streams (general factor, each group factor, each
// item) so that permuting the item list permutes the output columns without
// changing any values, and so that raising the missingness rate only masks
// entries without disturbing the rest.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "carebi/codebook.hpp"
#include "carebi/common.hpp"
#include "carebi/rng.hpp"

namespace carebi {

struct TrueItem {
  std::string id;
  std::string group;
  double lambda_g = 0.0;
  double lambda_s = 0.0;
  std::vector<double> taus;               // strictly increasing cut points
  std::map<std::string, double> extra;    // loadings on other group factors

  int n_levels() const { return static_cast<int>(taus.size()) + 1; }
};

struct TrueModel {
  std::vector<TrueItem> items;
  std::vector<std::string> groups;

  int n_items() const { return static_cast<int>(items.size()); }
  int n_groups() const { return static_cast<int>(groups.size()); }

  int group_index(const std::string& name) const {
    for (int k = 0; k < n_groups(); ++k)
      if (groups[static_cast<std::size_t>(k)] == name) return k;
    throw UserError("unknown group '" + name + "' in model");
  }

  // p x (1 + G) loading matrix; column 0 is the general factor
  Eigen::MatrixXd loading_matrix() const {
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n_items(), 1 + n_groups());
    for (int i = 0; i < n_items(); ++i) {
      const auto& it = items[static_cast<std::size_t>(i)];
      l(i, 0) = it.lambda_g;
      l(i, 1 + group_index(it.group)) = it.lambda_s;
      for (const auto& [g, lam] : it.extra) l(i, 1 + group_index(g)) += lam;
    }
    return l;
  }

  Eigen::VectorXd uniqueness() const {
    const Eigen::MatrixXd l = loading_matrix();
    return Eigen::VectorXd::Ones(l.rows()) - l.rowwise().squaredNorm();
  }

  void validate() const {
    if (items.empty()) throw UserError("model has no items");
    if (groups.empty()) throw UserError("model has no groups");
    std::map<std::string, int> seen;
    for (const auto& it : items) {
      if (++seen[it.id] > 1) throw UserError("duplicate item id '" + it.id + "'");
      group_index(it.group);
      for (const auto& [g, lam] : it.extra) {
        group_index(g);
        (void)lam;
      }
      if (it.taus.empty())
        throw UserError("item '" + it.id + "' has no thresholds");
      for (std::size_t k = 1; k < it.taus.size(); ++k)
        if (!(it.taus[k] > it.taus[k - 1]))
          throw UserError("item '" + it.id + "' thresholds not increasing");
    }
    const Eigen::VectorXd u = uniqueness();
    for (int i = 0; i < n_items(); ++i)
      if (u[i] <= 0.0)
        throw UserError("item '" + items[static_cast<std::size_t>(i)].id +
                        "' has communality >= 1");
  }
};

inline TrueModel true_model_from_json(const nlohmann::json& j) {
  TrueModel m;
  if (!j.contains("groups") || !j.contains("items"))
    throw UserError("model json needs 'groups' and 'items'");
  for (const auto& g : j.at("groups")) m.groups.push_back(g.get<std::string>());
  for (const auto& ji : j.at("items")) {
    TrueItem it;
    it.id = ji.at("id").get<std::string>();
    it.group = ji.at("group").get<std::string>();
    it.lambda_g = ji.at("lambda_g").get<double>();
    it.lambda_s = ji.at("lambda_s").get<double>();
    for (const auto& t : ji.at("thresholds")) it.taus.push_back(t.get<double>());
    if (ji.contains("extra"))
      for (const auto& [g, lam] : ji.at("extra").items())
        it.extra[g] = lam.get<double>();
    m.items.push_back(std::move(it));
  }
  m.validate();
  return m;
}

inline nlohmann::json true_model_to_json(const TrueModel& m) {
  nlohmann::json j;
  j["groups"] = m.groups;
  j["items"] = nlohmann::json::array();
  for (const auto& it : m.items) {
    nlohmann::json ji;
    ji["id"] = it.id;
    ji["group"] = it.group;
    ji["lambda_g"] = it.lambda_g;
    ji["lambda_s"] = it.lambda_s;
    ji["thresholds"] = it.taus;
    if (!it.extra.empty()) ji["extra"] = it.extra;
    j["items"].push_back(std::move(ji));
  }
  return j;
}

inline TrueModel load_true_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UserError("model file " + path + " is not valid json: " + e.what());
  }
  return true_model_from_json(j);
}

// Population correlation of the latent responses implied by the model:
// L L' off the diagonal, exactly 1 on it.
inline Eigen::MatrixXd population_polychoric(const TrueModel& m) {
  const Eigen::MatrixXd l = m.loading_matrix();
  Eigen::MatrixXd sigma = l * l.transpose();
  sigma.diagonal().setOnes();
  return sigma;
}

struct OmegaReport {
  double omega_h = 0.0;
  std::vector<double> omega_s;  // one per group, model group order
};

// Variance-ratio reliability for an orthogonal general + group structure.
// Block sums include any cross loadings that fall inside the block.
inline OmegaReport omega_from_loadings(const Eigen::MatrixXd& l,
                                       const std::vector<int>& group_of,
                                       int n_groups) {
  const int p = static_cast<int>(l.rows());
  const int nf = static_cast<int>(l.cols());
  const Eigen::VectorXd u =
      Eigen::VectorXd::Ones(p) - l.rowwise().squaredNorm();
  const Eigen::VectorXd colsum = l.colwise().sum().transpose();
  const double var_total = colsum.squaredNorm() + u.sum();
  OmegaReport rep;
  rep.omega_h = colsum[0] * colsum[0] / var_total;
  rep.omega_s.resize(static_cast<std::size_t>(n_groups), 0.0);
  for (int g = 0; g < n_groups; ++g) {
    Eigen::VectorXd block_sum = Eigen::VectorXd::Zero(nf);
    double block_u = 0.0;
    for (int i = 0; i < p; ++i) {
      if (group_of[static_cast<std::size_t>(i)] != g) continue;
      block_sum += l.row(i).transpose();
      block_u += u[i];
    }
    const double block_var = block_sum.squaredNorm() + block_u;
    const double spec = block_sum[1 + g];
    rep.omega_s[static_cast<std::size_t>(g)] =
        block_var > 0.0 ? spec * spec / block_var : 0.0;
  }
  return rep;
}

inline OmegaReport population_omega(const TrueModel& m) {
  std::vector<int> group_of;
  group_of.reserve(m.items.size());
  for (const auto& it : m.items) group_of.push_back(m.group_index(it.group));
  return omega_from_loadings(m.loading_matrix(), group_of, m.n_groups());
}

struct SimOutput {
  ResponseMatrix responses;
  Eigen::MatrixXd latent;  // n x (1 + G), column 0 = general factor
  std::uint64_t seed = 0;

  Eigen::VectorXd true_g() const { return latent.col(0); }
  Eigen::MatrixXd true_group_scores() const {
    return latent.rightCols(latent.cols() - 1);
  }
};

inline SimOutput simulate_bifactor(const TrueModel& m, long n,
                                   std::uint64_t seed,
                                   double missing_rate = 0.0,
                                   int n_clusters = 0) {
  m.validate();
  if (n < 1) throw UserError("need at least one simulated row");
  if (missing_rate < 0.0 || missing_rate >= 1.0)
    throw UserError("missing rate must be in [0, 1)");
  const int p = m.n_items();
  const int ng = m.n_groups();
  const Eigen::MatrixXd l = m.loading_matrix();
  const Eigen::VectorXd u = m.uniqueness();

  SimOutput out;
  out.seed = seed;
  out.latent.resize(n, 1 + ng);
  {
    rng::Stream gs(rng::derive(seed, "g"));
    for (long r = 0; r < n; ++r) out.latent(r, 0) = gs.next_normal();
  }
  for (int g = 0; g < ng; ++g) {
    rng::Stream ss(rng::derive(seed, "grp:" + m.groups[static_cast<std::size_t>(g)]));
    for (long r = 0; r < n; ++r) out.latent(r, 1 + g) = ss.next_normal();
  }

  ResponseMatrix& rm = out.responses;
  rm.row_ids.resize(static_cast<std::size_t>(n));
  rm.cluster_ids.resize(static_cast<std::size_t>(n));
  for (long r = 0; r < n; ++r) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "r%05ld", r + 1);
    rm.row_ids[static_cast<std::size_t>(r)] = buf;
    rm.cluster_ids[static_cast<std::size_t>(r)] =
        n_clusters > 0 ? "c" + std::to_string(r % n_clusters + 1) : "";
  }
  rm.columns.resize(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) {
    const auto& it = m.items[static_cast<std::size_t>(i)];
    rm.item_ids.push_back(it.id);
    rm.n_levels.push_back(it.n_levels());
    auto& col = rm.columns[static_cast<std::size_t>(i)];
    col.resize(static_cast<std::size_t>(n));
    const double su = std::sqrt(u[i]);
    rng::Stream es(rng::derive(seed, "item:" + it.id));
    rng::Stream ms(rng::derive(seed, "miss:" + it.id));
    for (long r = 0; r < n; ++r) {
      const double ystar =
          l.row(i).dot(out.latent.row(r)) + su * es.next_normal();
      int code = 1;
      for (double tau : it.taus)
        if (ystar > tau) ++code;
      const bool drop = missing_rate > 0.0 && ms.next_uniform() < missing_rate;
      col[static_cast<std::size_t>(r)] = drop ? Cell{} : Cell{code};
    }
  }
  return out;
}

// Rebuild the raw survey layout from coded responses: composites split back
// into gate + follow-up columns and reverse coding undone, so the prep stage
// can be exercised end to end against known output.
inline csv::Table to_raw_table(const ResponseMatrix& m, const Codebook& cb) {
  csv::Table t;
  t.header = {"row_id", "cluster_id"};
  std::vector<const ItemSpec*> specs;
  for (const auto& id : m.item_ids) {
    const ItemSpec* s = cb.find(id);
    if (!s) throw UserError("item '" + id + "' not in codebook");
    specs.push_back(s);
    if (s->composite) {
      t.header.push_back(s->composite->gate_id);
      t.header.push_back(s->composite->level_id);
    } else {
      t.header.push_back(s->id);
    }
  }
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    std::vector<std::string> row;
    row.push_back(m.row_ids[r]);
    row.push_back(m.cluster_ids[r]);
    for (std::size_t c = 0; c < specs.size(); ++c) {
      const ItemSpec& s = *specs[c];
      const Cell& v = m.columns[c][r];
      if (s.composite) {
        if (!v.has_value()) {
          row.push_back("");  // missing gate propagates to the composite
          row.push_back("");
        } else if (*v == s.composite->gate_negative_code) {
          row.push_back("No");
          row.push_back("");
        } else {
          int level = *v - 1;
          if (s.reverse) level = s.n_levels - level;
          row.push_back("Yes");
          row.push_back(std::to_string(level));
        }
      } else {
        if (!v.has_value()) {
          row.push_back("");
        } else {
          const int raw = s.reverse ? s.n_levels + 1 - *v : *v;
          row.push_back(std::to_string(raw));
        }
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct CongruenceResult {
  std::vector<double> phi;   // |Tucker congruence| per column of a, matched
  std::vector<int> perm;     // column of b matched to each column of a
  double min_abs = 0.0;
};

// Greedy factor matching on absolute Tucker congruence. Columns of a and b
// must agree in number and row count.
inline CongruenceResult congruence(const Eigen::MatrixXd& a,
                                   const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw UserError("congruence needs matrices of equal shape");
  const int nf = static_cast<int>(a.cols());
  for (int j = 0; j < nf; ++j)
    if (a.col(j).squaredNorm() == 0.0 || b.col(j).squaredNorm() == 0.0)
      throw NumericError("congruence: zero-norm loading column " +
                         std::to_string(j + 1));
  Eigen::MatrixXd phi(nf, nf);
  for (int i = 0; i < nf; ++i)
    for (int j = 0; j < nf; ++j)
      phi(i, j) = a.col(i).dot(b.col(j)) /
                  std::sqrt(a.col(i).squaredNorm() * b.col(j).squaredNorm());
  CongruenceResult res;
  res.phi.assign(static_cast<std::size_t>(nf), 0.0);
  res.perm.assign(static_cast<std::size_t>(nf), -1);
  std::vector<bool> used_a(static_cast<std::size_t>(nf), false),
      used_b(static_cast<std::size_t>(nf), false);
  for (int step = 0; step < nf; ++step) {
    int bi = -1, bj = -1;
    double best = -1.0;
    for (int i = 0; i < nf; ++i)
      for (int j = 0; j < nf; ++j)
        if (!used_a[static_cast<std::size_t>(i)] &&
            !used_b[static_cast<std::size_t>(j)] &&
            std::fabs(phi(i, j)) > best) {
          best = std::fabs(phi(i, j));
          bi = i;
          bj = j;
        }
    used_a[static_cast<std::size_t>(bi)] = used_b[static_cast<std::size_t>(bj)] = true;
    res.phi[static_cast<std::size_t>(bi)] = best;
    res.perm[static_cast<std::size_t>(bi)] = bj;
  }
  res.min_abs = *std::min_element(res.phi.begin(), res.phi.end());
  return res;
}

}  // namespace carebi
