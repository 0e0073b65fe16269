#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>

#include "carebi/common.hpp"

namespace carebi::optim {

struct BrentResult {
  double x = 0.0;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Brent's derivative-free minimizer on [a, b].
template <class F>
BrentResult brent_min(F&& f, double a, double b, double tol = 1e-8,
                      int max_iter = 200) {
  const double golden = 0.3819660112501051;
  const double eps = 1e-12;
  double x, w, v, fx, fw, fv, d = 0.0, e = 0.0;
  x = w = v = a + golden * (b - a);
  fx = fw = fv = f(x);
  BrentResult res;
  for (int iter = 0; iter < max_iter; ++iter) {
    res.iterations = iter + 1;
    const double m = 0.5 * (a + b);
    const double tol1 = tol * std::fabs(x) + eps;
    const double tol2 = 2.0 * tol1;
    if (std::fabs(x - m) <= tol2 - 0.5 * (b - a)) {
      res.converged = true;
      break;
    }
    double p = 0.0, q = 0.0, r = 0.0;
    if (std::fabs(e) > tol1) {
      r = (x - w) * (fx - fv);
      q = (x - v) * (fx - fw);
      p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      else q = -q;
      r = e;
      e = d;
    }
    if (std::fabs(p) < std::fabs(0.5 * q * r) && p > q * (a - x) &&
        p < q * (b - x)) {
      d = p / q;
      const double u = x + d;
      if (u - a < tol2 || b - u < tol2) d = x < m ? tol1 : -tol1;
    } else {
      e = x < m ? b - x : a - x;
      d = golden * e;
    }
    const double u = std::fabs(d) >= tol1 ? x + d : x + (d > 0.0 ? tol1 : -tol1);
    const double fu = f(u);
    if (fu <= fx) {
      if (u < x) b = x;
      else a = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u;
      else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  res.x = x;
  res.f = fx;
  return res;
}

struct BfgsOptions {
  int max_iter = 500;
  double grad_tol = 1e-6;   // infinity norm
  double f_abs_tol = -1.0;  // stop when the objective improves by less; off if < 0
  double c1 = 1e-4;         // Armijo constant
  int max_linesearch = 60;
  Eigen::VectorXd lower;    // empty = unbounded
  Eigen::VectorXd upper;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
  bool at_bound = false;
};

// BFGS with backtracking line search. Bounds, when given, are handled by
// projecting each trial point and resetting the curvature estimate whenever
// the active set changes. Deterministic for fixed inputs.
inline BfgsResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>& fg,
    Eigen::VectorXd x0, const BfgsOptions& opt = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const int n = static_cast<int>(x0.size());
  const bool boxed = opt.lower.size() == n && opt.upper.size() == n;

  auto project = [&](VectorXd v) {
    if (boxed)
      v = v.cwiseMax(opt.lower).cwiseMin(opt.upper);
    return v;
  };
  auto active = [&](const VectorXd& v) {
    std::vector<bool> a(n, false);
    if (boxed)
      for (int i = 0; i < n; ++i)
        a[i] = v[i] <= opt.lower[i] || v[i] >= opt.upper[i];
    return a;
  };

  BfgsResult res;
  VectorXd x = project(std::move(x0));
  VectorXd g(n);
  double f = fg(x, &g);
  MatrixXd h_inv = MatrixXd::Identity(n, n);
  auto act = active(x);

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    res.iterations = iter + 1;
    // projected gradient convergence test
    double gmax = 0.0;
    for (int i = 0; i < n; ++i) {
      double gi = g[i];
      if (boxed) {
        if (x[i] <= opt.lower[i] && gi > 0.0) gi = 0.0;
        if (x[i] >= opt.upper[i] && gi < 0.0) gi = 0.0;
      }
      gmax = std::max(gmax, std::fabs(gi));
    }
    if (gmax < opt.grad_tol) {
      res.converged = true;
      break;
    }

    VectorXd dir = -(h_inv * g);
    if (dir.dot(g) >= 0.0) {  // not a descent direction: steepest descent restart
      h_inv.setIdentity();
      dir = -g;
    }

    double step = 1.0;
    double f_new = f;
    VectorXd x_new = x, g_new = g;
    bool ok = false;
    for (int ls = 0; ls < opt.max_linesearch; ++ls) {
      x_new = project(x + step * dir);
      const VectorXd actual = x_new - x;
      if (actual.lpNorm<Eigen::Infinity>() < 1e-15) break;
      f_new = fg(x_new, &g_new);
      if (f_new <= f + opt.c1 * g.dot(actual)) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) {
      // line search stalled; converged if the projected gradient is small
      res.converged = gmax < 1e-3;
      break;
    }

    const VectorXd s = x_new - x;
    const VectorXd y = g_new - g;
    const auto act_new = active(x_new);
    if (act_new != act) {
      h_inv.setIdentity();
    } else {
      const double sy = s.dot(y);
      if (sy > 1e-12) {
        const double rho = 1.0 / sy;
        const MatrixXd ImRsy =
            MatrixXd::Identity(n, n) - rho * s * y.transpose();
        h_inv = ImRsy * h_inv * ImRsy.transpose() + rho * s * s.transpose();
      }
    }
    act = act_new;
    const double df = f - f_new;
    x = x_new;
    g = g_new;
    f = f_new;
    const double df_floor =
        std::max(1e-14 * (1.0 + std::fabs(f)),
                 opt.f_abs_tol > 0.0 ? opt.f_abs_tol : 0.0);
    if (df >= 0.0 && df < df_floor) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.f = f;
  res.grad = g;
  if (boxed)
    for (int i = 0; i < n; ++i)
      if (x[i] <= opt.lower[i] || x[i] >= opt.upper[i]) res.at_bound = true;
  return res;
}

// central finite differences, for objectives without cheap analytic gradients
inline Eigen::VectorXd numerical_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    xp[i] = x0 + h;
    const double fp = f(xp);
    xp[i] = x0 - h;
    const double fm = f(xp);
    xp[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace carebi::optim
