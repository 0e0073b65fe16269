#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "carebi/efa.hpp"
#include "carebi/simulate.hpp"

using namespace carebi;

namespace {

// Oblique two-factor population: R = P phi P' with unit diagonal.
Eigen::MatrixXd oblique_pattern() {
  Eigen::MatrixXd p(6, 2);
  p << 0.75, 0.00, 0.68, 0.05, 0.62, -0.04, 0.10, 0.70, 0.02, 0.66, -0.06, 0.58;
  return p;
}

Eigen::MatrixXd oblique_phi() {
  Eigen::MatrixXd phi(2, 2);
  phi << 1.0, 0.35, 0.35, 1.0;
  return phi;
}

Eigen::MatrixXd oblique_population() {
  const Eigen::MatrixXd p = oblique_pattern();
  Eigen::MatrixXd r = p * oblique_phi() * p.transpose();
  r.diagonal().setOnes();
  return r;
}

Eigen::MatrixXd compound_symmetric(int p, double lambda) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(p, p, lambda * lambda);
  r.diagonal().setOnes();
  return r;
}

}  // namespace

TEST_CASE("eigenvalue tables") {
  SECTION("identity spectrum is flat") {
    auto rows = scree_table(Eigen::MatrixXd::Identity(5, 5));
    REQUIRE(rows.size() == 5);
    for (const auto& r : rows) {
      CHECK(r.eigenvalue == Catch::Approx(1.0).margin(1e-12));
      CHECK(r.first_difference == Catch::Approx(0.0).margin(1e-12));
    }
    CHECK(rows[0].rank == 1);
    CHECK(rows[4].rank == 5);
  }
  SECTION("compound symmetry splits into 3.45 and 0.51") {
    auto rows = scree_table(compound_symmetric(6, 0.7));
    CHECK(rows[0].eigenvalue == Catch::Approx(3.45).margin(1e-12));
    for (int k = 1; k < 6; ++k)
      CHECK(rows[k].eigenvalue == Catch::Approx(0.51).margin(1e-12));
    CHECK(rows[0].first_difference == Catch::Approx(2.94).margin(1e-12));
    CHECK(rows[2].first_difference == Catch::Approx(0.0).margin(1e-12));
    CHECK(rows[5].first_difference == 0.0);
  }
  SECTION("eigenvalues_desc is descending") {
    Eigen::VectorXd ev = eigenvalues_desc(oblique_population());
    for (int k = 1; k < ev.size(); ++k) CHECK(ev[k - 1] >= ev[k]);
  }
}

TEST_CASE("parallel analysis mechanics") {
  TrueModel m;
  m.groups = {"A"};
  for (int i = 0; i < 6; ++i) {
    TrueItem it;
    it.id = "q" + std::to_string(i + 1);
    it.group = "A";
    it.lambda_g = 0.8;
    it.lambda_s = 0.0;
    it.taus = {-0.5, 0.5};
    m.items.push_back(it);
  }
  auto sim = simulate_bifactor(m, 400, 2024u);
  const auto cols = sim.responses.dense();
  const auto& ids = sim.responses.item_ids;

  SECTION("single dominant factor is found") {
    auto rep = parallel_analysis(cols, ids, 100, 5u);
    CHECK(rep.suggested_factors == 1);
    CHECK(rep.n_sims == 100);
    CHECK(rep.criterion == PaCriterion::mean);
    CHECK(rep.observed_eigenvalues.size() == 6);
    CHECK(rep.reference_eigenvalues.size() == 6);
    CHECK(rep.observed_eigenvalues[0] > rep.reference_eigenvalues[0]);
  }
  SECTION("deterministic in the seed") {
    auto a = parallel_analysis(cols, ids, 100, 5u);
    auto b = parallel_analysis(cols, ids, 100, 5u);
    CHECK(a.suggested_factors == b.suggested_factors);
    CHECK((a.reference_eigenvalues - b.reference_eigenvalues)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  SECTION("column order cannot change the answer") {
    std::vector<std::vector<int>> perm_cols{cols[3], cols[0], cols[5],
                                            cols[1], cols[4], cols[2]};
    std::vector<std::string> perm_ids{ids[3], ids[0], ids[5],
                                      ids[1], ids[4], ids[2]};
    auto a = parallel_analysis(cols, ids, 100, 5u);
    auto b = parallel_analysis(perm_cols, perm_ids, 100, 5u);
    CHECK(a.suggested_factors == b.suggested_factors);
    // same spectra up to eigensolver round-off on the permuted matrix
    CHECK((a.reference_eigenvalues - b.reference_eigenvalues)
              .cwiseAbs()
              .maxCoeff() < 1e-9);
  }
  SECTION("criterion selection changes the reference") {
    auto mean_rep = parallel_analysis(cols, ids, 100, 5u, PaCriterion::mean);
    auto p95_rep =
        parallel_analysis(cols, ids, 100, 5u, PaCriterion::percentile95);
    CHECK(p95_rep.reference_eigenvalues[0] > mean_rep.reference_eigenvalues[0]);
    CHECK(to_string(p95_rep.criterion) == "percentile95");
  }
  SECTION("simulation count floor") {
    CHECK_THROWS_AS(parallel_analysis(cols, ids, 99, 5u), UserError);
  }
  SECTION("criterion names round trip") {
    CHECK(pa_criterion_from_string("mean") == PaCriterion::mean);
    CHECK(pa_criterion_from_string("percentile95") == PaCriterion::percentile95);
    CHECK_THROWS_AS(pa_criterion_from_string("median"), UserError);
  }
}

TEST_CASE("minimum-residual extraction") {
  SECTION("compound-symmetric population recovered") {
    auto res = fit_minres(compound_symmetric(6, 0.7), 1);
    REQUIRE(res.converged);
    CHECK_FALSE(res.heywood);
    for (int i = 0; i < 6; ++i) {
      CHECK(res.loadings(i, 0) == Catch::Approx(0.7).margin(1e-4));
      CHECK(res.psi[i] == Catch::Approx(0.51).margin(1e-4));
    }
    CHECK(res.f_min < 1e-9);
  }
  SECTION("identity has nothing to extract") {
    auto res = fit_minres(Eigen::MatrixXd::Identity(6, 6), 1);
    CHECK(res.loadings.cwiseAbs().maxCoeff() < 0.05);
    CHECK(res.f_min < 1e-9);
  }
  SECTION("exact two-factor model fits perfectly") {
    const Eigen::MatrixXd r = oblique_population();
    auto res = fit_minres(r, 2);
    REQUIRE(res.converged);
    CHECK(res.f_min < 1e-10);
    // uniquenesses identified: psi = 1 - diag(P phi P')
    const Eigen::MatrixXd common =
        oblique_pattern() * oblique_phi() * oblique_pattern().transpose();
    for (int i = 0; i < 6; ++i)
      CHECK(res.psi[i] == Catch::Approx(1.0 - common(i, i)).margin(1e-4));
    // the common part is reproduced off the diagonal
    const Eigen::MatrixXd ll = res.loadings * res.loadings.transpose();
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        if (i != j) CHECK(ll(i, j) == Catch::Approx(r(i, j)).margin(1e-5));
  }
  SECTION("solution is the global minimum against probe points") {
    const Eigen::MatrixXd r = oblique_population();
    auto res = fit_minres(r, 2);
    CHECK(res.f_min <=
          detail::minres_objective(r, Eigen::VectorXd::Constant(6, 0.5), 2) + 1e-12);
    CHECK(res.f_min <=
          detail::minres_objective(r, Eigen::VectorXd::Constant(6, 0.3), 2) + 1e-12);
  }
  SECTION("Heywood case flagged at the floor") {
    Eigen::MatrixXd r(3, 3);
    r << 1.0, 0.9, 0.9, 0.9, 1.0, 0.3, 0.9, 0.3, 1.0;
    auto res = fit_minres(r, 1);
    CHECK(res.heywood);
  }
  SECTION("factor count bounds") {
    CHECK_THROWS_AS(fit_minres(compound_symmetric(4, 0.5), 0), UserError);
    CHECK_THROWS_AS(fit_minres(compound_symmetric(4, 0.5), 4), UserError);
  }
}

TEST_CASE("direct quartimin rotation against an independent oracle") {
  // numpy gradient-projection oracle at tolerance 1e-8
  Eigen::MatrixXd a(8, 2);
  a << -0.2505, -0.0898, -0.0087, 0.2605, 0.8570, -0.0914, 0.6591, 0.0566,
      0.6923, 0.7602, 0.4858, 0.8693, 0.1743, 0.0633, 0.7985, 0.2026;
  auto res = rotate_oblimin(a);
  REQUIRE(res.converged);

  Eigen::MatrixXd expect(8, 2);
  expect << -0.114982064411, -0.186634786481, 0.306803698106, -0.179432054644,
      -0.076586823610, 0.900026214199, 0.090701907561, 0.608940430546,
      0.921428541315, 0.179879443029, 1.042542775454, -0.094115580153,
      0.080967999049, 0.129326435772, 0.267900862383, 0.649800351959;
  CHECK((res.pattern - expect).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(res.phi(0, 1) == Catch::Approx(0.530317785110).margin(1e-6));
  CHECK(res.f == Catch::Approx(0.039403210857326).margin(1e-9));

  SECTION("rotation preserves the common covariance") {
    const Eigen::MatrixXd before = a * a.transpose();
    const Eigen::MatrixXd after =
        res.pattern * res.phi * res.pattern.transpose();
    CHECK((before - after).cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("phi is a correlation matrix") {
    CHECK(res.phi(0, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(res.phi(1, 1) == Catch::Approx(1.0).margin(1e-12));
    CHECK(res.phi(0, 1) == res.phi(1, 0));
  }
}

TEST_CASE("rotation edge behavior") {
  SECTION("perfect simple structure is a fixed point") {
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(8, 2);
    for (int i = 0; i < 4; ++i) block(i, 0) = 0.8;
    for (int i = 4; i < 8; ++i) block(i, 1) = 0.7;
    auto res = rotate_oblimin(block);
    CHECK((res.pattern - block).cwiseAbs().maxCoeff() < 1e-7);
    CHECK(std::fabs(res.phi(0, 1)) < 1e-7);
    CHECK(res.f < 1e-12);
  }
  SECTION("single factor passes through untouched") {
    Eigen::MatrixXd one(4, 1);
    one << 0.8, 0.7, 0.6, 0.5;
    auto res = rotate_oblimin(one);
    CHECK((res.pattern - one).cwiseAbs().maxCoeff() == 0.0);
    CHECK(res.phi(0, 0) == 1.0);
    CHECK(res.converged);
  }
  SECTION("columns come out in explained-variance order, signed positive") {
    auto res = rotate_oblimin(oblique_pattern());
    const Eigen::VectorXd ss =
        res.pattern.array().square().colwise().sum().transpose();
    CHECK(ss[0] >= ss[1]);
    for (int k = 0; k < 2; ++k) {
      int arg = 0;
      res.pattern.col(k).cwiseAbs().maxCoeff(&arg);
      CHECK(res.pattern(arg, k) > 0.0);
    }
  }
}

TEST_CASE("extraction plus rotation recovers an oblique population") {
  SECTION("exact simple structure: pattern and phi identified") {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(6, 2);
    p(0, 0) = 0.75;
    p(1, 0) = 0.68;
    p(2, 0) = 0.62;
    p(3, 1) = 0.70;
    p(4, 1) = 0.66;
    p(5, 1) = 0.58;
    Eigen::MatrixXd r = p * oblique_phi() * p.transpose();
    r.diagonal().setOnes();
    auto rot = rotate_oblimin(fit_minres(r, 2).loadings);
    CHECK((rot.pattern - p).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(rot.phi(0, 1) == Catch::Approx(0.35).margin(1e-3));
  }
  SECTION("small cross-loadings shift the optimum only slightly") {
    auto rot = rotate_oblimin(fit_minres(oblique_population(), 2).loadings);
    auto match = congruence(rot.pattern, oblique_pattern());
    CHECK(match.min_abs >= 0.99);
    CHECK(rot.phi(0, 1) == Catch::Approx(0.35).margin(0.05));
  }
}

TEST_CASE("communalities") {
  Eigen::MatrixXd phi_eye = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd phi = oblique_phi();
  phi(0, 1) = phi(1, 0) = 0.3;

  Eigen::MatrixXd pat(3, 2);
  pat << 0.6, 0.0, 0.5, 0.5, 0.0, 0.0;
  CHECK(communalities(pat, phi_eye)[0] == Catch::Approx(0.36).margin(1e-12));
  CHECK(communalities(pat, phi)[1] == Catch::Approx(0.65).margin(1e-12));
  CHECK(communalities(pat, phi)[2] == 0.0);
  CHECK_THROWS_AS(communalities(pat, Eigen::MatrixXd::Identity(3, 3)), UserError);
}

TEST_CASE("fit indices") {
  const Eigen::MatrixXd pattern = oblique_pattern();
  const Eigen::MatrixXd phi = oblique_phi();

  SECTION("single known residual, hand-computed statistics") {
    Eigen::MatrixXd rho = oblique_population();
    rho(0, 3) += 0.1;
    rho(3, 0) += 0.1;
    auto fit = efa_fit_indices(rho, pattern, phi, 401);
    CHECK(fit.df == 4.0);
    CHECK(fit.chi_square == Catch::Approx(4.0).margin(1e-9));
    // T/df = 1 makes TLI exactly 1 regardless of the null statistic
    CHECK(fit.tli == Catch::Approx(1.0).margin(1e-9));
    CHECK(fit.rmsea == Catch::Approx(0.0).margin(1e-6));
    CHECK(fit.bic == Catch::Approx(4.0 - 4.0 * std::log(401.0)).margin(1e-9));
    CHECK(fit.df_null == 15.0);
    CHECK(fit.chi_square_null > fit.chi_square);
  }
  SECTION("perfect fit") {
    auto fit = efa_fit_indices(oblique_population(), pattern, phi, 500);
    CHECK(fit.chi_square == Catch::Approx(0.0).margin(1e-12));
    CHECK(fit.rmsea == 0.0);
    CHECK(fit.tli >= 1.0);
  }
  SECTION("misspecified factor count inflates RMSEA") {
    // three orthogonal blocks, fit a single factor
    TrueModel m;
    m.groups = {"A", "B", "C"};
    for (int g = 0; g < 3; ++g)
      for (int i = 0; i < 3; ++i) {
        TrueItem it;
        it.id = "x" + std::to_string(g * 3 + i + 1);
        it.group = m.groups[g];
        it.lambda_g = 0.0;
        it.lambda_s = 0.7;
        it.taus = {0.0};
        m.items.push_back(it);
      }
    const Eigen::MatrixXd rho = population_polychoric(m);
    auto res = fit_minres(rho, 1);
    auto rot = rotate_oblimin(res.loadings);
    auto fit = efa_fit_indices(rho, rot.pattern, rot.phi, 1000);
    CHECK(fit.rmsea > 0.08);
  }
  SECTION("zero degrees of freedom rejected") {
    CHECK_THROWS_AS(
        efa_fit_indices(compound_symmetric(3, 0.5),
                        Eigen::MatrixXd::Ones(3, 1),
                        Eigen::MatrixXd::Identity(1, 1), 100),
        UserError);
  }
}

TEST_CASE("item retention rules") {
  auto run_one = [](double l1, double l2, double h2,
                    std::vector<std::string> overrides = {}) {
    Eigen::MatrixXd pat(1, 2);
    pat << l1, l2;
    Eigen::VectorXd comm(1);
    comm << h2;
    return retention_filter(pat, comm, {"item"}, 0.40, 0.32, 0.40, overrides);
  };

  SECTION("documented examples") {
    auto kept = run_one(0.55, 0.10, 0.45);
    CHECK(kept.rows[0].kept);
    CHECK(kept.rows[0].reason == DropReason::kept);

    auto cross = run_one(0.45, 0.40, 0.50);
    CHECK_FALSE(cross.rows[0].kept);
    CHECK(cross.rows[0].reason == DropReason::cross_loading);

    auto overridden = run_one(0.55, 0.40, 0.50, {"item"});
    CHECK(overridden.rows[0].kept);
    CHECK(overridden.rows[0].reason == DropReason::conceptual_override);
  }
  SECTION("first failed criterion wins") {
    CHECK(run_one(0.30, 0.35, 0.10).rows[0].reason == DropReason::low_primary);
    CHECK(run_one(0.55, 0.35, 0.10).rows[0].reason == DropReason::cross_loading);
    CHECK(run_one(0.55, 0.10, 0.10).rows[0].reason == DropReason::low_communality);
  }
  SECTION("boundaries: exceed, below, at least") {
    CHECK(run_one(0.40, 0.10, 0.50).rows[0].reason == DropReason::low_primary);
    CHECK(run_one(0.41, 0.32, 0.50).rows[0].reason == DropReason::cross_loading);
    CHECK(run_one(0.41, 0.31, 0.40).rows[0].kept);
    CHECK(run_one(0.41, 0.31, 0.399).rows[0].reason == DropReason::low_communality);
  }
  SECTION("negative primary loadings count by magnitude") {
    auto rep = run_one(-0.55, 0.10, 0.45);
    CHECK(rep.rows[0].kept);
    CHECK(rep.rows[0].primary_loading == -0.55);
  }
  SECTION("raising load_min never rescues an item") {
    Eigen::MatrixXd pat(4, 2);
    pat << 0.55, 0.10, 0.45, 0.05, 0.70, 0.20, 0.38, 0.02;
    Eigen::VectorXd comm(4);
    comm << 0.5, 0.45, 0.6, 0.42;
    std::vector<std::string> ids{"a", "b", "c", "d"};
    auto loose = retention_filter(pat, comm, ids, 0.40, 0.32, 0.40);
    auto strict = retention_filter(pat, comm, ids, 0.56, 0.32, 0.40);
    for (size_t i = 0; i < 4; ++i)
      if (strict.rows[i].kept) CHECK(loose.rows[i].kept);
  }
  SECTION("threshold domain") {
    Eigen::MatrixXd pat(1, 2);
    pat << 0.5, 0.1;
    Eigen::VectorXd comm(1);
    comm << 0.5;
    CHECK_THROWS_AS(retention_filter(pat, comm, {"a"}, 0.0, 0.32, 0.40), UserError);
    CHECK_THROWS_AS(retention_filter(pat, comm, {"a"}, 0.40, 1.0, 0.40), UserError);
  }
  SECTION("reason labels are stable") {
    CHECK(to_string(DropReason::kept) == "kept");
    CHECK(to_string(DropReason::low_primary) == "low_primary");
    CHECK(to_string(DropReason::cross_loading) == "cross_loading");
    CHECK(to_string(DropReason::low_communality) == "low_communality");
    CHECK(to_string(DropReason::conceptual_override) == "conceptual_override");
  }
}
