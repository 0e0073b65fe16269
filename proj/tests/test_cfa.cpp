#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "carebi/cfa.hpp"
#include "carebi/rng.hpp"
#include "carebi/simulate.hpp"

using namespace carebi;

namespace {

std::vector<std::string> six_items() {
  return {"q1", "q2", "q3", "q4", "q5", "q6"};
}

// two groups of three, every item on the general factor
ModelSpec two_group_spec() {
  return build_bifactor_spec(six_items(), {{"q1", "care"},
                                           {"q2", "care"},
                                           {"q3", "care"},
                                           {"q4", "trust"},
                                           {"q5", "trust"},
                                           {"q6", "trust"}});
}

// population correlation for lambda_g = g, lambda_s = s on two_group_spec
Eigen::MatrixXd two_group_population(double g, double s) {
  Eigen::VectorXd lg = Eigen::VectorXd::Constant(6, g);
  Eigen::MatrixXd ls = Eigen::MatrixXd::Zero(6, 2);
  for (int i = 0; i < 3; ++i) ls(i, 0) = s;
  for (int i = 3; i < 6; ++i) ls(i, 1) = s;
  Eigen::MatrixXd sigma = lg * lg.transpose() + ls * ls.transpose();
  sigma.diagonal().setOnes();
  return sigma;
}

PolychoricMatrix wrap_rho(const Eigen::MatrixXd& r,
                          const std::vector<std::string>& ids) {
  PolychoricMatrix pm;
  pm.rho = r;
  pm.item_ids = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ThresholdSet t;
    t.taus = {0.0};
    t.codes = {1, 2};
    pm.thresholds.push_back(t);
  }
  return pm;
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

}  // namespace

TEST_CASE("bifactor model specification") {
  SECTION("well-formed spec") {
    auto spec = two_group_spec();
    CHECK(spec.n_items() == 6);
    CHECK(spec.n_groups() == 2);
    CHECK(spec.group_of == std::vector<int>{0, 0, 0, 1, 1, 1});
    CHECK(spec.variant == CfaVariant::bifactor);
    CHECK(spec.loading_slots().size() == 6);
  }
  SECTION("extra loadings append slots") {
    auto spec = build_bifactor_spec(six_items(),
                                    {{"q1", "care"},
                                     {"q2", "care"},
                                     {"q3", "care"},
                                     {"q4", "trust"},
                                     {"q5", "trust"},
                                     {"q6", "trust"}},
                                    {{"q1", "trust"}});
    REQUIRE(spec.extra.size() == 1);
    CHECK(spec.extra[0] == std::pair<int, int>{0, 1});
    CHECK(spec.loading_slots().size() == 7);
  }
  SECTION("rejects malformed assignments") {
    CHECK_THROWS_AS(build_bifactor_spec(six_items(), {{"zz", "care"}}),
                    UserError);
    CHECK_THROWS_AS(
        build_bifactor_spec(six_items(), {{"q1", "care"}, {"q1", "trust"}}),
        UserError);
    // q6 left out
    CHECK_THROWS_AS(build_bifactor_spec(six_items(), {{"q1", "care"},
                                                      {"q2", "care"},
                                                      {"q3", "care"},
                                                      {"q4", "trust"},
                                                      {"q5", "trust"}}),
                    UserError);
    // singleton group
    CHECK_THROWS_AS(build_bifactor_spec(six_items(), {{"q1", "care"},
                                                      {"q2", "care"},
                                                      {"q3", "care"},
                                         {"q4", "care"},
                                                      {"q5", "care"},
                                                      {"q6", "trust"}}),
                    UserError);
  }
  SECTION("rejects malformed extras") {
    auto assign = std::vector<std::pair<std::string, std::string>>{
        {"q1", "care"}, {"q2", "care"}, {"q3", "care"},
        {"q4", "trust"}, {"q5", "trust"}, {"q6", "trust"}};
    CHECK_THROWS_AS(build_bifactor_spec(six_items(), assign, {{"zz", "care"}}),
                    UserError);
    CHECK_THROWS_AS(build_bifactor_spec(six_items(), assign, {{"q1", "zz"}}),
                    UserError);
    CHECK_THROWS_AS(build_bifactor_spec(six_items(), assign, {{"q1", "care"}}),
                    UserError);
  }
}

TEST_CASE("higher-order model specification") {
  auto base = two_group_spec();
  SECTION("tree accepted, singleton apex flagged") {
    auto spec = build_higher_order_spec(
        base, {{"care", "wellbeing"}, {"trust", "wellbeing"}});
    CHECK(spec.variant == CfaVariant::higher_order);
    CHECK(spec.second_ids == std::vector<std::string>{"wellbeing"});
    CHECK(spec.second_of == std::vector<int>{0, 0});
    CHECK(spec.singleton_second_warning);
  }
  SECTION("two apex factors carry no warning") {
    auto spec =
        build_higher_order_spec(base, {{"care", "sa"}, {"trust", "sb"}});
    CHECK_FALSE(spec.singleton_second_warning);
    CHECK(spec.second_ids.size() == 2);
  }
  SECTION("rejects broken hierarchies") {
    CHECK_THROWS_AS(build_higher_order_spec(base, {{"care", "trust"},
                                                   {"trust", "top"}}),
                    UserError);  // trust on both layers
    CHECK_THROWS_AS(build_higher_order_spec(base, {{"zz", "top"},
                                                   {"trust", "top"}}),
                    UserError);
    CHECK_THROWS_AS(build_higher_order_spec(base, {{"care", "top"},
                                                   {"care", "top2"},
                                                   {"trust", "top"}}),
                    UserError);
    CHECK_THROWS_AS(build_higher_order_spec(base, {{"care", "top"}}),
                    UserError);  // trust unmapped
  }
  SECTION("requires a bifactor base") {
    auto hi = build_higher_order_spec(
        base, {{"care", "wellbeing"}, {"trust", "wellbeing"}});
    CHECK_THROWS_AS(build_higher_order_spec(hi, {{"care", "x"}}), UserError);
  }
}

TEST_CASE("model spec text format") {
  const std::string text =
      "# layout\n"
      "group care q1 q2 q3   # inline note\n"
      "group trust q4 q5 q6\n"
      "extra q1 trust\n";
  auto spec = parse_model_spec(text, six_items());
  CHECK(spec.n_groups() == 2);
  CHECK(spec.extra.size() == 1);
  CHECK(spec.variant == CfaVariant::bifactor);

  auto hi = parse_model_spec(text + "hierarchy care top\nhierarchy trust top\n",
                             six_items());
  CHECK(hi.variant == CfaVariant::higher_order);
  CHECK(hi.singleton_second_warning);

  CHECK_THROWS_AS(parse_model_spec("group care q1\nbogus x\n", six_items()),
                  UserError);
  CHECK_THROWS_AS(parse_model_spec("group care\n", six_items()), UserError);
  CHECK_THROWS_AS(parse_model_spec("extra q1\n", six_items()), UserError);
}

TEST_CASE("first-order correlations implied by the hierarchy") {
  ModelSpec spec;
  spec.group_ids = {"a", "b", "c", "d"};
  spec.second_ids = {"s0", "s1"};
  spec.second_of = {0, 0, 1, 1};
  Eigen::VectorXd gamma(4), delta(2);
  gamma << 0.8, 0.7, 0.6, 0.9;
  delta << 0.5, 0.4;
  const Eigen::MatrixXd phi = first_order_phi(spec, gamma, delta);
  CHECK(phi(0, 0) == 1.0);
  CHECK(phi(0, 1) == 0.8 * 0.7);                    // same apex
  CHECK(phi(0, 2) == 0.8 * 0.6 * (0.5 * 0.4));      // across apexes
  CHECK(phi(2, 3) == 0.6 * 0.9);
  CHECK(phi == phi.transpose().eval());
}

TEST_CASE("analytic gradient matches central differences") {
  rng::Stream st(314159u);
  auto fd_check = [&](const ModelSpec& spec, int n_free) {
    const int p = spec.n_items();
    const std::size_t n_pairs = static_cast<std::size_t>(p) * (p - 1) / 2;
    // a fixed, not-special target so residuals are nonzero
    Eigen::MatrixXd target = two_group_population(0.6, 0.4);
    std::vector<double> w(n_pairs);
    for (auto& v : w) v = 0.5 + st.next_uniform();
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::VectorXd th(n_free);
      for (int k = 0; k < n_free; ++k) th[k] = 0.2 + 0.6 * st.next_uniform();
      Eigen::VectorXd grad;
      detail::dwls_objective(spec, target, w, th, &grad);
      for (int k = 0; k < n_free; ++k) {
        const double h = 1e-6;
        Eigen::VectorXd lo = th, hiv = th;
        lo[k] -= h;
        hiv[k] += h;
        const double fd = (detail::dwls_objective(spec, target, w, hiv) -
                           detail::dwls_objective(spec, target, w, lo)) /
                          (2.0 * h);
        CHECK(rel_err(grad[k], fd) < 1e-5);
      }
    }
  };

  SECTION("bifactor with an extra loading") {
    auto spec = build_bifactor_spec(six_items(),
                                    {{"q1", "care"},
                                     {"q2", "care"},
                                     {"q3", "care"},
                                     {"q4", "trust"},
                                     {"q5", "trust"},
                                     {"q6", "trust"}},
                                    {{"q2", "trust"}});
    fd_check(spec, 6 + 7);
  }
  SECTION("higher-order") {
    auto spec = build_higher_order_spec(
        two_group_spec(), {{"care", "sa"}, {"trust", "sb"}});
    fd_check(spec, 6 + 2 + 2);
  }
}

TEST_CASE("DWLS recovers a bifactor population exactly") {
  const auto spec = two_group_spec();
  const auto rho = wrap_rho(two_group_population(0.7, 0.5), six_items());

  SECTION("unit weights") {
    auto fit = fit_dwls(spec, rho, unit_weights(6), 1000);
    REQUIRE(fit.converged);
    CHECK(fit.f_min < 1e-10);
    CHECK(fit.df == 3.0);
    CHECK(fit.flagged.empty());
    for (int i = 0; i < 6; ++i)
      CHECK(fit.lambda_g[i] == Catch::Approx(0.7).margin(1e-4));
    for (int i = 0; i < 3; ++i) {
      CHECK(fit.lambda_s(i, 0) == Catch::Approx(0.5).margin(1e-4));
      CHECK(fit.lambda_s(i, 1) == 0.0);
    }
    CHECK(fit.n_obs == 1000);
    CHECK(fit.chi_square == Catch::Approx(999.0 * fit.f_min));
  }
  SECTION("bootstrap scaling: Var(s) = w/n reproduces the unit fit") {
    WeightSet boot;
    boot.method = WeightMethod::bootstrap;
    boot.variances.assign(15, 1.0 / 1000.0);
    boot.n_boot = 200;
    auto a = fit_dwls(spec, rho, unit_weights(6), 1000);
    auto b = fit_dwls(spec, rho, boot, 1000);
    CHECK(a.f_min == b.f_min);
    CHECK((a.lambda_g - b.lambda_g).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("an extra population loading is picked up by its slot") {
    auto spec_x = build_bifactor_spec(six_items(),
                                      {{"q1", "care"},
                                       {"q2", "care"},
                                       {"q3", "care"},
                                       {"q4", "trust"},
                                       {"q5", "trust"},
                                       {"q6", "trust"}},
                                      {{"q1", "trust"}});
    Eigen::VectorXd lg = Eigen::VectorXd::Constant(6, 0.7);
    Eigen::MatrixXd ls = Eigen::MatrixXd::Zero(6, 2);
    for (int i = 0; i < 3; ++i) ls(i, 0) = 0.5;
    for (int i = 3; i < 6; ++i) ls(i, 1) = 0.5;
    ls(0, 1) = 0.35;
    Eigen::MatrixXd sigma = lg * lg.transpose() + ls * ls.transpose();
    sigma.diagonal().setOnes();
    auto fit = fit_dwls(spec_x, wrap_rho(sigma, six_items()),
                        unit_weights(6), 1000);
    CHECK(fit.f_min < 1e-10);
    CHECK(fit.df == 2.0);
    // the slot participates and the fit is exact; individual loadings are
    // not asserted because a cross-loaded bifactor admits more than one
    // exact factorization of the same off-diagonal block
    CHECK(fit.lambda_s(0, 1) != 0.0);
    const Eigen::MatrixXd imp = implied_correlation(fit);
    CHECK((imp - sigma).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("DWLS recovers a higher-order population") {
  // six first-order factors of two items, three apex factors
  std::vector<std::string> items;
  std::vector<std::pair<std::string, std::string>> assign;
  for (int g = 0; g < 6; ++g)
    for (int k = 0; k < 2; ++k) {
      items.push_back("i" + std::to_string(g * 2 + k + 1));
      assign.emplace_back(items.back(), "f" + std::to_string(g + 1));
    }
  auto base = build_bifactor_spec(items, assign);
  auto spec = build_higher_order_spec(base, {{"f1", "s1"},
                                             {"f2", "s1"},
                                             {"f3", "s2"},
                                             {"f4", "s2"},
                                             {"f5", "s3"},
                                             {"f6", "s3"}});

  Eigen::VectorXd gamma(6), delta(3);
  gamma << 0.8, 0.7, 0.75, 0.65, 0.72, 0.68;
  delta << 0.6, 0.5, 0.55;
  Eigen::MatrixXd ls = Eigen::MatrixXd::Zero(12, 6);
  for (int g = 0; g < 6; ++g) {
    ls(2 * g, g) = 0.75;
    ls(2 * g + 1, g) = 0.65;
  }
  const Eigen::MatrixXd phi = first_order_phi(spec, gamma, delta);
  Eigen::MatrixXd sigma = ls * phi * ls.transpose();
  sigma.diagonal().setOnes();

  auto fit = fit_dwls(spec, wrap_rho(sigma, items), unit_weights(12), 800);
  REQUIRE(fit.converged);
  CHECK(fit.f_min < 1e-8);
  CHECK(fit.df == 66.0 - (12 + 6 + 3));
  for (int g = 0; g < 6; ++g) {
    CHECK(fit.lambda_s(2 * g, g) == Catch::Approx(0.75).margin(1e-3));
    CHECK(fit.gamma[g] == Catch::Approx(gamma[g]).margin(1e-3));
  }
  for (int a = 0; a < 3; ++a)
    CHECK(fit.delta[a] == Catch::Approx(delta[a]).margin(1e-3));
}

TEST_CASE("DWLS guard rails") {
  const auto rho = wrap_rho(two_group_population(0.7, 0.5), six_items());
  SECTION("weights must fit and be positive") {
    WeightSet bad;
    bad.variances.assign(14, 1.0);
    CHECK_THROWS_AS(fit_dwls(two_group_spec(), rho, bad, 1000), UserError);
    bad.variances.assign(15, 1.0);
    bad.variances[3] = 0.0;
    CHECK_THROWS_AS(fit_dwls(two_group_spec(), rho, bad, 1000), UserError);
  }
  SECTION("item-count mismatch") {
    auto small = wrap_rho(Eigen::MatrixXd::Identity(4, 4),
                          {"q1", "q2", "q3", "q4"});
    CHECK_THROWS_AS(fit_dwls(two_group_spec(), small, unit_weights(4), 1000),
                    UserError);
  }
  SECTION("null variant routed elsewhere") {
    ModelSpec null_spec = two_group_spec();
    null_spec.variant = CfaVariant::null_model;
    CHECK_THROWS_AS(fit_dwls(null_spec, rho, unit_weights(6), 1000), UserError);
  }
  SECTION("overparameterized model rejected") {
    auto spec = build_bifactor_spec({"a", "b", "c"},
                                    {{"a", "g1"}, {"b", "g1"}, {"c", "g1"}});
    auto tiny = wrap_rho(two_group_population(0.7, 0.5).topLeftCorner(3, 3),
                         {"a", "b", "c"});
    CHECK_THROWS_AS(fit_dwls(spec, tiny, unit_weights(3), 1000), UserError);
  }
}

TEST_CASE("independence baseline") {
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(3, 3);
  r(0, 1) = r(1, 0) = 0.3;
  r(0, 2) = r(2, 0) = 0.2;
  r(1, 2) = r(2, 1) = 0.1;
  auto fit = fit_null(wrap_rho(r, {"a", "b", "c"}), unit_weights(3), 101);
  CHECK(fit.f_min == Catch::Approx(0.09 + 0.04 + 0.01).margin(1e-15));
  CHECK(fit.chi_square == Catch::Approx(100.0 * 0.14).margin(1e-10));
  CHECK(fit.df == 3.0);
  CHECK(fit.spec.variant == CfaVariant::null_model);
  CHECK(fit.converged);
}

TEST_CASE("comparative fit indices") {
  CfaFit m, null_fit;
  m.n_obs = 401;
  null_fit.n_obs = 401;
  null_fit.chi_square = 150.0;
  null_fit.df = 15.0;

  SECTION("model at its degrees of freedom scores perfectly") {
    m.chi_square = 4.0;
    m.df = 4.0;
    auto ix = cfa_fit_indices(m, null_fit);
    CHECK(ix.cfi == 1.0);
    CHECK(ix.tli == 1.0);
    CHECK(ix.rmsea == 0.0);
  }
  SECTION("hand-computed mid-range values") {
    m.chi_square = 20.0;
    m.df = 10.0;
    m.n_obs = 101;
    auto ix = cfa_fit_indices(m, null_fit);
    CHECK(ix.cfi == Catch::Approx(1.0 - 10.0 / 135.0).margin(1e-12));
    CHECK(ix.tli == Catch::Approx((10.0 - 2.0) / 9.0).margin(1e-12));
    CHECK(ix.rmsea == Catch::Approx(0.1).margin(1e-12));
  }
  SECTION("degenerate null rejected") {
    null_fit.chi_square = 10.0;
    m.chi_square = 4.0;
    m.df = 4.0;
    CHECK_THROWS_AS(cfa_fit_indices(m, null_fit), NumericError);
  }
}

TEST_CASE("refinement gate thresholds are inclusive") {
  CfaIndices ix;
  ix.tli = 0.9;
  ix.cfi = 0.9;
  ix.rmsea = 0.08;
  CHECK(acceptance_predicate(ix, 0.70));
  CHECK_FALSE(acceptance_predicate(ix, 0.699999));
  ix.rmsea = 0.080001;
  CHECK_FALSE(acceptance_predicate(ix, 0.70));
  ix.rmsea = 0.08;
  ix.tli = 0.899999;
  CHECK_FALSE(acceptance_predicate(ix, 0.70));
}

TEST_CASE("variance-ratio reliabilities") {
  CfaFit fit;
  fit.spec = two_group_spec();
  fit.converged = true;
  fit.lambda_g = Eigen::VectorXd::Constant(6, 0.7);
  fit.lambda_s = Eigen::MatrixXd::Zero(6, 2);
  for (int i = 0; i < 3; ++i) fit.lambda_s(i, 0) = 0.5;
  for (int i = 3; i < 6; ++i) fit.lambda_s(i, 1) = 0.5;

  SECTION("hand-derived ratios") {
    auto om = omega(fit);
    // total = 4.2^2 + 2*1.5^2 + 6*0.26
    CHECK(om.omega_h == Catch::Approx(17.64 / 23.7).margin(1e-12));
    CHECK(om.omega_s[0] == Catch::Approx(2.25 / 7.44).margin(1e-12));
    CHECK(om.omega_s[1] == Catch::Approx(2.25 / 7.44).margin(1e-12));
    CHECK(om.ecv == Catch::Approx(2.94 / 4.44).margin(1e-12));
  }
  SECTION("agrees with the loading-matrix route to full precision") {
    Eigen::MatrixXd l(6, 3);
    l.col(0) = fit.lambda_g;
    l.col(1) = fit.lambda_s.col(0);
    l.col(2) = fit.lambda_s.col(1);
    auto ref = omega_from_loadings(l, fit.spec.group_of, 2);
    auto om = omega(fit);
    CHECK(std::fabs(om.omega_h - ref.omega_h) < 1e-10);
    CHECK(std::fabs(om.omega_s[0] - ref.omega_s[0]) < 1e-10);
    CHECK(std::fabs(om.omega_s[1] - ref.omega_s[1]) < 1e-10);
  }
  SECTION("no general factor, no general reliability") {
    fit.lambda_g.setZero();
    CHECK(omega(fit).omega_h == 0.0);
  }
  SECTION("refuses unsuitable fits") {
    fit.converged = false;
    CHECK_THROWS_AS(omega(fit), UserError);
    fit.converged = true;
    fit.spec.variant = CfaVariant::higher_order;
    CHECK_THROWS_AS(omega(fit), UserError);
  }
}

TEST_CASE("fitting sampled ordinal data") {
  TrueModel m;
  m.groups = {"care", "trust"};
  for (int i = 0; i < 6; ++i) {
    TrueItem it;
    it.id = "q" + std::to_string(i + 1);
    it.group = m.groups[i < 3 ? 0 : 1];
    it.lambda_g = 0.7;
    it.lambda_s = 0.5;
    it.taus = {-0.8, 0.0, 0.9};
    m.items.push_back(it);
  }
  auto sim = simulate_bifactor(m, 600, 99u);
  auto rho = polychoric_matrix(sim.responses.dense(), sim.responses.item_ids);
  auto fit = fit_dwls(two_group_spec(), rho, unit_weights(6), 600);
  REQUIRE(fit.converged);
  for (int i = 0; i < 6; ++i)
    CHECK(fit.lambda_g[i] == Catch::Approx(0.7).margin(0.12));
  auto ix = cfa_fit_indices(fit, fit_null(rho, unit_weights(6), 600));
  CHECK(ix.cfi > 0.95);
  CHECK(ix.rmsea < 0.08);
  auto om = omega(fit);
  CHECK(om.omega_h == Catch::Approx(17.64 / 23.7).margin(0.08));
}

TEST_CASE("model documents round trip") {
  const auto spec = build_bifactor_spec(six_items(),
                                        {{"q1", "care"},
                                         {"q2", "care"},
                                         {"q3", "care"},
                                         {"q4", "trust"},
                                         {"q5", "trust"},
                                         {"q6", "trust"}},
                                        {{"q3", "trust"}});
  const auto rho = wrap_rho(two_group_population(0.7, 0.5), six_items());
  auto fit = fit_dwls(spec, rho, unit_weights(6), 1000);

  SECTION("bifactor documents carry every field") {
    auto j = model_to_json(fit);
    CHECK(j.at("format") == "carebi-model");
    auto back = model_from_json(j);
    CHECK(back.spec.item_ids == fit.spec.item_ids);
    CHECK(back.spec.group_of == fit.spec.group_of);
    CHECK(back.spec.extra == fit.spec.extra);
    CHECK((back.lambda_g - fit.lambda_g).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.lambda_s - fit.lambda_s).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.n_obs == fit.n_obs);
    CHECK(back.f_min == fit.f_min);
    CHECK(back.converged);
    CHECK(back.thresholds.size() == 6);
    CHECK(back.thresholds[0].taus == fit.thresholds[0].taus);
    CHECK(back.adjustment == "naive");
  }
  SECTION("higher-order documents keep the hierarchy") {
    auto hi_spec = build_higher_order_spec(
        two_group_spec(), {{"care", "sa"}, {"trust", "sb"}});
    CfaFit hf;
    hf.spec = hi_spec;
    hf.lambda_g = Eigen::VectorXd::Zero(6);
    hf.lambda_s = Eigen::MatrixXd::Constant(6, 2, 0.1);
    hf.gamma = Eigen::VectorXd::Constant(2, 0.8);
    hf.delta = Eigen::VectorXd::Constant(2, 0.6);
    hf.converged = true;
    auto back = model_from_json(model_to_json(hf));
    CHECK(back.spec.variant == CfaVariant::higher_order);
    CHECK(back.spec.second_ids == hi_spec.second_ids);
    CHECK((back.gamma - hf.gamma).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.delta - hf.delta).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("foreign documents rejected") {
    auto j = model_to_json(fit);
    j["format"] = "something-else";
    CHECK_THROWS_AS(model_from_json(j), UserError);
    j = model_to_json(fit);
    j["format_version"] = 2;
    CHECK_THROWS_AS(model_from_json(j), UserError);
    j = model_to_json(fit);
    j["variant"] = "exotic";
    CHECK_THROWS_AS(model_from_json(j), UserError);
  }
}
