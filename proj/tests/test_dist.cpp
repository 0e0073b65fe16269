#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "carebi/dist.hpp"

using namespace carebi;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

// Reference values computed once by direct 2-D quadrature of the bivariate
// normal density (scipy.integrate.dblquad, epsabs 1e-12, domain truncated
// at -8.5 where the omitted mass is < 1e-17).
TEST_CASE("bivariate normal CDF matches quadrature oracle") {
  struct Case {
    double h, k, r, want;
  };
  const Case cases[] = {
      {0.0, 0.0, 0.5, 0.333333333333333},
      {0.0, 0.0, -0.5, 0.166666666666667},
      {1.0, -1.0, 0.3, 0.148338209057422},
      {2.0, 2.0, 0.8, 0.964324838713738},
      {-1.5, 0.5, -0.7, 0.0086680837385635},
      {0.3, -0.2, 0.95, 0.417650619159027},
      {1.2, 0.7, -0.95, 0.642966677573564},
      {2.5, -2.5, 0.99, 0.00620966532577618},
      {0.5, 0.5, 0.999, 0.685180786233191},
      {-0.5, 1.5, -0.999, 0.241730337457127},
      {3.0, 3.0, 0.6, 0.9974398592112},
      {-3.0, 1.0, 0.45, 0.00134591683653627},
      {0.0, 1.0, 0.0, 0.420672373034272},
      {0.9, -1.3, 0.62, 0.0961107576708288},
      {-2.0, -2.0, 0.93, 0.0148331305174832},
  };
  for (const auto& c : cases) {
    CAPTURE(c.h, c.k, c.r);
    CHECK(dist::bvn_cdf(c.h, c.k, c.r) == Catch::Approx(c.want).margin(1e-7));
  }
}

TEST_CASE("bivariate normal CDF structural properties") {
  const double hs[] = {-2.0, -0.5, 0.0, 0.7, 1.8};
  const double rs[] = {-0.97, -0.6, -0.2, 0.0, 0.35, 0.8, 0.97};
  for (double h : hs)
    for (double k : hs) {
      // independence factorization
      CHECK(dist::bvn_cdf(h, k, 0.0) ==
            Catch::Approx(dist::norm_cdf(h) * dist::norm_cdf(k)).margin(1e-12));
      for (double r : rs) {
        const double v = dist::bvn_cdf(h, k, r);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        // argument symmetry
        CHECK(v == Catch::Approx(dist::bvn_cdf(k, h, r)).margin(1e-12));
        // marginalization at +inf
        CHECK(dist::bvn_cdf(h, kInf, r) ==
              Catch::Approx(dist::norm_cdf(h)).margin(1e-12));
      }
      // perfect dependence limits
      CHECK(dist::bvn_cdf(h, k, 1.0) ==
            Catch::Approx(dist::norm_cdf(std::min(h, k))).margin(1e-6));
      CHECK(dist::bvn_cdf(h, k, -1.0) ==
            Catch::Approx(std::max(0.0, dist::norm_cdf(h) + dist::norm_cdf(k) - 1.0))
                .margin(1e-6));
    }
}

TEST_CASE("bivariate normal CDF is nondecreasing in the correlation") {
  for (double h : {-1.0, 0.2, 1.4})
    for (double k : {-0.8, 0.5}) {
      double prev = dist::bvn_cdf(h, k, -0.995);
      for (double r = -0.9; r <= 0.995; r += 0.05) {
        const double cur = dist::bvn_cdf(h, k, r);
        CHECK(cur >= prev - 1e-9);
        prev = cur;
      }
    }
}

// AS 241 against scipy.stats.norm.ppf reference values.
TEST_CASE("normal quantile matches reference values") {
  struct Case {
    double p, want;
  };
  const Case cases[] = {
      {1e-12, -7.034483825301131},
      {1e-08, -5.612001244174789},
      {0.001, -3.090232306167813},
      {0.025, -1.959963984540054},
      {0.25, -0.6744897501960817},
      {0.5, 0.0},
      {0.75, 0.6744897501960817},
      {0.975, 1.959963984540054},
      {0.999, 3.090232306167813},
      {0.99999999, 5.612001243305505},
      {0.999999999999, 7.034486910047836},
  };
  for (const auto& c : cases) {
    CAPTURE(c.p);
    CHECK(dist::norm_quantile(c.p) == Catch::Approx(c.want).margin(1e-9));
  }
}

TEST_CASE("normal quantile and CDF are inverse") {
  for (double u = 0.001; u < 1.0; u += 0.001)
    CHECK(dist::norm_cdf(dist::norm_quantile(u)) == Catch::Approx(u).margin(1e-12));
  CHECK(dist::norm_quantile(0.0) == -kInf);
  CHECK(dist::norm_quantile(1.0) == kInf);
  CHECK_THROWS(dist::norm_quantile(-0.1));
  CHECK_THROWS(dist::norm_quantile(1.1));
}

TEST_CASE("normal quantile is antisymmetric") {
  for (double u = 0.0005; u < 0.5; u += 0.001)
    CHECK(dist::norm_quantile(u) ==
          Catch::Approx(-dist::norm_quantile(1.0 - u)).margin(1e-9));
}
