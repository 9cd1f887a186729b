#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "strata/media.hpp"
#include "strata/sph_harm.hpp"

using namespace strata;

TEST_CASE("real spherical harmonics are orthonormal") {
  // Gauss-Legendre in mu x uniform in phi integrates band-limited products exactly
  int L = 6, nmu = 24, nphi = 32;
  std::vector<double> mu, wmu;
  gauss_legendre(nmu, mu, wmu);
  auto ip = [&](int l1, int m1, int l2, int m2) {
    double s = 0.0;
    for (int i = 0; i < nmu; ++i)
      for (int j = 0; j < nphi; ++j) {
        double phi = 2.0 * kPi * j / nphi;
        s += wmu[i] * (2.0 * kPi / nphi) * real_sph_harm(l1, m1, mu[i], phi) *
             real_sph_harm(l2, m2, mu[i], phi);
      }
    return s;
  };
  for (int l1 = 0; l1 <= L; ++l1)
    for (int m1 = -l1; m1 <= l1; ++m1) {
      CHECK(ip(l1, m1, l1, m1) == doctest::Approx(1.0).epsilon(1e-10));
      CHECK(std::abs(ip(l1, m1, (l1 + 1) % (L + 1), 0)) < 1e-10);
    }
}

TEST_CASE("ShTable eval matches direct harmonic sum") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  ShTable t(5);
  for (auto& c : t.coeffs) c = U(rng);
  for (int trial = 0; trial < 20; ++trial) {
    double mu = U(rng) * 0.999, phi = kPi * U(rng);
    double direct = 0.0;
    for (int l = 0; l <= 5; ++l)
      for (int m = -l; m <= l; ++m) direct += t.at(l, m) * real_sph_harm(l, m, mu, phi);
    CHECK(t.eval(mu, phi) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("ShTable mu-derivative against analytic P_1, P_2") {
  ShTable t(2);
  t.at(1, 0) = 1.0;  // Y_10 = sqrt(3/4pi) mu
  double n10 = std::sqrt(3.0 / (4.0 * kPi));
  CHECK(t.eval_dmu(0.3, 1.0, 1) == doctest::Approx(n10).epsilon(1e-7));
  t.at(1, 0) = 0.0;
  t.at(2, 0) = 1.0;  // Y_20 = sqrt(5/16pi) (3 mu^2 - 1)
  double n20 = std::sqrt(5.0 / (16.0 * kPi));
  CHECK(t.eval_dmu(0.2, 0.0, 1) == doctest::Approx(n20 * 6.0 * 0.2).epsilon(1e-7));
  CHECK(t.eval_dmu(0.2, 0.0, 2) == doctest::Approx(n20 * 6.0).epsilon(1e-5));
}

static StratifiedProfile three_layer() {
  return StratifiedProfile::make(
      1.0, 1.5, 1.0,
      {{-1.0, -0.2, {1.4}}, {-0.2, 0.4, {1.2, 0.1, -0.05}}, {0.4, 1.0, {1.1}}});
}

TEST_CASE("background speed evaluation") {
  auto p = three_layer();
  CHECK(eval_c0(p, 5.0) == 1.0);
  CHECK(eval_c0(p, -5.0) == 1.5);
  CHECK(eval_c0(p, -0.5) == 1.4);
  CHECK(eval_c0(p, 0.0) == doctest::Approx(1.2));
  CHECK(eval_c0(p, 0.2) == doctest::Approx(1.2 + 0.1 * 0.2 - 0.05 * 0.04));
  CHECK(eval_c0(p, 0.7) == 1.1);
  CHECK(p.c_m <= 1.0);
  CHECK(p.c_M >= 1.5);
  CHECK(p.critical_omega_n() == doctest::Approx(std::sqrt(1.0 - 1.0 / 2.25)));
}

TEST_CASE("profile validation rejects bad input") {
  CHECK_THROWS_AS(StratifiedProfile::make(1.0, 0.5, 0.0, {}), ConfigInvalid);
  CHECK_THROWS_AS(StratifiedProfile::make(1.0, 1.5, 1.0, {{-1.0, 0.0, {1.0}}}),
                  ConfigInvalid);
  CHECK_THROWS_AS(
      StratifiedProfile::make(1.0, 1.5, 1.0,
                              {{-1.0, 0.0, {1.0}}, {0.1, 1.0, {1.0}}}),
      ConfigInvalid);
  CHECK_THROWS_AS(StratifiedProfile::make(1.0, 1.5, 1.0, {{-1.0, 1.0, {-2.0}}}),
                  ConfigInvalid);
}

static PerturbationExpansion simple_pert(int J) {
  PerturbationExpansion pert;
  pert.leading_order = J;
  pert.dimension = 3;
  pert.r0 = 10.0;
  AngularTerm t;
  t.order = J;
  t.hemisphere = Hemisphere::Upper;
  t.coeffs = ShTable(2);
  t.coeffs.at(0, 0) = 0.5;
  t.coeffs.at(2, 1) = 0.25;
  pert.terms.push_back(t);
  t.hemisphere = Hemisphere::Lower;
  pert.terms.push_back(t);
  return pert;
}

TEST_CASE("hypothesis validation") {
  auto p = three_layer();
  auto pert = simple_pert(4);
  CHECK(validate_hypotheses(p, pert, Hypothesis::H2).admissible());
  CHECK_FALSE(validate_hypotheses(p, pert, Hypothesis::H1).admissible());

  auto p1 = StratifiedProfile::make(1.0, 1.0, 1.0, {{-1.0, 1.0, {1.2, 0.0, -0.1}}});
  auto pert1 = simple_pert(2);
  CHECK(validate_hypotheses(p1, pert1, Hypothesis::H1).admissible());
  CHECK_FALSE(validate_hypotheses(p1, pert1, Hypothesis::H2).admissible());

  auto bad = simple_pert(3);
  bad.leading_order = 4;  // declared J above a stored term order
  CHECK_FALSE(validate_hypotheses(p, bad, Hypothesis::H2).admissible());
}

TEST_CASE("perturbed speed evaluation and guards") {
  auto p = three_layer();
  auto pert = simple_pert(4);
  Vec3 z{30.0, 5.0, 25.0};
  double r = z.norm();
  Vec3 u = z.normalized();
  double expect = eval_c0(p, z.z) +
                  pert.gamma(4, u) * std::pow(r, -4.0);
  CHECK(eval_c(p, pert, z, 6) == doctest::Approx(expect).epsilon(1e-13));

  CHECK_THROWS_AS(eval_c(p, pert, Vec3{1.0, 0.0, 3.0}, 6), BelowExpansionRadius);
  CHECK_THROWS_AS(eval_c(p, pert, Vec3{100.0, 0.0, 0.1}, 6), EquatorialEvaluation);
}

TEST_CASE("effective potential matches finite difference of speeds") {
  auto p = three_layer();
  auto pert = simple_pert(4);
  double lambda = 2.0;
  auto V = make_potential(p, pert, lambda, 4);
  Vec3 z{40.0, -10.0, 30.0};
  double c0v = eval_c0(p, z.z), cv = eval_c(p, pert, z, 4);
  CHECK(V(z) == doctest::Approx(lambda * lambda * (1 / (cv * cv) - 1 / (c0v * c0v)))
                    .epsilon(1e-13));
  // far away the potential decays like r^{-J}
  Vec3 z2 = z * 10.0;
  CHECK(std::abs(V(z2)) < std::abs(V(z)) * 2e-4 + 1e-18);
}
