#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "strata/geometry.hpp"

using namespace strata;

static Vec3 random_dir(std::mt19937& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  Vec3 v{N(rng), N(rng), N(rng)};
  while (v.norm() < 1e-3) v = {N(rng), N(rng), N(rng)};
  return v.normalized();
}

TEST_CASE("geodesics are unit speed great circles") {
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Vec3 w = random_dir(rng);
    auto fr = geodesic_frame(w);
    CHECK(std::abs(fr.e1.dot(fr.e2)) < 1e-13);
    CHECK(std::abs(fr.e1.dot(fr.omega)) < 1e-13);
    CHECK(fr.e1.norm() == doctest::Approx(1.0));
    double th = 2 * kPi * U(rng), s = kPi * U(rng);
    Vec3 p = geodesic_point(fr, th, s);
    CHECK(p.norm() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK((geodesic_point(fr, th, 0.0) - w).norm() < 1e-13);
    // finite-difference tangent agrees with the analytic one
    double h = 1e-6;
    Vec3 fd = (geodesic_point(fr, th, s + h) - geodesic_point(fr, th, s - h)) *
              (0.5 / h);
    CHECK((fd - geodesic_tangent(fr, th, s)).norm() < 1e-9);
    CHECK(geodesic_tangent(fr, th, s).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("equator crossing against a bisection oracle") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  int done = 0;
  while (done < 300) {
    Vec3 w = random_dir(rng);
    auto fr = geodesic_frame(w);
    double th = 2 * kPi * U(rng);
    Vec3 t = fr.e1 * std::cos(th) + fr.e2 * std::sin(th);
    if (std::hypot(w.z, t.z) < 1e-3) continue;
    auto z_of = [&](double s) { return w.z * std::cos(s) + t.z * std::sin(s); };
    // oracle: scan for the first sign change on (0, pi), then bisect
    double prev = z_of(1e-9), s_found = -1;
    int N = 20000;
    for (int i = 1; i <= N; ++i) {
      double s = kPi * double(i) / N;
      double zc = z_of(s);
      if (prev * zc <= 0 && s_found < 0) {
        double a = kPi * double(i - 1) / N, b = s;
        for (int it = 0; it < 100; ++it) {
          double m = 0.5 * (a + b);
          if (z_of(a) * z_of(m) <= 0) {
            b = m;
          } else {
            a = m;
          }
        }
        s_found = 0.5 * (a + b);
      }
      prev = zc;
    }
    if (s_found < 1e-6 || s_found > kPi - 1e-6) continue;
    auto ec = equator_crossing(w, t);
    CHECK(std::abs(ec.s0 - s_found) < 1e-9);
    CHECK(std::abs(ec.point.z) < 1e-12);
    CHECK(ec.point.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(ec.psi - std::atan2(ec.point.y, ec.point.x)) < 1e-14);
    ++done;
  }
  Vec3 eq{1, 0, 0}, teq{0, 1, 0};
  CHECK_THROWS_AS(equator_crossing(eq, teq), NoCrossing);
}

TEST_CASE("endpoint maps satisfy the algebraic identities") {
  std::mt19937 rng(17);
  double c_plus = 1.0, c_minus = 1.4;
  double wc = std::sqrt(1.0 - c_plus * c_plus / (c_minus * c_minus));
  Numerics num;
  int done = 0;
  while (done < 1000) {
    Vec3 w = random_dir(rng);
    if (std::abs(w.z) < 2 * num.delta_crit) continue;

    Vec3 r = map_reflect(w);
    CHECK(r.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((map_reflect(r) - w).norm() < 1e-12);
    CHECK(r.z == w.z);

    if (w.z > 0 && w.z > wc + 2 * num.delta_crit) {
      Vec3 tr = map_transmit(w, c_plus, c_minus);
      CHECK(tr.norm() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(tr.z < 0);
      // horizontal slowness is preserved across the interface
      double s_in = std::hypot(w.x, w.y) / c_plus;
      double s_out = std::hypot(tr.x, tr.y) / c_minus;
      CHECK(s_in == doctest::Approx(s_out).epsilon(1e-12));
      // transmitting back recovers the incident direction
      Vec3 back = map_transmit(tr, c_plus, c_minus);
      CHECK((back - w).norm() < 1e-12);
    }
    if (w.z < 0) {
      Vec3 tr = map_transmit(w, c_plus, c_minus);
      CHECK(tr.norm() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(tr.z > 0);
      double s_in = std::hypot(w.x, w.y) / c_minus;
      double s_out = std::hypot(tr.x, tr.y) / c_plus;
      CHECK(s_in == doctest::Approx(s_out).epsilon(1e-12));
    }
    ++done;
  }
}

TEST_CASE("map guards") {
  double c_plus = 1.0, c_minus = 1.5;
  double wc = std::sqrt(1.0 - c_plus * c_plus / (c_minus * c_minus));
  Vec3 nearly_eq = Vec3{1.0, 0.2, 1e-5}.normalized();
  CHECK_THROWS_AS(map_reflect(nearly_eq), EquatorialInput);
  CHECK_THROWS_AS(map_transmit(nearly_eq, c_plus, c_minus), EquatorialInput);
  double wn = 0.5 * wc;  // below critical
  double hb = std::sqrt(1 - wn * wn);
  CHECK_THROWS_AS(map_transmit(Vec3{hb, 0, wn}, c_plus, c_minus),
                  TotalInternalReflection);
  double hbc = std::sqrt(1 - wc * wc);
  CHECK_THROWS_AS(map_transmit(Vec3{hbc, 0, wc}, c_plus, c_minus), CriticalAngle);
}

TEST_CASE("even folding") {
  Vec3 d{0.3, -0.4, -0.5};
  Vec3 f = fold_even_extension(d);
  CHECK(f.z == 0.5);
  CHECK(f.x == d.x);
  CHECK((fold_even_extension(f) - f).norm() == 0.0);
}
