#include "strata/geometry.hpp"

namespace strata {

GeodesicFrame geodesic_frame(const Vec3& omega) {
  GeodesicFrame fr;
  fr.omega = omega.normalized();
  Vec3 ez{0, 0, 1};
  Vec3 e2 = ez - fr.omega * ez.dot(fr.omega);
  if (e2.norm() < 1e-12) {
    // omega at a pole: any tangent basis works
    Vec3 ex{1, 0, 0};
    e2 = ex - fr.omega * ex.dot(fr.omega);
  }
  fr.e2 = e2.normalized();
  fr.e1 = fr.e2.cross(fr.omega);
  return fr;
}

Vec3 geodesic_point(const GeodesicFrame& fr, double theta_t, double s) {
  Vec3 t = fr.e1 * std::cos(theta_t) + fr.e2 * std::sin(theta_t);
  return fr.omega * std::cos(s) + t * std::sin(s);
}

Vec3 geodesic_tangent(const GeodesicFrame& fr, double theta_t, double s) {
  Vec3 t = fr.e1 * std::cos(theta_t) + fr.e2 * std::sin(theta_t);
  return t * std::cos(s) - fr.omega * std::sin(s);
}

EquatorCrossing equator_crossing(const Vec3& omega, const Vec3& t) {
  double A = omega.z, B = t.z;
  double R = std::hypot(A, B);
  if (R < 1e-13) throw NoCrossing("geodesic lies in the equatorial plane");
  // z(s) = R cos(s - delta); zeros at delta +/- pi/2 modulo pi
  double delta = std::atan2(B, A);
  double s0 = delta + 0.5 * kPi;
  while (s0 <= 0) s0 += kPi;
  while (s0 >= kPi) s0 -= kPi;
  if (s0 <= 0 || s0 >= kPi)
    throw NoCrossing("crossing degenerates to an endpoint");
  EquatorCrossing ec;
  ec.s0 = s0;
  ec.point = omega * std::cos(s0) + t * std::sin(s0);
  ec.tangent = t * std::cos(s0) - omega * std::sin(s0);
  ec.psi = std::atan2(ec.point.y, ec.point.x);
  return ec;
}

Vec3 map_reflect(const Vec3& omega, const Numerics& num) {
  if (std::abs(omega.z) < num.delta_crit)
    throw EquatorialInput("direction too close to the equator");
  return {-omega.x, -omega.y, omega.z};
}

Vec3 map_transmit(const Vec3& omega, double c_plus, double c_minus,
                  const Numerics& num) {
  double wn = omega.z;
  if (std::abs(wn) < num.delta_crit)
    throw EquatorialInput("direction too close to the equator");
  double wc2 = 1.0 - (c_plus * c_plus) / (c_minus * c_minus);
  if (wn > 0) {
    double wc = wc2 > 0 ? std::sqrt(wc2) : 0.0;
    if (wc > 0 && std::abs(wn - wc) < num.delta_crit)
      throw CriticalAngle("incidence inside the critical exclusion band");
    if (wn < wc)
      throw TotalInternalReflection("no transmitted direction below the critical angle");
    double r = c_minus / c_plus;
    double hb2 = r * r * (omega.x * omega.x + omega.y * omega.y);
    return {-r * omega.x, -r * omega.y, -std::sqrt(std::max(0.0, 1.0 - hb2))};
  }
  double r = c_plus / c_minus;
  double hb2 = r * r * (omega.x * omega.x + omega.y * omega.y);
  return {-r * omega.x, -r * omega.y, std::sqrt(std::max(0.0, 1.0 - hb2))};
}

Vec3 fold_even_extension(const Vec3& dir) {
  return dir.z >= 0 ? dir : Vec3{dir.x, dir.y, -dir.z};
}

}  // namespace strata
