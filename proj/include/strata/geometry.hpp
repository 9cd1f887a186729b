#pragma once

#include "strata/media.hpp"
#include "strata/types.hpp"

namespace strata {

// ---------------------------------------------------------------------------
// Great-circle geometry on S^2. The vertical axis is z; the "equator" is the
// intersection with the interface plane. Directions are written
// omega = (omega_bar, omega_n) with omega_n the z component.
// ---------------------------------------------------------------------------

struct GeodesicFrame {
  Vec3 omega;   // unit
  Vec3 e1, e2;  // orthonormal tangent basis at omega; e2 points toward +z
};

GeodesicFrame geodesic_frame(const Vec3& omega);

// Unit-speed geodesic from omega with initial tangent
// t = cos(theta_t) e1 + sin(theta_t) e2.
Vec3 geodesic_point(const GeodesicFrame& fr, double theta_t, double s);
Vec3 geodesic_tangent(const GeodesicFrame& fr, double theta_t, double s);

struct EquatorCrossing {
  double s0 = 0;  // arclength in (0, pi) at which z = 0
  Vec3 point;     // crossing point on the equator
  Vec3 tangent;   // unit tangent of the geodesic there
  double psi = 0; // equatorial azimuth atan2(point.y, point.x)
};

// First zero of the z component of cos(s) omega + sin(s) t on (0, pi).
// t must be a unit tangent at omega. Throws NoCrossing when the geodesic lies
// in the equatorial plane.
EquatorCrossing equator_crossing(const Vec3& omega, const Vec3& t);

// ---------------------------------------------------------------------------
// Endpoint maps of the broken flow. Inputs are unit directions off the
// equator; guards use the shared exclusion bands.
// ---------------------------------------------------------------------------

// (omega_bar, omega_n) -> (-omega_bar, omega_n)
Vec3 map_reflect(const Vec3& omega, const Numerics& num = {});

// Up incidence (omega_n > 0, above the critical value):
//   (omega_bar, omega_n) -> (-c_minus omega_bar / c_plus,
//                            -sqrt(1 - c_minus^2 |omega_bar|^2 / c_plus^2))
// Down incidence (omega_n < 0):
//   (omega_bar, omega_n) -> (-c_plus omega_bar / c_minus,
//                            +sqrt(1 - c_plus^2 |omega_bar|^2 / c_minus^2))
Vec3 map_transmit(const Vec3& omega, double c_plus, double c_minus,
                  const Numerics& num = {});

// Fold a direction to the closed upper hemisphere: (phi_bar, phi_n) with
// phi_n < 0 goes to (phi_bar, -phi_n).
Vec3 fold_even_extension(const Vec3& dir);

}  // namespace strata
