#include "strata/media.hpp"

#include <algorithm>
#include <sstream>

namespace strata {

StratifiedProfile StratifiedProfile::constant(double c) {
  StratifiedProfile p;
  p.c_plus = p.c_minus = c;
  p.y_M = 0.0;
  p.c_m = c;
  p.c_M = c;
  return p;
}

StratifiedProfile StratifiedProfile::make(double c_plus, double c_minus, double y_M,
                                          std::vector<Layer> layers) {
  if (c_plus <= 0 || c_minus <= 0) throw ConfigInvalid("speeds must be positive");
  if (c_minus < c_plus) throw ConfigInvalid("c_minus >= c_plus required");
  if (y_M < 0) throw ConfigInvalid("y_M must be nonnegative");
  StratifiedProfile p;
  p.c_plus = c_plus;
  p.c_minus = c_minus;
  p.y_M = y_M;
  std::sort(layers.begin(), layers.end(),
            [](const Layer& a, const Layer& b) { return a.y_lo < b.y_lo; });
  if (y_M > 0) {
    if (layers.empty()) throw ConfigInvalid("layers required when y_M > 0");
    if (std::abs(layers.front().y_lo + y_M) > 1e-12 ||
        std::abs(layers.back().y_hi - y_M) > 1e-12)
      throw ConfigInvalid("layers must partition [-y_M, y_M]");
    for (size_t i = 0; i + 1 < layers.size(); ++i)
      if (std::abs(layers[i].y_hi - layers[i + 1].y_lo) > 1e-12)
        throw ConfigInvalid("layer intervals must be contiguous");
  }
  p.layers = std::move(layers);

  p.c_m = std::min(c_plus, c_minus);
  p.c_M = std::max(c_plus, c_minus);
  for (const auto& L : p.layers) {
    int samples = L.is_constant() ? 1 : 64;
    for (int i = 0; i <= samples; ++i) {
      double y = L.y_lo + (L.y_hi - L.y_lo) * (samples ? double(i) / samples : 0.5);
      double c = L.speed(y);
      if (c <= 0) throw ConfigInvalid("speed must stay positive inside layers");
      p.c_m = std::min(p.c_m, c);
      p.c_M = std::max(p.c_M, c);
    }
  }
  return p;
}

bool StratifiedProfile::is_constant_profile() const {
  if (c_plus != c_minus) return false;
  for (const auto& L : layers) {
    if (!L.is_constant()) return false;
    if (!L.poly_coeffs.empty() && std::abs(L.poly_coeffs[0] - c_plus) > 0) return false;
  }
  return true;
}

double eval_c0(const StratifiedProfile& p, double y) {
  if (y > p.y_M) return p.c_plus;
  if (y < -p.y_M) return p.c_minus;
  for (const auto& L : p.layers) {
    if (y <= L.y_hi) return L.speed(y);
  }
  return p.layers.empty() ? p.c_plus : p.layers.back().speed(y);
}

double PerturbationExpansion::gamma(int order, Hemisphere h, double mu,
                                    double phi) const {
  double acc = 0.0;
  for (const auto& t : terms)
    if (t.order == order && t.hemisphere == h) acc += t.coeffs.eval(mu, phi);
  return acc;
}

double PerturbationExpansion::gamma(int order, const Vec3& dir) const {
  Vec3 u = dir.normalized();
  Hemisphere h = u.z >= 0 ? Hemisphere::Upper : Hemisphere::Lower;
  return gamma(order, h, u.z, std::atan2(u.y, u.x));
}

double PerturbationExpansion::gamma_dmu_at_equator(int order, Hemisphere h,
                                                   double phi, int k) const {
  double acc = 0.0;
  for (const auto& t : terms)
    if (t.order == order && t.hemisphere == h) acc += t.coeffs.eval_dmu(0.0, phi, k);
  return acc;
}

int PerturbationExpansion::max_order() const {
  int m = 0;
  for (const auto& t : terms) m = std::max(m, t.order);
  return m;
}

double PerturbationExpansion::sup_abs(int order) const {
  double m = 0.0;
  for (int i = 0; i < 48; ++i) {
    for (int j = 0; j < 24; ++j) {
      double mu = -0.999 + 1.998 * j / 23.0;
      double phi = 2.0 * kPi * i / 48.0;
      Hemisphere h = mu >= 0 ? Hemisphere::Upper : Hemisphere::Lower;
      m = std::max(m, std::abs(gamma(order, h, mu, phi)));
    }
  }
  return m;
}

HypothesisReport validate_hypotheses(const StratifiedProfile& profile,
                                     const PerturbationExpansion& pert,
                                     Hypothesis hyp) {
  HypothesisReport rep;
  if (profile.c_m <= 0) rep.violations.push_back("0 < c_m required");
  if (profile.c_minus < profile.c_plus)
    rep.violations.push_back("c_minus >= c_plus required");
  if (pert.leading_order < 2) rep.violations.push_back("J >= 2 required");
  if (pert.dimension < 2) rep.violations.push_back("n >= 2 required");
  for (const auto& t : pert.terms)
    if (t.order < pert.leading_order)
      rep.violations.push_back("term order below declared leading order J");
  if (hyp == Hypothesis::H1) {
    if (pert.leading_order != 2) rep.violations.push_back("H1: J = 2 required");
    if (profile.c_plus != profile.c_minus)
      rep.violations.push_back("H1: c_+ = c_- required");
    for (const auto& L : profile.layers)
      if (!L.is_constant() && L.poly_coeffs.size() < 2)
        rep.violations.push_back("H1: smooth c0 required");
  } else {
    if (pert.leading_order < 4) rep.violations.push_back("H2: J >= 4 required");
  }
  return rep;
}

namespace {

void check_expansion_point(const PerturbationExpansion& pert, const Vec3& z) {
  double r = z.norm();
  if (r < pert.r0) {
    std::ostringstream os;
    os << "|z| = " << r << " below expansion radius r0 = " << pert.r0;
    throw BelowExpansionRadius(os.str());
  }
  if (std::abs(std::asin(std::clamp(z.z / r, -1.0, 1.0))) < pert.delta_eq)
    throw EquatorialEvaluation("direction inside equatorial exclusion band");
}

}  // namespace

double eval_c(const StratifiedProfile& profile, const PerturbationExpansion& pert,
              const Vec3& z, int truncation_order) {
  // vertical coordinate is the third component
  double c = eval_c0(profile, z.z);
  if (pert.empty()) return c;
  check_expansion_point(pert, z);
  double r = z.norm();
  Vec3 u = z.normalized();
  Hemisphere h = u.z >= 0 ? Hemisphere::Upper : Hemisphere::Lower;
  double mu = u.z, phi = std::atan2(u.y, u.x);
  for (int j = pert.leading_order; j <= truncation_order; ++j) {
    double g = pert.gamma(j, h, mu, phi);
    if (g != 0.0) c += g * std::pow(r, -j);
  }
  return c;
}

double EffectivePotential::operator()(const Vec3& z) const {
  if (lambda == 0.0) return 0.0;
  double c0v = eval_c0(*profile, z.z);
  double cv = eval_c(*profile, *pert, z, truncation_order);
  return lambda * lambda * (1.0 / (cv * cv) - 1.0 / (c0v * c0v));
}

EffectivePotential make_potential(const StratifiedProfile& profile,
                                  const PerturbationExpansion& pert, double lambda,
                                  int truncation_order) {
  return EffectivePotential{&profile, &pert, lambda, truncation_order};
}

}  // namespace strata
