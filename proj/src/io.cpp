#include "strata/io.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "strata/geometry.hpp"
#include "strata/parametrix.hpp"
#include "strata/spectral1d.hpp"

namespace strata {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Vec3 parse_vec(const std::string& s) {
  Vec3 v;
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &v.x, &v.y, &v.z) != 3)
    throw ConfigInvalid("direction must be \"x,y,z\": " + s);
  double n = v.norm();
  if (n == 0.0) throw ConfigInvalid("zero direction");
  return v.normalized();
}

std::pair<int, int> parse_order_range(const std::string& s) {
  int lo = 0, hi = 0;
  if (std::sscanf(s.c_str(), "%d..%d", &lo, &hi) == 2) return {lo, hi};
  if (std::sscanf(s.c_str(), "%d", &lo) == 1) return {lo, lo};
  throw ConfigInvalid("order range must be \"J..L\" or \"J\": " + s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

Json profile_to_json(const StratifiedProfile& p) {
  Json layers = Json::array();
  for (const Layer& l : p.layers)
    layers.push_back(
        {{"y_lo", l.y_lo}, {"y_hi", l.y_hi}, {"coeffs", l.poly_coeffs}});
  return {{"c_plus", p.c_plus},
          {"c_minus", p.c_minus},
          {"y_M", p.y_M},
          {"layers", layers}};
}

StratifiedProfile profile_from_json(const Json& j) {
  std::vector<Layer> layers;
  for (const Json& l : j.value("layers", Json::array()))
    layers.push_back({l.at("y_lo").get<double>(), l.at("y_hi").get<double>(),
                      l.at("coeffs").get<std::vector<double>>()});
  return StratifiedProfile::make(j.at("c_plus").get<double>(),
                                 j.at("c_minus").get<double>(),
                                 j.value("y_M", 0.0), std::move(layers));
}

Json table_to_json(const ShTable& t) {
  return {{"band_limit", t.band_limit}, {"coeffs", t.coeffs}};
}

ShTable table_from_json(const Json& j) {
  ShTable t(j.at("band_limit").get<int>());
  auto c = j.at("coeffs").get<std::vector<double>>();
  if (c.size() != t.coeffs.size())
    throw ConfigInvalid("coefficient count does not match the band limit");
  t.coeffs = std::move(c);
  return t;
}

Json pert_to_json(const PerturbationExpansion& p) {
  Json terms = Json::array();
  for (const AngularTerm& t : p.terms)
    terms.push_back(
        {{"order", t.order},
         {"hemisphere", t.hemisphere == Hemisphere::Upper ? "upper" : "lower"},
         {"table", table_to_json(t.coeffs)}});
  return {{"leading_order", p.leading_order},
          {"dimension", p.dimension},
          {"r0", p.r0},
          {"delta_eq", p.delta_eq},
          {"terms", terms}};
}

PerturbationExpansion pert_from_json(const Json& j) {
  PerturbationExpansion p;
  p.leading_order = j.at("leading_order").get<int>();
  p.dimension = j.value("dimension", 3);
  p.r0 = j.value("r0", 0.0);
  p.delta_eq = j.value("delta_eq", 0.05);
  for (const Json& t : j.value("terms", Json::array())) {
    std::string h = t.at("hemisphere").get<std::string>();
    if (h != "upper" && h != "lower")
      throw ConfigInvalid("hemisphere must be upper or lower");
    p.terms.push_back({t.at("order").get<int>(),
                       h == "upper" ? Hemisphere::Upper : Hemisphere::Lower,
                       table_from_json(t.at("table"))});
  }
  return p;
}

Json numerics_to_json(const Numerics& n) {
  return {{"delta_eq", n.delta_eq},   {"delta_crit", n.delta_crit},
          {"delta_ant", n.delta_ant}, {"n_s", n.n_s},
          {"n_psi", n.n_psi},         {"n_y", n.n_y},
          {"order_cap", n.order_cap}, {"eig_tol_rel", n.eig_tol_rel}};
}

Numerics numerics_from_json(const Json& j) {
  Numerics d;
  Numerics n;
  n.delta_eq = j.value("delta_eq", d.delta_eq);
  n.delta_crit = j.value("delta_crit", d.delta_crit);
  n.delta_ant = j.value("delta_ant", d.delta_ant);
  n.n_s = j.value("n_s", d.n_s);
  n.n_psi = j.value("n_psi", d.n_psi);
  n.n_y = j.value("n_y", d.n_y);
  n.order_cap = j.value("order_cap", d.order_cap);
  n.eig_tol_rel = j.value("eig_tol_rel", d.eig_tol_rel);
  if (n.delta_eq <= 0 || n.delta_eq >= 0.5 || n.delta_crit <= 0 ||
      n.delta_crit >= 0.5)
    throw ConfigInvalid("delta bands must lie in (0, 0.5)");
  if (n.n_s < 8 || n.n_psi < 8 || n.n_y < 16)
    throw ConfigInvalid("grid node counts too small");
  return n;
}

RunConfig config_from_json(const Json& j) {
  RunConfig c;
  if (j.contains("profile")) c.profile = profile_from_json(j.at("profile"));
  if (j.contains("perturbation"))
    c.pert = pert_from_json(j.at("perturbation"));
  c.lambda = j.value("lambda", c.lambda);
  if (c.lambda <= 0) throw ConfigInvalid("lambda must be positive");
  std::string hyp = j.value("hypothesis", std::string("H2"));
  if (hyp != "H1" && hyp != "H2")
    throw ConfigInvalid("hypothesis must be H1 or H2");
  c.hypothesis = hyp == "H1" ? Hypothesis::H1 : Hypothesis::H2;
  if (j.contains("numerics")) c.num = numerics_from_json(j.at("numerics"));
  c.kappa = j.value("kappa", c.kappa);
  c.omega_n = j.value("omega_n", c.omega_n);
  c.sweep_samples = j.value("sweep_samples", c.sweep_samples);
  if (c.sweep_samples < 2) throw ConfigInvalid("sweep needs at least 2 samples");
  c.omega = j.value("omega", c.omega);
  c.truncation = j.value("truncation", c.truncation);
  c.n_mu = j.value("n_mu", c.n_mu);
  c.n_phi = j.value("n_phi", c.n_phi);
  c.n_anchor = j.value("n_anchor", c.n_anchor);
  c.band_limit = j.value("band_limit", c.band_limit);
  c.mode = j.value("mode", c.mode);
  if (c.mode != "transmitted" && c.mode != "reflected")
    throw ConfigInvalid("mode must be transmitted or reflected");
  c.orders = j.value("orders", c.orders);
  c.symbols_path = j.value("symbols", c.symbols_path);
  c.reflection_path = j.value("reflection", c.reflection_path);
  for (const Json& b : j.value("bound", Json::array()))
    c.bound.push_back(
        {b.at("kappa").get<double>(), b.at("norming").get<double>()});
  c.y_max_1d = j.value("y_max_1d", c.y_max_1d);
  c.nystrom = j.value("nystrom", c.nystrom);
  c.out_dir = j.value("out", c.out_dir);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (c.threads < 1) throw ConfigInvalid("threads must be >= 1");
  return c;
}

Json config_to_json(const RunConfig& c) {
  Json b = Json::array();
  for (const BoundState& s : c.bound)
    b.push_back({{"kappa", s.kappa}, {"norming", s.norming}});
  return {{"profile", profile_to_json(c.profile)},
          {"perturbation", pert_to_json(c.pert)},
          {"lambda", c.lambda},
          {"hypothesis", c.hypothesis == Hypothesis::H1 ? "H1" : "H2"},
          {"numerics", numerics_to_json(c.num)},
          {"kappa", c.kappa},
          {"omega_n", c.omega_n},
          {"sweep_samples", c.sweep_samples},
          {"omega", c.omega},
          {"truncation", c.truncation},
          {"n_mu", c.n_mu},
          {"n_phi", c.n_phi},
          {"n_anchor", c.n_anchor},
          {"band_limit", c.band_limit},
          {"mode", c.mode},
          {"orders", c.orders},
          {"symbols", c.symbols_path},
          {"reflection", c.reflection_path},
          {"bound", b},
          {"y_max_1d", c.y_max_1d},
          {"nystrom", c.nystrom},
          {"out", c.out_dir},
          {"seed", c.seed},
          {"threads", c.threads}};
}

Json symbols_to_json(const std::vector<ScatteringSymbolData>& S,
                     const SymbolGrid& grid) {
  Json orders = Json::array();
  for (const ScatteringSymbolData& s : S) {
    std::vector<double> vr, vi, pr, pi;
    for (size_t fi = 0; fi < s.families.size(); ++fi)
      for (size_t a = 0; a < s.families[fi].I.size(); ++a) {
        vr.push_back(s.families[fi].I[a].real());
        vi.push_back(s.families[fi].I[a].imag());
        pr.push_back(s.prefactor[fi][a].real());
        pi.push_back(s.prefactor[fi][a].imag());
      }
    orders.push_back({{"order", s.order},
                      {"prefactor_tag", std::string(1, s.prefactor_tag)},
                      {"lambda", s.lambda},
                      {"c_branch", s.c_branch},
                      {"values_re", vr},
                      {"values_im", vi},
                      {"prefactor_re", pr},
                      {"prefactor_im", pi}});
  }
  return {{"grid",
           {{"n_mu", grid.poles.n_mu()},
            {"n_phi", grid.poles.n_phi()},
            {"anchor_t", grid.anchor_t},
            {"mode", grid.mode == Branch::T ? "T" : "R"}}},
          {"orders", orders}};
}

std::vector<ScatteringSymbolData> symbols_from_json(const Json& j,
                                                    SymbolGrid& grid_out) {
  const Json& g = j.at("grid");
  grid_out.poles = make_pole_grid(g.at("n_mu").get<int>(),
                                  g.at("n_phi").get<int>());
  grid_out.anchor_t = g.at("anchor_t").get<std::vector<double>>();
  std::string m = g.value("mode", std::string("T"));
  grid_out.mode = m == "R" ? Branch::R : Branch::T;
  int n_fam = grid_out.poles.n();
  int n_anc = (int)grid_out.anchor_t.size();
  std::vector<ScatteringSymbolData> out;
  for (const Json& o : j.at("orders")) {
    ScatteringSymbolData s;
    s.order = o.at("order").get<int>();
    s.prefactor_tag = o.at("prefactor_tag").get<std::string>().at(0);
    s.lambda = o.at("lambda").get<double>();
    s.c_branch = o.at("c_branch").get<double>();
    auto vr = o.at("values_re").get<std::vector<double>>();
    auto vi = o.at("values_im").get<std::vector<double>>();
    auto pr = o.at("prefactor_re").get<std::vector<double>>();
    auto pi = o.at("prefactor_im").get<std::vector<double>>();
    if ((int)vr.size() != n_fam * n_anc || vi.size() != vr.size() ||
        pr.size() != vr.size() || pi.size() != vr.size())
      throw ConfigInvalid("symbol value count does not match the grid");
    s.families.resize(n_fam);
    s.prefactor.assign(n_fam, std::vector<Complex>(n_anc));
    for (int fi = 0; fi < n_fam; ++fi) {
      s.families[fi].pole = grid_out.poles.dir(fi);
      s.families[fi].t = grid_out.anchor_t;
      s.families[fi].I.resize(n_anc);
      for (int a = 0; a < n_anc; ++a) {
        size_t q = (size_t)fi * n_anc + a;
        s.families[fi].I[a] = Complex{vr[q], vi[q]};
        s.prefactor[fi][a] = Complex{pr[q], pi[q]};
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV and file helpers
// ---------------------------------------------------------------------------

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  f << content;
  if (!f) throw IoFailure("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ostringstream ss;
  for (size_t i = 0; i < header.size(); ++i)
    ss << (i ? "," : "") << header[i];
  ss << "\n";
  for (const auto& r : rows) {
    if (r.size() != header.size())
      throw IoFailure("row width does not match header: " + path);
    for (size_t i = 0; i < r.size(); ++i)
      ss << (i ? "," : "") << fmt_double(r[i]);
    ss << "\n";
  }
  write_text(path, ss.str());
}

void read_csv(const std::string& path, std::vector<std::string>& header,
              std::vector<std::vector<double>>& rows) {
  std::istringstream in(read_text(path));
  header.clear();
  rows.clear();
  std::string line;
  if (!std::getline(in, line)) throw IoFailure("empty csv: " + path);
  std::istringstream hl(line);
  std::string cell;
  while (std::getline(hl, cell, ',')) header.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream rl(line);
    std::vector<double> row;
    while (std::getline(rl, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != header.size())
      throw IoFailure("ragged csv row: " + path);
    rows.push_back(std::move(row));
  }
}

Json run_manifest(const RunConfig& cfg, Complex calibration) {
  auto now = std::chrono::system_clock::now().time_since_epoch();
  return {
      {"tool", "strata_cli"},
      {"format_version", 1},
      {"timestamp",
       std::chrono::duration_cast<std::chrono::milliseconds>(now).count()},
      {"conventions",
       {{"dy_sign", "-i d/dy"},
        {"outgoing", "exp(-i lambda |z|/c)"},
        {"symbol_base", "i/(2 lambda c_branch)"},
        {"calibration_re", calibration.real()},
        {"calibration_im", calibration.imag()}}},
      {"tolerances", numerics_to_json(cfg.num)},
      {"lambda", cfg.lambda},
      {"seed", cfg.seed}};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_manifest(const RunConfig& cfg, Complex calib = Complex{1, 0}) {
  write_text(join(cfg.out_dir, "manifest.json"),
             run_manifest(cfg, calib).dump(2) + "\n");
}

int run_modes(const RunConfig& cfg) {
  ModeSpectrum sp = guided_modes(cfg.profile, cfg.kappa, cfg.num);
  Thresholds th = thresholds(cfg.profile, cfg.lambda, cfg.num);
  Json out = {{"kappa", sp.kappa},
              {"eigenvalues", sp.eigenvalues},
              {"thresholds", th.t},
              {"channel_count", th.channel_count}};
  write_text(join(cfg.out_dir, "modes.json"), out.dump(2) + "\n");

  // dispersion curves lambda_j(kappa) on a fixed sweep around cfg.kappa
  std::vector<std::vector<double>> rows;
  int nk = 21;
  for (int i = 0; i < nk; ++i) {
    double kap = cfg.kappa * (0.5 + 1.5 * i / double(nk - 1));
    ModeSpectrum s = guided_modes(cfg.profile, kap, cfg.num);
    for (size_t jm = 0; jm < s.eigenvalues.size(); ++jm)
      rows.push_back({kap, double(jm + 1), std::sqrt(s.eigenvalues[jm])});
  }
  write_csv(join(cfg.out_dir, "dispersion.csv"), {"kappa", "j", "lambda_j"},
            rows);
  write_manifest(cfg);
  return 0;
}

int run_coeffs(const RunConfig& cfg) {
  std::vector<double> wn;
  if (cfg.omega_n >= -1.0 && cfg.omega_n <= 1.0) {
    wn.push_back(cfg.omega_n);
  } else {
    double d = cfg.num.delta_crit;
    double wc = cfg.profile.critical_omega_n();
    for (int i = 0; i < cfg.sweep_samples; ++i) {
      double w = 2 * d + (1.0 - 4 * d) * i / double(cfg.sweep_samples - 1);
      if (wc > 0 && std::abs(w - wc) < d) continue;
      wn.push_back(w);
    }
  }
  std::vector<std::vector<double>> rows(wn.size());
  auto work = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      PlaneWave1D p = solve_phi_plus(cfg.profile, cfg.lambda, wn[i], cfg.num);
      const RTCoefficients& rt = p.coeffs();
      rows[i] = {wn[i],
                 rt.R.real(),
                 rt.R.imag(),
                 rt.T.real(),
                 rt.T.imag(),
                 rt.regime == Regime::Propagating ? 0.0 : 1.0};
    }
  };
  int nt = std::max(1, std::min(cfg.threads, (int)wn.size()));
  if (nt == 1) {
    work(0, wn.size());
  } else {
    std::vector<std::thread> pool;
    size_t chunk = (wn.size() + nt - 1) / nt;
    for (int t = 0; t < nt; ++t)
      pool.emplace_back(work, std::min(wn.size(), t * chunk),
                        std::min(wn.size(), (t + 1) * chunk));
    for (auto& th : pool) th.join();
  }
  write_csv(join(cfg.out_dir, "coeffs.csv"),
            {"omega_n", "re_r", "im_r", "re_t", "im_t", "regime"}, rows);
  write_manifest(cfg);
  return 0;
}

int run_maps(const RunConfig& cfg) {
  if (cfg.omega_n < -1.0 || cfg.omega_n > 1.0)
    throw ConfigInvalid("maps needs --omega-n in [-1, 1]");
  double wn = cfg.omega_n;
  double ab = std::sqrt(std::max(0.0, 1.0 - wn * wn));
  Vec3 omega{ab, 0.0, wn};
  auto vec_json = [](const Vec3& v) {
    return Json{{"x", v.x}, {"y", v.y}, {"z", v.z}};
  };
  Json out = {{"omega", vec_json(omega)},
              {"reflect", vec_json(map_reflect(omega, cfg.num))},
              {"antipode", vec_json(-omega)}};
  try {
    out["transmit"] = vec_json(map_transmit(omega, cfg.profile.c_plus,
                                            cfg.profile.c_minus, cfg.num));
  } catch (const TotalInternalReflection&) {
    out["transmit"] = {{"total_internal_reflection", true}};
  }
  write_text(join(cfg.out_dir, "maps.json"), out.dump(2) + "\n");
  write_manifest(cfg);
  return 0;
}

int run_parametrix(const RunConfig& cfg) {
  Vec3 omega = parse_vec(cfg.omega);
  Parametrix st = assemble_parametrix(cfg.profile, cfg.pert, cfg.lambda, omega,
                                      cfg.truncation, cfg.num);
  Json branches = Json::array();
  auto emit = [&](Branch b, const char* tag) {
    const BranchFan& fan = st.fan(b);
    const auto& amps = st.amps(b);
    for (const SphericalAmplitude& a : amps) {
      std::vector<std::vector<double>> rows;
      for (int ip = 0; ip < (int)fan.psi.size(); ++ip)
        for (int ic = 0; ic < (int)fan.sigma.size(); ++ic) {
          double s = fan.s_at(ip, ic);
          Complex b_val = st.amp_value(b, int(&a - amps.data()),
                                       fan.dir_at(ip, ic));
          rows.push_back(
              {s, fan.theta_t[ip], b_val.real(), b_val.imag()});
        }
      char name[64];
      std::snprintf(name, sizeof name, "amp_%s_%d.csv", tag, a.order);
      write_csv(join(cfg.out_dir, name),
                {"s", "theta_tilde", "re_b", "im_b"}, rows);
      branches.push_back({{"branch", tag},
                          {"order", a.order},
                          {"file", name},
                          {"s_nodes", (int)fan.sigma.size()},
                          {"theta_nodes", (int)fan.psi.size()}});
    }
  };
  emit(Branch::I, "I");
  emit(Branch::R, "R");
  if (st.lower_propagating) emit(Branch::T, "T");

  std::vector<double> radii = {1e2, 1e3, 1e4};
  std::vector<Vec3> dirs = {Vec3{0.4, 0.3, 0.87}.normalized(),
                            Vec3{-0.5, 0.2, 0.84}.normalized(),
                            Vec3{0.3, -0.4, -0.86}.normalized(),
                            Vec3{-0.2, -0.3, -0.93}.normalized()};
  if (!st.lower_propagating) dirs.resize(2);
  DecayFit fit = residual_decay_check(st, radii, dirs);
  Json manifest = {{"orders", st.orders},
                   {"branches", branches},
                   {"excluded",
                    {{"delta_eq", cfg.num.delta_eq},
                     {"delta_crit", cfg.num.delta_crit},
                     {"delta_ant", cfg.num.delta_ant}}},
                   {"decay_slopes", fit.slopes},
                   {"slope_upper", fit.slope_upper},
                   {"slope_lower", fit.slope_lower}};
  write_text(join(cfg.out_dir, "parametrix.json"), manifest.dump(2) + "\n");
  write_manifest(cfg);
  return 0;
}

void emit_recovery(const RunConfig& cfg, const StripResult& res,
                   const std::vector<int>& orders) {
  Json layers = Json::array();
  for (const AngularLayer& l : res.layers)
    layers.push_back({{"order", l.order},
                      {"upper", table_to_json(l.upper)},
                      {"lower", table_to_json(l.lower)}});
  Json out = {{"layers", layers},
              {"gamma", pert_to_json(res.gamma)},
              {"order_residual", res.order_residual},
              {"calibration_re", res.calibration.real()},
              {"calibration_im", res.calibration.imag()}};
  write_text(join(cfg.out_dir, "recovered_layers.json"), out.dump(2) + "\n");

  // gridded values for plotting, one sphere point per row
  for (const AngularLayer& l : res.layers) {
    std::vector<std::vector<double>> rows;
    int nmu = 24, nphi = 48;
    for (int i = 0; i < nmu; ++i) {
      double mu = -1.0 + 2.0 * (i + 0.5) / nmu;
      double sth = std::sqrt(1.0 - mu * mu);
      for (int p = 0; p < nphi; ++p) {
        double ph = 2.0 * kPi * p / nphi;
        Vec3 dir{sth * std::cos(ph), sth * std::sin(ph), mu};
        rows.push_back({mu, ph, l.eval(dir)});
      }
    }
    char name[64];
    std::snprintf(name, sizeof name, "layer_%d.csv", l.order);
    write_csv(join(cfg.out_dir, name), {"mu", "phi", "value"}, rows);
  }

  std::vector<std::vector<double>> rrows;
  for (size_t i = 0; i < res.order_residual.size(); ++i)
    rrows.push_back({double(orders[i]), res.order_residual[i]});
  write_csv(join(cfg.out_dir, "recovery_error.csv"), {"order", "residual"},
            rrows);
}

int run_recover(const RunConfig& cfg) {
  if (cfg.symbols_path.empty())
    throw ConfigInvalid("recover needs --symbols file.json");
  Json j = Json::parse(read_text(cfg.symbols_path), nullptr, false);
  if (j.is_discarded())
    throw IoFailure("symbol file is not valid JSON: " + cfg.symbols_path);
  SymbolGrid grid;
  std::vector<ScatteringSymbolData> S = symbols_from_json(j, grid);
  grid.mode = cfg.mode == "reflected" ? Branch::R : Branch::T;
  if (!cfg.orders.empty()) {
    auto [lo, hi] = parse_order_range(cfg.orders);
    std::erase_if(S, [&](const ScatteringSymbolData& s) {
      return s.order < lo || s.order > hi;
    });
    if (S.empty()) throw ConfigInvalid("no symbol orders in requested range");
  }
  StripResult res =
      layer_strip(S, cfg.profile, cfg.lambda, grid, cfg.band_limit, cfg.num);
  std::vector<int> orders;
  for (const AngularLayer& l : res.layers) orders.push_back(l.order);
  emit_recovery(cfg, res, orders);
  write_manifest(cfg, res.calibration);
  return 0;
}

int run_invert1d(const RunConfig& cfg) {
  if (cfg.reflection_path.empty())
    throw ConfigInvalid("invert1d needs --reflection file.csv");
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  read_csv(cfg.reflection_path, header, rows);
  if (header.size() < 3)
    throw ConfigInvalid("reflection csv needs columns k, re_r, im_r");
  std::vector<double> k;
  std::vector<Complex> R;
  for (const auto& r : rows) {
    k.push_back(r[0]);
    R.push_back(Complex{r[1], r[2]});
  }
  Potential1D pot =
      marchenko_invert_1d(k, R, cfg.bound, cfg.y_max_1d, cfg.nystrom);
  std::vector<std::vector<double>> prow;
  for (size_t i = 0; i < pot.y.size(); ++i)
    prow.push_back({pot.y[i], pot.q[i]});
  write_csv(join(cfg.out_dir, "potential.csv"), {"y", "q"}, prow);
  Json rep = {{"support_radius", pot.support_radius},
              {"n_points", (int)pot.y.size()}};
  write_text(join(cfg.out_dir, "invert1d.json"), rep.dump(2) + "\n");
  write_manifest(cfg);
  return 0;
}

PerturbationExpansion default_planted(const RunConfig& cfg) {
  // deterministic single even layer drawn from the seed
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(-0.2, 0.2);
  ShTable t(2);
  t.at(0, 0) = 0.4 + 0.2 * std::abs(U(rng));
  t.at(2, 0) = U(rng);
  t.at(2, 2) = U(rng);
  PerturbationExpansion p;
  p.leading_order = 2;
  p.dimension = 3;
  p.r0 = 10.0 * std::max(1.0, cfg.profile.y_M);
  p.delta_eq = cfg.num.delta_eq;
  for (auto h : {Hemisphere::Upper, Hemisphere::Lower})
    p.terms.push_back({2, h, t});
  return p;
}

int run_roundtrip(const RunConfig& cfg) {
  PerturbationExpansion pert =
      cfg.pert.empty() ? default_planted(cfg) : cfg.pert;
  std::vector<int> orders;
  for (const AngularTerm& t : pert.terms)
    if (std::find(orders.begin(), orders.end(), t.order) == orders.end())
      orders.push_back(t.order);
  std::sort(orders.begin(), orders.end());
  SymbolGrid grid = make_symbol_grid(cfg.n_mu, cfg.n_phi, cfg.n_anchor);
  if (cfg.mode == "reflected") grid.mode = Branch::R;
  std::vector<ScatteringSymbolData> S =
      synthesize_symbols(cfg.profile, pert, cfg.lambda, grid, orders, cfg.num);
  write_text(join(cfg.out_dir, "symbols.json"),
             symbols_to_json(S, grid).dump(2) + "\n");
  StripResult res =
      layer_strip(S, cfg.profile, cfg.lambda, grid, cfg.band_limit, cfg.num);
  emit_recovery(cfg, res, orders);

  // coefficient error of the recovery against the planted expansion
  double num2 = 0, den2 = 0;
  for (const AngularTerm& t : pert.terms) {
    if (t.hemisphere != Hemisphere::Upper) continue;
    const ShTable* rec = nullptr;
    for (const AngularTerm& r : res.gamma.terms)
      if (r.order == t.order && r.hemisphere == Hemisphere::Upper)
        rec = &r.coeffs;
    int L = rec ? std::max(t.coeffs.band_limit, rec->band_limit)
                : t.coeffs.band_limit;
    for (int idx = 0; idx < sh_count(L); ++idx) {
      double tv =
          idx < (int)t.coeffs.coeffs.size() ? t.coeffs.coeffs[idx] : 0.0;
      double rv =
          rec && idx < (int)rec->coeffs.size() ? rec->coeffs[idx] : 0.0;
      num2 += (tv - rv) * (tv - rv);
      den2 += tv * tv;
    }
  }
  double rel = den2 > 0 ? std::sqrt(num2 / den2) : std::sqrt(num2);
  Json rep = {{"rel_error", rel},
              {"orders", orders},
              {"order_residual", res.order_residual},
              {"planted", pert_to_json(pert)}};
  write_text(join(cfg.out_dir, "roundtrip_report.json"), rep.dump(2) + "\n");
  write_manifest(cfg, res.calibration);
  return 0;
}

}  // namespace

int run(const RunConfig& cfg, const std::string& subcommand) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoFailure("cannot create output directory: " + cfg.out_dir);
  if (subcommand == "modes") return run_modes(cfg);
  if (subcommand == "coeffs") return run_coeffs(cfg);
  if (subcommand == "maps") return run_maps(cfg);
  if (subcommand == "parametrix") return run_parametrix(cfg);
  if (subcommand == "recover") return run_recover(cfg);
  if (subcommand == "invert1d") return run_invert1d(cfg);
  if (subcommand == "roundtrip") return run_roundtrip(cfg);
  throw ConfigInvalid("unknown subcommand: " + subcommand);
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"stratified-media scattering toolkit"};
  app.require_subcommand(1);
  std::string config_path, out_dir, omega, mode, orders, symbols, reflection;
  unsigned long long seed = 0;
  int threads = 0, truncation = -1;
  double lambda = 0, kappa = 0, omega_n = -2.0;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "seed for generated test data");
  app.add_option("--threads", threads, "parallel workers");
  app.fallthrough();

  CLI::App* c_modes = app.add_subcommand("modes", "guided mode tables");
  c_modes->add_option("--kappa", kappa, "horizontal wavenumber");
  CLI::App* c_coeffs = app.add_subcommand("coeffs", "R/T coefficient sweep");
  c_coeffs->add_option("--lambda", lambda, "energy");
  c_coeffs->add_option("--omega-n", omega_n, "single vertical component");
  CLI::App* c_maps = app.add_subcommand("maps", "singularity map images");
  c_maps->add_option("--omega-n", omega_n, "vertical component")->required();
  CLI::App* c_par = app.add_subcommand("parametrix", "amplitude grids");
  c_par->add_option("--lambda", lambda, "energy");
  c_par->add_option("--omega", omega, "incident direction x,y,z");
  c_par->add_option("--order", truncation, "correction orders");
  CLI::App* c_rec = app.add_subcommand("recover", "layer stripping");
  c_rec->add_option("--symbols", symbols, "symbol data JSON")->required();
  c_rec->add_option("--mode", mode, "transmitted|reflected");
  c_rec->add_option("--orders", orders, "order range J..L");
  CLI::App* c_inv = app.add_subcommand("invert1d", "reflection to potential");
  c_inv->add_option("--reflection", reflection, "CSV with k, re_r, im_r")
      ->required();
  app.add_subcommand("roundtrip", "synthesize then recover a planted layer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      Json j = Json::parse(read_text(config_path), nullptr, false);
      if (j.is_discarded())
        throw ConfigInvalid("config is not valid JSON: " + config_path);
      cfg = config_from_json(j);
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (app.count("--seed")) cfg.seed = seed;
    if (threads > 0) cfg.threads = threads;
    if (c_modes->count("--kappa")) cfg.kappa = kappa;
    if (c_coeffs->count("--lambda") || c_par->count("--lambda"))
      cfg.lambda = lambda;
    if (cfg.lambda <= 0) throw ConfigInvalid("lambda must be positive");
    if (c_coeffs->count("--omega-n") || c_maps->count("--omega-n"))
      cfg.omega_n = omega_n;
    if (c_par->count("--omega")) cfg.omega = omega;
    if (truncation >= 0) cfg.truncation = truncation;
    if (!mode.empty()) {
      if (mode != "transmitted" && mode != "reflected")
        throw ConfigInvalid("mode must be transmitted or reflected");
      cfg.mode = mode;
    }
    if (!orders.empty()) cfg.orders = orders;
    if (!symbols.empty()) cfg.symbols_path = symbols;
    if (!reflection.empty()) cfg.reflection_path = reflection;
    return run(cfg, app.get_subcommands().front()->get_name());
  } catch (const Error& e) {
    const char* tag = "Error";
    int code = 3;
    if (dynamic_cast<const ConfigInvalid*>(&e)) tag = "ConfigInvalid", code = 2;
    if (dynamic_cast<const IoFailure*>(&e)) tag = "IoFailure", code = 2;
    if (dynamic_cast<const SteplikeUnsupported*>(&e))
      tag = "SteplikeUnsupported";
    if (dynamic_cast<const IllPosedKernel*>(&e)) tag = "IllPosedKernel";
    if (dynamic_cast<const VanishingCoefficient*>(&e))
      tag = "VanishingCoefficient";
    if (dynamic_cast<const InsufficientFamilyResolution*>(&e))
      tag = "InsufficientFamilyResolution";
    if (dynamic_cast<const TotalInternalReflection*>(&e))
      tag = "TotalInternalReflection";
    Json err = {{"error", tag}, {"message", e.what()}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return code;
  } catch (const std::exception& e) {
    Json err = {{"error", "Internal"}, {"message", e.what()}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 4;
  }
}

}  // namespace strata
