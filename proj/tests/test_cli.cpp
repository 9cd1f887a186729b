#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "strata/geometry.hpp"
#include "strata/io.hpp"

using namespace strata;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("strata_cli");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main((int)argv.size(), argv.data());
}

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("strata_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

Numerics fast_num() {
  Numerics num;
  num.n_psi = 32;
  num.n_s = 64;
  num.n_y = 400;
  return num;
}

StratifiedProfile slab_prof() {
  return StratifiedProfile::make(1.0, 1.0, 1.0, {Layer{-1.0, 1.0, {0.5}}});
}

RunConfig base_config(const std::string& out) {
  RunConfig cfg;
  cfg.num = fast_num();
  cfg.out_dir = out;
  return cfg;
}

void write_config(const RunConfig& cfg, const std::string& path) {
  write_text(path, config_to_json(cfg).dump(2) + "\n");
}

Json load_json(const std::string& path) {
  Json j = Json::parse(read_text(path), nullptr, false);
  REQUIRE(!j.is_discarded());
  return j;
}

}  // namespace

TEST_CASE("config and domain types survive the json round trip") {
  RunConfig cfg;
  cfg.profile = StratifiedProfile::make(
      1.0, 1.5, 0.8, {Layer{-0.8, 0.1, {0.9, 0.05}}, Layer{0.1, 0.8, {1.0}}});
  ShTable t(2);
  t.at(0, 0) = 0.3;
  t.at(2, -1) = -0.12;
  cfg.pert.leading_order = 2;
  cfg.pert.r0 = 9.0;
  cfg.pert.terms.push_back({2, Hemisphere::Upper, t});
  cfg.pert.terms.push_back({2, Hemisphere::Lower, t});
  cfg.lambda = 3.5;
  cfg.kappa = 2.25;
  cfg.mode = "reflected";
  cfg.bound.push_back({0.7, 2.0});
  cfg.seed = 1234;

  RunConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.profile.c_minus == cfg.profile.c_minus);
  CHECK(back.profile.layers.size() == 2);
  CHECK(back.profile.layers[0].poly_coeffs[1] == 0.05);
  CHECK(back.pert.terms.size() == 2);
  CHECK(back.pert.terms[0].coeffs.at(2, -1) == -0.12);
  CHECK(back.lambda == 3.5);
  CHECK(back.kappa == 2.25);
  CHECK(back.mode == "reflected");
  CHECK(back.bound.size() == 1);
  CHECK(back.bound[0].norming == 2.0);
  CHECK(back.seed == 1234);

  Json bad = config_to_json(cfg);
  bad["hypothesis"] = "H3";
  CHECK_THROWS_AS(config_from_json(bad), ConfigInvalid);
  bad = config_to_json(cfg);
  bad["lambda"] = -1.0;
  CHECK_THROWS_AS(config_from_json(bad), ConfigInvalid);
  bad = config_to_json(cfg);
  bad["numerics"]["delta_eq"] = 0.7;
  CHECK_THROWS_AS(config_from_json(bad), ConfigInvalid);
}

TEST_CASE("csv writer and reader are exact inverses") {
  std::string dir = fresh_dir("csv");
  std::string path = dir + "/t.csv";
  std::vector<std::vector<double>> rows = {
      {1.0, -0.3333333333333333, 2e-17}, {0.1 + 0.2, 1e300, -4.0}};
  write_csv(path, {"a", "b", "c"}, rows);
  std::vector<std::string> header;
  std::vector<std::vector<double>> back;
  read_csv(path, header, back);
  REQUIRE(header.size() == 3);
  CHECK(header[1] == "b");
  REQUIRE(back.size() == 2);
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      CHECK(back[i][j] == rows[i][j]);
  CHECK_THROWS_AS(read_csv(dir + "/missing.csv", header, back), IoFailure);
}

TEST_CASE("symbol files round trip through json") {
  SymbolGrid grid = make_symbol_grid(3, 6, 2);
  ScatteringSymbolData s;
  s.order = 2;
  s.prefactor_tag = 'T';
  s.lambda = 2.0;
  s.c_branch = 1.0;
  int nf = grid.poles.n(), na = (int)grid.anchor_t.size();
  s.families.resize(nf);
  s.prefactor.assign(nf, std::vector<Complex>(na));
  for (int fi = 0; fi < nf; ++fi) {
    s.families[fi].pole = grid.poles.dir(fi);
    s.families[fi].t = grid.anchor_t;
    for (int a = 0; a < na; ++a) {
      s.families[fi].I.push_back(Complex{0.1 * fi + a, -0.2 * a});
      s.prefactor[fi][a] = Complex{1.0, 0.01 * fi};
    }
  }
  Json j = symbols_to_json({s}, grid);
  SymbolGrid g2;
  std::vector<ScatteringSymbolData> back = symbols_from_json(j, g2);
  REQUIRE(back.size() == 1);
  CHECK(g2.poles.n() == grid.poles.n());
  CHECK(g2.anchor_t == grid.anchor_t);
  CHECK(back[0].order == 2);
  CHECK(back[0].prefactor_tag == 'T');
  for (int fi = 0; fi < nf; ++fi)
    for (int a = 0; a < na; ++a) {
      CHECK(back[0].families[fi].I[a] == s.families[fi].I[a]);
      CHECK(back[0].prefactor[fi][a] == s.prefactor[fi][a]);
    }

  Json broken = j;
  broken["orders"][0]["values_re"].erase(0);
  SymbolGrid g3;
  CHECK_THROWS_AS(symbols_from_json(broken, g3), ConfigInvalid);
}

TEST_CASE("modes command emits mode tables and dispersion curves") {
  std::string dir = fresh_dir("modes");
  RunConfig cfg = base_config(dir);
  cfg.profile = slab_prof();
  cfg.kappa = 6.0;
  cfg.lambda = 4.0;
  std::string cpath = dir + "/config.json";
  write_config(cfg, cpath);
  CHECK(run_cli({"--config", cpath, "--out", dir, "modes"}) == 0);

  Json m = load_json(dir + "/modes.json");
  CHECK(m.at("kappa").get<double>() == 6.0);
  CHECK(m.at("eigenvalues").size() >= 1);
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  read_csv(dir + "/dispersion.csv", header, rows);
  REQUIRE(header == std::vector<std::string>{"kappa", "j", "lambda_j"});
  CHECK(rows.size() >= 1);
  for (const auto& r : rows) CHECK(r[2] > 0.0);

  // constant profile: empty table, exit 0
  std::string dir2 = fresh_dir("modes_const");
  RunConfig c2 = base_config(dir2);
  write_config(c2, dir2 + "/config.json");
  CHECK(run_cli({"--config", dir2 + "/config.json", "--out", dir2, "modes"}) ==
        0);
  CHECK(load_json(dir2 + "/modes.json").at("eigenvalues").empty());
}

TEST_CASE("coeffs sweep shows the full-reflection plateau") {
  std::string dir = fresh_dir("coeffs");
  RunConfig cfg = base_config(dir);
  cfg.profile = StratifiedProfile::make(1.0, 2.0, 0.0, {});
  cfg.lambda = 3.0;
  write_config(cfg, dir + "/config.json");
  CHECK(run_cli({"--config", dir + "/config.json", "--out", dir, "coeffs"}) ==
        0);
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  read_csv(dir + "/coeffs.csv", header, rows);
  REQUIRE(header == std::vector<std::string>{"omega_n", "re_r", "im_r", "re_t",
                                             "im_t", "regime"});
  REQUIRE(rows.size() > 100);
  int n_evan = 0;
  for (const auto& r : rows) {
    double wc = cfg.profile.critical_omega_n();
    if (r[0] < wc - 1e-3) {
      CHECK(r[5] == 1.0);
      CHECK(std::abs(std::hypot(r[1], r[2]) - 1.0) < 1e-10);
      ++n_evan;
    }
  }
  CHECK(n_evan > 20);
}

TEST_CASE("maps command prints the three endpoint images") {
  std::string dir = fresh_dir("maps");
  RunConfig cfg = base_config(dir);
  cfg.profile = StratifiedProfile::make(1.0, 2.0, 0.0, {});
  write_config(cfg, dir + "/config.json");
  CHECK(run_cli({"--config", dir + "/config.json", "--out", dir, "maps",
                 "--omega-n", "0.3"}) == 0);
  Json m = load_json(dir + "/maps.json");
  CHECK(m.at("reflect").at("z").get<double>() == doctest::Approx(0.3));
  CHECK(m.at("reflect").at("x").get<double>() < 0.0);
  CHECK(m.at("antipode").at("z").get<double>() == doctest::Approx(-0.3));
  CHECK(m.at("transmit").at("total_internal_reflection") == true);

  CHECK(run_cli({"--config", dir + "/config.json", "--out", dir, "maps",
                 "--omega-n", "0.95"}) == 0);
  m = load_json(dir + "/maps.json");
  double wn = 0.95, ab = std::sqrt(1 - wn * wn);
  Vec3 im = map_transmit(Vec3{ab, 0, wn}, 1.0, 2.0);
  CHECK(m.at("transmit").at("x").get<double>() == doctest::Approx(im.x));
  CHECK(m.at("transmit").at("z").get<double>() == doctest::Approx(im.z));
}

TEST_CASE("parametrix command emits amplitude heatmaps and a manifest") {
  std::string dir = fresh_dir("parametrix");
  RunConfig cfg = base_config(dir);
  cfg.profile =
      StratifiedProfile::make(1.0, 1.0, 0.5, {Layer{-0.5, 0.5, {1.0}}});
  ShTable t(1);
  t.at(0, 0) = 0.4;
  cfg.pert.leading_order = 2;
  cfg.pert.r0 = 10.0;
  for (auto h : {Hemisphere::Upper, Hemisphere::Lower})
    cfg.pert.terms.push_back({2, h, t});
  cfg.lambda = 2.0;
  cfg.truncation = 1;
  cfg.omega = "0.3,0.1,0.9";
  write_config(cfg, dir + "/config.json");
  CHECK(run_cli({"--config", dir + "/config.json", "--out", dir,
                 "parametrix"}) == 0);

  Json man = load_json(dir + "/parametrix.json");
  CHECK(man.at("orders").size() == 1);
  CHECK(man.at("branches").size() == 3);
  CHECK(man.at("slope_upper").get<double>() < -1.5);
  for (const Json& b : man.at("branches")) {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    read_csv(dir + "/" + b.at("file").get<std::string>(), header, rows);
    REQUIRE(header ==
            std::vector<std::string>{"s", "theta_tilde", "re_b", "im_b"});
    CHECK((int)rows.size() ==
          b.at("s_nodes").get<int>() * b.at("theta_nodes").get<int>());
  }
}

TEST_CASE("invert1d command recovers the zero potential from zero data") {
  std::string dir = fresh_dir("invert1d");
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 81; ++i) rows.push_back({-8.0 + 0.2 * i, 0.0, 0.0});
  write_csv(dir + "/reflection.csv", {"k", "re_r", "im_r"}, rows);
  RunConfig cfg = base_config(dir);
  cfg.y_max_1d = 3.0;
  cfg.nystrom = 201;
  write_config(cfg, dir + "/config.json");
  CHECK(run_cli({"--config", dir + "/config.json", "--out", dir, "invert1d",
                 "--reflection", dir + "/reflection.csv"}) == 0);
  std::vector<std::string> header;
  std::vector<std::vector<double>> pot;
  read_csv(dir + "/potential.csv", header, pot);
  REQUIRE(header == std::vector<std::string>{"y", "q"});
  for (const auto& r : pot) CHECK(std::abs(r[1]) < 1e-12);

  // missing input is a config error with a nonzero exit
  CHECK(run_cli({"--out", dir, "invert1d", "--reflection",
                 dir + "/nope.csv"}) != 0);
}

TEST_CASE("roundtrip command reports a small recovery error") {
  std::string dir = fresh_dir("roundtrip");
  RunConfig cfg = base_config(dir);
  cfg.profile =
      StratifiedProfile::make(1.0, 1.0, 0.5, {Layer{-0.5, 0.5, {1.0}}});
  cfg.lambda = 2.0;
  cfg.n_mu = 3;
  cfg.n_phi = 6;
  cfg.band_limit = 2;
  cfg.seed = 7;
  write_config(cfg, dir + "/config.json");
  CHECK(run_cli({"--config", dir + "/config.json", "--out", dir,
                 "roundtrip"}) == 0);

  Json rep = load_json(dir + "/roundtrip_report.json");
  CHECK(rep.at("rel_error").get<double>() < 1e-3);
  CHECK(rep.at("order_residual").size() == 1);
  CHECK(rep.at("order_residual")[0].get<double>() < 1e-3);

  // emitted symbol file re-ingests
  SymbolGrid grid;
  std::vector<ScatteringSymbolData> S =
      symbols_from_json(load_json(dir + "/symbols.json"), grid);
  CHECK(S.size() == 1);
  CHECK(grid.poles.n() == 18);

  // recovered layer file re-ingests and matches the planted table
  Json rec = load_json(dir + "/recovered_layers.json");
  PerturbationExpansion gam = pert_from_json(rec.at("gamma"));
  PerturbationExpansion planted = pert_from_json(rep.at("planted"));
  REQUIRE(gam.terms.size() >= 1);
  double worst = 0;
  const ShTable& a = gam.terms[0].coeffs;
  const ShTable& b = planted.terms[0].coeffs;
  for (int idx = 0; idx < sh_count(std::min(a.band_limit, b.band_limit));
       ++idx)
    worst = std::max(worst, std::abs(a.coeffs[idx] - b.coeffs[idx]));
  CHECK(worst < 1e-3);

  // determinism: a second run with the same config and seed is bit-identical
  std::string dir2 = fresh_dir("roundtrip2");
  CHECK(run_cli({"--config", dir + "/config.json", "--out", dir2,
                 "roundtrip"}) == 0);
  for (const char* f : {"symbols.json", "roundtrip_report.json",
                        "recovered_layers.json", "layer_2.csv",
                        "recovery_error.csv"})
    CHECK(read_text(dir + "/" + f) == read_text(dir2 + "/" + f));
  Json m1 = load_json(dir + "/manifest.json");
  Json m2 = load_json(dir2 + "/manifest.json");
  m1.erase("timestamp");
  m2.erase("timestamp");
  CHECK(m1 == m2);
}
