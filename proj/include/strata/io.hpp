#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "strata/inverse.hpp"
#include "strata/media.hpp"
#include "strata/types.hpp"

namespace strata {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration, JSON serialization of the domain types, CSV emission,
// and the command driver behind the strata_cli tool. All artifacts are
// deterministic for a fixed config and seed apart from the manifest timestamp.
// ---------------------------------------------------------------------------

struct RunConfig {
  StratifiedProfile profile = StratifiedProfile::constant(1.0);
  PerturbationExpansion pert;
  double lambda = 2.0;
  Hypothesis hypothesis = Hypothesis::H2;
  Numerics num;

  // command options
  double kappa = 1.0;
  double omega_n = -2.0;  // values outside [-1, 1] request a sweep
  int sweep_samples = 200;
  std::string omega = "0.3,0.2,0.8";  // parametrix incident direction
  int truncation = 0;
  int n_mu = 6, n_phi = 10, n_anchor = 2;
  int band_limit = 3;
  std::string mode = "transmitted";  // or "reflected"
  std::string orders;                // "J..L" selection, empty = all present
  std::string symbols_path, reflection_path;
  std::vector<BoundState> bound;
  double y_max_1d = 4.0;
  int nystrom = 401;

  std::string out_dir = ".";
  unsigned long long seed = 0;
  int threads = 1;
};

RunConfig config_from_json(const Json& j);
Json config_to_json(const RunConfig& cfg);

Json profile_to_json(const StratifiedProfile& p);
StratifiedProfile profile_from_json(const Json& j);

Json table_to_json(const ShTable& t);
ShTable table_from_json(const Json& j);

Json pert_to_json(const PerturbationExpansion& p);
PerturbationExpansion pert_from_json(const Json& j);

Json numerics_to_json(const Numerics& n);
Numerics numerics_from_json(const Json& j);

// Symbol files: one object per order with the anchor grid and the sampled
// values/prefactors; the shared pole grid and anchor angles ride along.
Json symbols_to_json(const std::vector<ScatteringSymbolData>& S,
                     const SymbolGrid& grid);
std::vector<ScatteringSymbolData> symbols_from_json(const Json& j,
                                                    SymbolGrid& grid_out);

// Tidy CSV, one observation per row, first line is the header.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
void read_csv(const std::string& path, std::vector<std::string>& header,
              std::vector<std::vector<double>>& rows);

void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

// Tolerances and sign conventions recorded with every run; `timestamp` is the
// only field allowed to differ between identical runs.
Json run_manifest(const RunConfig& cfg, Complex calibration = Complex{1, 0});

// Executes one subcommand, writing artifacts into cfg.out_dir.
int run(const RunConfig& cfg, const std::string& subcommand);

// argv-level entry point: subcommand parsing, config loading, error JSON on
// stderr with a nonzero exit status.
int cli_main(int argc, const char* const* argv);

}  // namespace strata
