#pragma once

// The `gprinv` command line: run configuration (profiles, config files,
// overrides), subcommand dispatch and the oracle self-test suite.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gprinv/dataset.hpp"
#include "gprinv/dmrf.hpp"
#include "gprinv/fwi.hpp"

namespace gprinv::cli {

// ---- run configuration ------------------------------------------------------

struct RunConfig {
  std::string profile = "desk";  // desk, paper
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = available cores (generation), 1 (training)

  dataset::DatasetConfig data;

  dmrf::ModelKind kind = dmrf::ModelKind::DMRF;
  double width_factor = 1.0;
  double alpha = 10.0;
  double beta = 1.0;
  bool two_channel_input = true;
  bool end_to_end = true;
  bool auto_balance = false;
  std::size_t epochs = 150;
  double lr = 1e-4;
  std::size_t batch = 16;

  std::size_t finetune_epochs = 10;
  double finetune_lr = 1e-5;

  fwi::AnnealSchedule anneal;
  fwi::SoilModel fwi_soil = fwi::SoilModel::Homogeneous;
  // Start perturbation when no explicit start is given: eps_r by up to this
  // fraction, center coordinates by up to this many meters.
  double fwi_start_eps = 0.2;
  double fwi_start_offset = 0.05;

  std::string eval_split = "test";
  std::vector<std::string> eval_groups;  // empty = all
  bool eval_windowed = false;
  std::size_t eval_batch = 16;

  // InvalidConfig for an unknown profile name.
  static RunConfig defaults(const std::string& profile);

  // Model settings with the master seed applied.
  dmrf::DMRFConfig model() const;
  // Dataset settings with the master seed applied.
  dataset::DatasetConfig dataset() const;
  void validate() const;

  // Canonical config-file text; parsing it reproduces this config.
  std::string text() const;
  std::string hash() const;
};

struct ConfigKey {
  std::string name;  // "section.key"
  std::string help;
};

// Every accepted key, in file order.
const std::vector<ConfigKey>& config_schema();
std::string schema_help();

struct Assignment {
  std::string key;  // "section.key"
  std::string value;
  std::string origin;  // "file:line" or "--set"
};

// Grammar, one statement per line:
//   # comment         (also after a value)
//   [section]
//   key = value
// Blank lines are ignored. InvalidConfig with the origin on malformed lines,
// keys outside a section, unknown sections or unknown keys.
std::vector<Assignment> parse_config_text(const std::string& text, const std::string& origin);
// "section.key=value".
Assignment parse_override(const std::string& text);

// Applies one assignment. InvalidConfig on an unknown key or a bad value.
void apply(RunConfig& cfg, const Assignment& a);
// The current value as config-file text.
std::string get(const RunConfig& cfg, const std::string& key);

// Starts from the profile named by the last run.profile assignment (desk if
// none), then applies every assignment in order.
RunConfig resolve(const std::vector<Assignment>& assignments);

// requested == 0 picks `fallback`; the GPRINV_MAX_WORKERS environment
// variable caps the result.
std::size_t resolve_workers(std::size_t requested, std::size_t fallback);

// Splits a total sample count over the profile's object-count groups in
// proportion (largest remainder).
void set_total_samples(dataset::DatasetConfig& data, std::size_t total);

// ---- oracle suite ------------------------------------------------------------

struct OracleLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Central-difference gradient checks in double precision: every layer, the
// MRF module, both U-Nets (width factor 1/16, 16x16 inputs) and the combined
// two-stage loss. One line per item with the worst error over the seeds.
std::vector<OracleLine> gradient_suite(const std::vector<std::uint64_t>& seeds,
                                       double tolerance = 1e-4);
std::vector<OracleLine> physics_suite(double cell_size = 0.01);
std::vector<OracleLine> metric_suite();

// ---- entry point -------------------------------------------------------------

// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gprinv::cli
