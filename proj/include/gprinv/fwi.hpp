#pragma once

// Simulated-annealing full-waveform inversion: searches object parameters,
// running the FDTD forward model once per iteration, to minimize the misfit
// between an observed and a synthetic B-scan.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gprinv/fdtd.hpp"
#include "gprinv/grid.hpp"
#include "gprinv/scene.hpp"

namespace gprinv::fwi {

enum class SoilModel { Homogeneous, TrueField };

const char* to_string(SoilModel m) noexcept;
SoilModel soil_model_from_string(const std::string& s);

// Everything the forward model needs besides the objects.
class ForwardModel {
 public:
  // Homogeneous uses the material-count-weighted Peplinski mean of `soil`;
  // TrueField regenerates the fractal field from field_seed.
  ForwardModel(const fdtd::SimProfile& sim, const scene::SoilSpec& soil, std::uint64_t field_seed,
               SoilModel model, double object_sigma = 0.0);

  // Mean-subtracted B-scan traces of the soil with these objects.
  Image simulate(const std::vector<scene::ObjectSpec>& objects) const;
  scene::Scenario scenario(const std::vector<scene::ObjectSpec>& objects) const;
  const fdtd::SimProfile& sim() const noexcept { return sim_; }

 private:
  fdtd::SimProfile sim_;
  scene::SoilSpec soil_;
  std::uint64_t field_seed_;
  scene::MaterialField field_;
  scene::EmbedOptions embed_;
};

// MSE over all trace samples. ShapeMismatch if the scans differ in shape.
double objective(const Image& observed, const std::vector<scene::ObjectSpec>& objects,
                 const ForwardModel& model);

// Metropolis rule: accept downhill, else accept iff u < exp(-delta / T).
bool anneal_accept(double delta, double temperature, double u);

// ---- parameterization -----------------------------------------------------

// Per object, in order: center_x, center_y, size, length, orientation_deg, eps_r.
inline constexpr std::size_t kParamsPerObject = 6;

// Bounds for one shape derived from the sampling ranges. Parameters a shape
// does not use (length of non-rectangles, orientation of circles) get a
// zero-width interval.
std::vector<scene::Interval> shape_bounds(scene::Shape shape, const scene::ObjectSamplingRanges& r);

std::vector<double> pack(const std::vector<scene::ObjectSpec>& objects);
// Writes the vector back into objects (shapes unchanged).
void unpack(const std::vector<double>& params, std::vector<scene::ObjectSpec>& objects);
// Clips every parameter of every object into its shape's bounds.
void clip_to_bounds(std::vector<scene::ObjectSpec>& objects, const scene::ObjectSamplingRanges& r);

// ---- annealing ------------------------------------------------------------

struct AnnealSchedule {
  double t0 = 0.0;  // 0 = t0_factor * initial objective
  double t0_factor = 0.1;
  double gamma = 0.95;
  // Proposal standard deviation as a fraction of each parameter's bound width.
  double proposal_fraction = 0.05;
  // Perturb one randomly chosen free parameter per proposal instead of all.
  bool single_parameter = false;
  std::size_t max_iters = 200;
  std::size_t stall_limit = 50;
  double target_objective = 1e-12;
  // Off: shape codes stay fixed. On: each proposal resamples one object's
  // shape with probability shape_resample_prob.
  bool search_shapes = false;
  double shape_resample_prob = 0.1;

  // InvalidConfig on a violated invariant.
  void validate() const;
};

struct TraceRow {
  std::size_t iteration = 0;  // 0 = the starting state
  double objective = 0.0;  // of this iteration's proposal
  double temperature = 0.0;
  bool accepted = false;
};

struct FwiResult {
  std::vector<scene::ObjectSpec> best;
  double best_objective = 0.0;
  double initial_objective = 0.0;
  std::size_t iterations = 0;  // forward simulations after the start
  std::vector<TraceRow> trace;
  std::size_t uphill_accepted = 0;
  bool improved = false;  // false: NoProgress (best never beat the start)
  std::string stop_reason;  // target, stall, max_iters
  scene::PermittivityMap map;
};

// Single chain from `start` (clipped into bounds). Terminates at the end of
// an iteration once the best objective reaches target_objective, after
// stall_limit iterations without improvement, or at max_iters.
FwiResult invert(const Image& observed, const std::vector<scene::ObjectSpec>& start,
                 const ForwardModel& model, const scene::ObjectSamplingRanges& ranges,
                 const AnnealSchedule& schedule, std::uint64_t seed);

// "iteration,objective,temperature,accepted".
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

}  // namespace gprinv::fwi
