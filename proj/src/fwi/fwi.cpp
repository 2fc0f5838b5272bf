#include "gprinv/fwi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "gprinv/dataset.hpp"
#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"

namespace gprinv::fwi {

namespace {

using scene::Interval;
using scene::ObjectSpec;
using scene::Shape;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

bool inside(const std::vector<ObjectSpec>& objects, const fdtd::GridSpec& g) {
  try {
    for (const auto& o : objects) scene::check_inside(o, g.soil_width, g.soil_depth);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ObjectOutOfBounds) return false;
    throw;
  }
  return true;
}

double& slot(ObjectSpec& o, std::size_t k) {
  switch (k) {
    case 0: return o.center_x;
    case 1: return o.center_y;
    case 2: return o.size;
    case 3: return o.length;
    case 4: return o.orientation_deg;
    default: return o.eps_r;
  }
}

// Moves a freshly resampled shape's parameters into its own bounds.
void adopt_shape(ObjectSpec& o, Shape s, const scene::ObjectSamplingRanges& r) {
  o.shape = s;
  const auto b = shape_bounds(s, r);
  if (s == Shape::Rectangle && o.length == 0.0) o.length = 0.5 * (b[3].lo + b[3].hi);
  for (std::size_t k = 0; k < kParamsPerObject; ++k) slot(o, k) = std::clamp(slot(o, k), b[k].lo, b[k].hi);
}

}  // namespace

const char* to_string(SoilModel m) noexcept {
  return m == SoilModel::Homogeneous ? "homogeneous" : "true";
}

SoilModel soil_model_from_string(const std::string& s) {
  if (s == "homogeneous") return SoilModel::Homogeneous;
  if (s == "true") return SoilModel::TrueField;
  fail(ErrorCode::InvalidConfig, "unknown soil model '" + s + "' (homogeneous, true)");
}

ForwardModel::ForwardModel(const fdtd::SimProfile& sim, const scene::SoilSpec& soil,
                           std::uint64_t field_seed, SoilModel model, double object_sigma)
    : sim_(sim), soil_(soil), field_seed_(field_seed) {
  sim_.grid.validate();
  const auto& g = sim_.grid;
  const double f = sim_.source.center_frequency;
  field_ = model == SoilModel::TrueField
               ? scene::make_soil_field(soil, g.soil_rows(), g.cols(), g.cell_size, f, field_seed)
               : scene::uniform_field(g.soil_rows(), g.cols(), g.cell_size,
                                      scene::mean_soil_material(soil, f));
  embed_.air_height = g.air_height;
  embed_.object_sigma = object_sigma;
}

Image ForwardModel::simulate(const std::vector<ObjectSpec>& objects) const {
  const auto materials = scene::embed_objects(field_, objects, embed_);
  return dataset::mean_subtract(fdtd::run_bscan(materials, sim_.grid, sim_.source, sim_.scan).traces);
}

scene::Scenario ForwardModel::scenario(const std::vector<ObjectSpec>& objects) const {
  scene::Scenario sc;
  sc.soil = soil_;
  sc.field_seed = field_seed_;
  sc.objects = objects;
  sc.domain_width = sim_.grid.soil_width;
  sc.domain_depth = sim_.grid.soil_depth;
  sc.cell_size = sim_.grid.cell_size;
  return sc;
}

double objective(const Image& observed, const std::vector<ObjectSpec>& objects,
                 const ForwardModel& model) {
  const Image synth = model.simulate(objects);
  if (!synth.same_shape(observed)) {
    fail(ErrorCode::ShapeMismatch, "observed B-scan is " + std::to_string(observed.rows()) + "x" +
                                       std::to_string(observed.cols()) + ", forward model gives " +
                                       std::to_string(synth.rows()) + "x" +
                                       std::to_string(synth.cols()));
  }
  double s = 0;
  for (std::size_t i = 0; i < synth.size(); ++i) {
    const double d = synth.storage()[i] - observed.storage()[i];
    s += d * d;
  }
  return s / static_cast<double>(synth.size());
}

bool anneal_accept(double delta, double temperature, double u) {
  if (delta <= 0.0) return true;
  return u < std::exp(-delta / temperature);
}

std::vector<Interval> shape_bounds(Shape shape, const scene::ObjectSamplingRanges& r) {
  std::vector<Interval> b(kParamsPerObject);
  if (shape == Shape::Rectangle) {
    // Centers implied by the anchor (left-bottom vertex) ranges.
    b[0] = {r.rect_anchor_x.lo + r.rect_width.lo / 2, r.rect_anchor_x.hi + r.rect_width.hi / 2};
    b[1] = {r.rect_anchor_y.lo + r.rect_length.lo / 2, r.rect_anchor_y.hi + r.rect_length.hi / 2};
    b[2] = r.rect_width;
    b[3] = r.rect_length;
  } else if (shape == Shape::RasterMask) {
    fail(ErrorCode::InvalidConfig, "raster-mask objects cannot be inverted");
  } else {
    b[0] = r.center_x;
    b[1] = r.center_y;
    b[2] = r.radius;
    b[3] = {0.0, 0.0};
  }
  b[4] = shape == Shape::Circle ? Interval{0.0, 0.0} : r.orientation_deg;
  b[5] = r.eps_r;
  return b;
}

std::vector<double> pack(const std::vector<ObjectSpec>& objects) {
  std::vector<double> p;
  for (auto o : objects) {
    for (std::size_t k = 0; k < kParamsPerObject; ++k) p.push_back(slot(o, k));
  }
  return p;
}

void unpack(const std::vector<double>& params, std::vector<ObjectSpec>& objects) {
  if (params.size() != objects.size() * kParamsPerObject) {
    fail(ErrorCode::ShapeMismatch, "parameter vector does not match the object count");
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    for (std::size_t k = 0; k < kParamsPerObject; ++k) {
      slot(objects[i], k) = params[i * kParamsPerObject + k];
    }
  }
}

void clip_to_bounds(std::vector<ObjectSpec>& objects, const scene::ObjectSamplingRanges& r) {
  for (auto& o : objects) {
    const auto b = shape_bounds(o.shape, r);
    for (std::size_t k = 0; k < kParamsPerObject; ++k) {
      slot(o, k) = std::clamp(slot(o, k), b[k].lo, b[k].hi);
    }
  }
}

void AnnealSchedule::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::InvalidConfig, "anneal schedule: " + m); };
  if (!(t0 >= 0.0) || !std::isfinite(t0)) bad("t0 must be >= 0 (0 = automatic)");
  if (t0 == 0.0 && !(t0_factor > 0.0)) bad("t0_factor must be > 0");
  if (!(gamma > 0.0 && gamma < 1.0)) bad("gamma must lie in (0, 1)");
  if (!(proposal_fraction > 0.0)) bad("proposal_fraction must be > 0");
  if (max_iters == 0) bad("max_iters must be >= 1");
  if (stall_limit == 0) bad("stall_limit must be >= 1");
  if (!(target_objective >= 0.0)) bad("target_objective must be >= 0");
  if (!(shape_resample_prob >= 0.0 && shape_resample_prob <= 1.0)) {
    bad("shape_resample_prob must lie in [0, 1]");
  }
}

FwiResult invert(const Image& observed, const std::vector<ObjectSpec>& start,
                 const ForwardModel& model, const scene::ObjectSamplingRanges& ranges,
                 const AnnealSchedule& schedule, std::uint64_t seed) {
  schedule.validate();
  if (start.empty() || start.size() > 2) {
    fail(ErrorCode::InvalidConfig, "inversion handles one or two objects");
  }
  ranges.validate();
  const auto& grid = model.sim().grid;

  std::vector<ObjectSpec> current = start;
  clip_to_bounds(current, ranges);
  if (!inside(current, grid)) {
    fail(ErrorCode::ObjectOutOfBounds, "starting objects leave the soil domain");
  }
  double current_obj = objective(observed, current, model);

  FwiResult res;
  res.best = current;
  res.best_objective = current_obj;
  res.initial_objective = current_obj;
  const double t0 = schedule.t0 > 0.0
                        ? schedule.t0
                        : std::max(schedule.t0_factor * current_obj, std::numeric_limits<double>::min());
  res.trace.push_back({0, current_obj, t0, true});

  std::mt19937_64 rng(derive_seed(seed, "fwi", 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t stall = 0;
  double temperature = t0;
  for (std::size_t it = 1; it <= schedule.max_iters; ++it) {
    std::vector<ObjectSpec> proposal;
    // Redraw proposals that leave the domain; they cost no simulation.
    for (int attempt = 0;; ++attempt) {
      proposal = current;
      if (schedule.search_shapes && uniform01(rng) < schedule.shape_resample_prob) {
        auto& o = proposal[rng() % proposal.size()];
        adopt_shape(o, ranges.shapes[rng() % ranges.shapes.size()], ranges);
      }
      std::vector<std::pair<std::size_t, std::size_t>> free;
      for (std::size_t i = 0; i < proposal.size(); ++i) {
        const auto b = shape_bounds(proposal[i].shape, ranges);
        for (std::size_t k = 0; k < kParamsPerObject; ++k) {
          if (b[k].hi > b[k].lo) free.emplace_back(i, k);
        }
      }
      if (schedule.single_parameter && !free.empty()) {
        const auto pick = free[rng() % free.size()];
        free = {pick};
      }
      for (const auto& [i, k] : free) {
        const auto b = shape_bounds(proposal[i].shape, ranges)[k];
        const double step = normal(rng) * schedule.proposal_fraction * (b.hi - b.lo);
        slot(proposal[i], k) = std::clamp(slot(proposal[i], k) + step, b.lo, b.hi);
      }
      if (inside(proposal, grid)) break;
      if (attempt == 100) fail(ErrorCode::ObjectOutOfBounds, "no in-domain proposal after 100 draws");
    }

    const double obj = objective(observed, proposal, model);
    const double delta = obj - current_obj;
    const bool accept = anneal_accept(delta, temperature, uniform01(rng));
    if (accept) {
      if (delta > 0.0) ++res.uphill_accepted;
      current = std::move(proposal);
      current_obj = obj;
    }
    res.trace.push_back({it, obj, temperature, accept});
    res.iterations = it;
    if (current_obj < res.best_objective) {
      res.best = current;
      res.best_objective = current_obj;
      res.improved = true;
      stall = 0;
    } else {
      ++stall;
    }
    temperature *= schedule.gamma;

    if (res.best_objective <= schedule.target_objective) {
      res.stop_reason = "target";
      break;
    }
    if (stall >= schedule.stall_limit) {
      res.stop_reason = "stall";
      break;
    }
  }
  if (res.stop_reason.empty()) res.stop_reason = "max_iters";
  res.map = scene::rasterize_scene(model.scenario(res.best));
  return res;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << "iteration,objective,temperature,accepted\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%d\n", r.iteration, r.objective, r.temperature,
                  r.accepted ? 1 : 0);
    out << buf;
  }
  if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

}  // namespace gprinv::fwi
