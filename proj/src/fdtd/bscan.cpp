#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <string>
#include <thread>

#include "gprinv/error.hpp"
#include "gprinv/fdtd.hpp"

namespace gprinv::fdtd {

namespace {

// Guard: fields beyond 1e6 times what the peak current injects in a single
// step mean the update has gone unstable.
constexpr double kBlowUpFactor = 1e6;
constexpr std::size_t kGuardStride = 64;

std::vector<double> resample(const std::vector<double>& raw, double dt, double window,
                             std::size_t n_out) {
  std::vector<double> out(n_out);
  const double dt_out = window / static_cast<double>(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double pos = static_cast<double>(k) * dt_out / dt;
    const auto i0 = std::min(static_cast<std::size_t>(pos), raw.size() - 2);
    const double w = pos - static_cast<double>(i0);
    out[k] = (1.0 - w) * raw[i0] + w * raw[i0 + 1];
  }
  return out;
}

}  // namespace

GridPoint antenna_point(const GridSpec& grid, double x, double elevation) {
  const double h = grid.cell_size;
  if (!(x >= 0.0 && x < static_cast<double>(grid.cols()) * h)) {
    fail(ErrorCode::OutOfRange, "antenna x = " + std::to_string(x) + " m outside the grid interior");
  }
  const auto above = static_cast<std::size_t>(std::floor(elevation / h + 1e-9));
  if (above + 1 > grid.air_rows()) {
    fail(ErrorCode::OutOfRange, "antenna elevation does not fit in the air layer");
  }
  GridPoint p;
  p.row = grid.air_rows() - 1 - above;
  p.col = static_cast<std::size_t>(std::floor(x / h + 1e-9));
  return p;
}

AScan run_ascan(const scene::MaterialGrid& materials, GridPoint tx, GridPoint rx,
                const GridSpec& grid, const SourceSpec& source, const ProgressFn& progress,
                std::size_t position_index) {
  source.validate();
  Simulation sim(materials, grid);
  const std::size_t n_steps = grid.steps();
  const double dt = sim.dt();
  const double limit = kBlowUpFactor * sim.injection_gain(tx) * source.amplitude;

  std::vector<double> raw(n_steps + 1, 0.0);
  raw[0] = sim.ez(rx);
  for (std::size_t n = 0; n < n_steps; ++n) {
    sim.step();
    sim.inject(tx, source.current((static_cast<double>(n) + 0.5) * dt));
    raw[n + 1] = sim.ez(rx);
    if ((n + 1) % kGuardStride == 0 || n + 1 == n_steps) {
      const double m = sim.max_abs_ez();
      if (!(m <= limit)) {
        fail(ErrorCode::Instability, "field magnitude " + std::to_string(m) + " exceeds " +
                                         std::to_string(limit) + " V/m at step " +
                                         std::to_string(n + 1) + " (check Courant/PML settings)");
      }
      if (progress) progress(position_index, n + 1);
    }
  }
  AScan a;
  a.samples = resample(raw, dt, grid.time_window, grid.trace_length);
  a.dt_out = grid.time_window / static_cast<double>(grid.trace_length);
  return a;
}

std::size_t ScanSpec::positions() const {
  return static_cast<std::size_t>(std::floor(span / step + 1e-9)) + 1;
}

double ScanSpec::first_position(double soil_width) const { return (soil_width - span) / 2.0; }

void ScanSpec::validate() const {
  if (!(step > 0.0)) fail(ErrorCode::InvalidRange, "scan step must be positive");
  if (!(span >= 0.0)) fail(ErrorCode::InvalidRange, "scan span must be >= 0");
}

BScan run_bscan(const scene::MaterialGrid& materials, const GridSpec& grid,
                const SourceSpec& source, const ScanSpec& scan, const BScanOptions& options) {
  grid.validate();
  source.validate();
  scan.validate();
  const std::size_t n_pos = scan.positions();
  const double first = scan.first_position(grid.soil_width);

  std::vector<GridPoint> tx(n_pos), rx(n_pos);
  for (std::size_t k = 0; k < n_pos; ++k) {
    const double p = first + static_cast<double>(k) * scan.step;
    tx[k] = antenna_point(grid, p + source.tx_offset_x, source.elevation);
    rx[k] = antenna_point(grid, p + source.rx_offset_x, source.elevation);
  }

  BScan out;
  out.traces = Image(grid.trace_length, n_pos, 0.0);
  out.scan_step = scan.step;
  out.first_position = first;

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_pos);
  auto worker = [&] {
    for (std::size_t k = next++; k < n_pos; k = next++) {
      try {
        const AScan a = run_ascan(materials, tx[k], rx[k], grid, source, options.progress, k);
        for (std::size_t t = 0; t < a.samples.size(); ++t) out.traces(t, k) = a.samples[t];
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(options.workers, 1, n_pos);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t k = 0; k < n_pos; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const Error& e) {
      fail(e.code(), "trace " + std::to_string(k) + ": " + e.what());
    } catch (...) {
      throw;
    }
  }
  return out;
}

BScan run_bscan(const scene::Scenario& scenario, const GridSpec& grid, const SourceSpec& source,
                const ScanSpec& scan, const BScanOptions& options) {
  if (std::abs(scenario.cell_size - grid.cell_size) > 1e-12 ||
      std::abs(scenario.domain_width - grid.soil_width) > 1e-9 ||
      std::abs(scenario.domain_depth - grid.soil_depth) > 1e-9) {
    fail(ErrorCode::ShapeMismatch, "scenario geometry does not match GridSpec");
  }
  scene::EmbedOptions embed;
  embed.air_height = grid.air_height;
  const auto materials = scene::build_material_grid(scenario, source.center_frequency, embed);
  return run_bscan(materials, grid, source, scan, options);
}

SimProfile SimProfile::paper() {
  SimProfile p;
  p.grid = GridSpec::paper();
  p.source = SourceSpec::paper();
  p.scan = ScanSpec{0.025, 1.0};
  return p;
}

SimProfile SimProfile::desk() {
  SimProfile p;
  p.grid = GridSpec::desk();
  p.source = SourceSpec::desk();
  p.scan = ScanSpec{0.025, 0.5};
  return p;
}

}  // namespace gprinv::fdtd
