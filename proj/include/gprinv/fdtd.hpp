#pragma once

// 2D TMz finite-difference time-domain solver (Ez, Hx, Hy on a Yee grid)
// with a CPML absorbing boundary, plus A-scan / common-offset B-scan drivers.
//
// Grid coordinates follow scene::MaterialGrid: row 0 is the top of the air
// layer, the soil surface sits between rows air_rows-1 and air_rows, and x
// grows with the column index. Ez(r, c) lives at the center of material cell
// (r, c).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "gprinv/grid.hpp"
#include "gprinv/scene.hpp"

namespace gprinv::fdtd {

inline constexpr double kC0 = 299792458.0;
inline constexpr double kMu0 = 1.25663706212e-6;
inline constexpr double kEps0 = 1.0 / (kMu0 * kC0 * kC0);

// safety * cell_size / (c * sqrt(2)). Throws InvalidRange unless 0 < safety <= 1.
double courant_dt(double cell_size, double safety);

// gprMax "gaussian": amplitude * exp(-2 pi^2 fc^2 (t - 1/fc)^2).
double gaussian_waveform(double t, double fc, double amplitude);

struct GridSpec {
  double cell_size = 0.0025;
  double soil_width = 1.5;
  double soil_depth = 0.5;
  double air_height = 0.2;
  int pml_cells = 10;
  double dt = 0.0;  // 0 selects courant_dt(cell_size, 0.99)
  double time_window = 20e-9;
  std::size_t trace_length = 512;

  double resolved_dt() const;
  std::size_t steps() const;  // ceil(time_window / dt)
  std::size_t soil_rows() const;
  std::size_t air_rows() const;
  std::size_t cols() const;
  void validate() const;

  static GridSpec paper();
  static GridSpec desk();
};

enum class Waveform { Gaussian };

struct SourceSpec {
  Waveform waveform = Waveform::Gaussian;
  double amplitude = 1.0;  // A
  double center_frequency = 1e9;
  // Offsets of TX and RX from the nominal trace position (the antenna
  // midpoint for the default symmetric layout).
  double tx_offset_x = -0.1;
  double rx_offset_x = 0.1;
  double elevation = 0.1;  // m above the soil surface

  double current(double t) const;
  void validate() const;

  static SourceSpec paper();
  static SourceSpec desk();
};

struct GridPoint {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct AScan {
  std::vector<double> samples;  // V/m, sample k at t = k * dt_out
  double dt_out = 0.0;
};

struct BScan {
  Image traces;  // [time_samples x positions]
  double scan_step = 0.0;
  double first_position = 0.0;  // x of trace 0's nominal position, m

  friend bool operator==(const BScan&, const BScan&) = default;
};

// Called as (position index, completed steps) at a coarse stride.
using ProgressFn = std::function<void(std::size_t, std::size_t)>;

// Field state for one simulation. Owns its arrays exclusively; not shared
// across threads.
class Simulation {
 public:
  Simulation(const scene::MaterialGrid& materials, const GridSpec& grid);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double dt() const noexcept { return dt_; }
  std::size_t steps_taken() const noexcept { return steps_; }

  // Advances H by half a step and E by a full step (no source).
  void step();
  // Soft line source: subtracts Cb * current / h^2 from Ez at p. Call right
  // after step() with the current at the half step just passed.
  void inject(GridPoint p, double current);

  double ez(GridPoint p) const;
  // Electromagnetic energy per unit length inside the non-PML region.
  double interior_energy() const;
  double max_abs_ez() const;
  // Field scale for the instability guard: the Ez jump a unit current
  // produces in one step at p.
  double injection_gain(GridPoint p) const;

 private:
  std::size_t index(GridPoint p) const;

  std::size_t rows_ = 0, cols_ = 0;  // interior
  std::size_t nr_ = 0, nc_ = 0;      // with PML
  std::size_t pml_ = 0;
  double h_ = 0.0, dt_ = 0.0, db_ = 0.0;
  std::size_t steps_ = 0;
  std::vector<double> ez_, hx_, hy_, ca_, cb_;
  std::vector<double> psi_ezx_, psi_ezy_, psi_hx_, psi_hy_;
  // CPML coefficients along x (per column) and y (per row) for E nodes and
  // the H half-nodes after them.
  std::vector<double> bx_e_, ax_e_, bx_h_, ax_h_, by_e_, ay_e_, by_h_, ay_h_;
  std::vector<std::size_t> pml_cols_e_, pml_cols_h_, pml_rows_e_, pml_rows_h_;
};

// Grid point at horizontal position x (m from the soil's left edge) and the
// given elevation above the soil surface. Throws OutOfRange outside the
// interior.
GridPoint antenna_point(const GridSpec& grid, double x, double elevation);

// One trace: TX driven with the source waveform, Ez recorded at RX and
// linearly resampled to grid.trace_length samples over the time window.
// Throws Instability if the field blows up or turns non-finite.
AScan run_ascan(const scene::MaterialGrid& materials, GridPoint tx, GridPoint rx,
                const GridSpec& grid, const SourceSpec& source, const ProgressFn& progress = {},
                std::size_t position_index = 0);

struct ScanSpec {
  double step = 0.025;
  double span = 1.0;

  std::size_t positions() const;  // floor(span / step) + 1
  double first_position(double soil_width) const;  // centered scan
  void validate() const;
};

struct BScanOptions {
  std::size_t workers = 1;
  ProgressFn progress;
};

BScan run_bscan(const scene::MaterialGrid& materials, const GridSpec& grid,
                const SourceSpec& source, const ScanSpec& scan, const BScanOptions& options = {});

// Builds the material grid for the scenario at the source center frequency.
BScan run_bscan(const scene::Scenario& scenario, const GridSpec& grid, const SourceSpec& source,
                const ScanSpec& scan, const BScanOptions& options = {});

// Everything needed to simulate one B-scan for a scenario.
struct SimProfile {
  GridSpec grid;
  SourceSpec source;
  ScanSpec scan;

  static SimProfile paper();
  static SimProfile desk();
};

}  // namespace gprinv::fdtd
