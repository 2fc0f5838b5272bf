#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gprinv/error.hpp"
#include "gprinv/fdtd.hpp"

namespace gprinv::fdtd {

namespace {

constexpr double kPmlOrder = 3.0;
constexpr double kPmlAlphaMax = 0.05;  // S/m, complex frequency shift at the interface
constexpr double kEta0 = kMu0 * kC0;

struct CpmlCoeff {
  double b = 0.0;
  double a = 0.0;
};

// rho in [0, 1]: depth into the layer as a fraction of its thickness.
CpmlCoeff cpml_coeff(double rho, double h, double dt) {
  if (rho <= 0.0) return {};
  const double sigma_max = 0.8 * (kPmlOrder + 1.0) / (kEta0 * h);
  const double sigma = sigma_max * std::pow(rho, kPmlOrder);
  const double alpha = kPmlAlphaMax * (1.0 - rho);
  CpmlCoeff k;
  k.b = std::exp(-(sigma + alpha) * dt / kEps0);
  k.a = sigma / (sigma + alpha) * (k.b - 1.0);
  return k;
}

// Depth fraction of position x (in cell units along an axis of n_total
// nodes with `pml` layer cells on each side).
double pml_depth(double x, std::size_t n_total, std::size_t pml) {
  const double lo = static_cast<double>(pml);
  const double hi = static_cast<double>(n_total - 1 - pml);
  double d = 0.0;
  if (x < lo) d = lo - x;
  if (x > hi) d = x - hi;
  return d / static_cast<double>(pml);
}

}  // namespace

double courant_dt(double cell_size, double safety) {
  if (!(safety > 0.0 && safety <= 1.0)) fail(ErrorCode::InvalidRange, "courant safety must be in (0, 1]");
  if (!(cell_size > 0.0)) fail(ErrorCode::InvalidRange, "cell_size must be positive");
  return safety * cell_size / (kC0 * std::numbers::sqrt2);
}

double gaussian_waveform(double t, double fc, double amplitude) {
  const double zeta = 2.0 * std::numbers::pi * std::numbers::pi * fc * fc;
  const double chi = 1.0 / fc;
  return amplitude * std::exp(-zeta * (t - chi) * (t - chi));
}

double GridSpec::resolved_dt() const { return dt > 0.0 ? dt : courant_dt(cell_size, 0.99); }

std::size_t GridSpec::steps() const {
  return static_cast<std::size_t>(std::ceil(time_window / resolved_dt() - 1e-9));
}

std::size_t GridSpec::soil_rows() const {
  return static_cast<std::size_t>(std::llround(soil_depth / cell_size));
}

std::size_t GridSpec::air_rows() const {
  return static_cast<std::size_t>(std::llround(air_height / cell_size));
}

std::size_t GridSpec::cols() const {
  return static_cast<std::size_t>(std::llround(soil_width / cell_size));
}

void GridSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidRange, "GridSpec: " + what); };
  if (!(cell_size > 0.0)) bad("cell_size must be positive");
  if (!(soil_width > 0.0) || !(soil_depth > 0.0) || !(air_height >= 0.0)) bad("extents must be positive");
  if (pml_cells < 8) bad("pml_cells must be >= 8");
  if (dt < 0.0) bad("dt must be >= 0");
  if (dt > courant_dt(cell_size, 1.0) * (1.0 + 1e-12)) bad("dt exceeds the 2D Courant bound");
  if (!(time_window > 0.0)) bad("time_window must be positive");
  if (trace_length < 2) bad("trace_length must be >= 2");
  if (cols() == 0 || soil_rows() == 0) bad("grid is empty");
}

GridSpec GridSpec::paper() { return GridSpec{}; }

GridSpec GridSpec::desk() {
  GridSpec g;
  g.cell_size = 0.01;
  g.soil_width = 0.75;
  g.soil_depth = 0.3;
  g.time_window = 10e-9;
  return g;
}

double SourceSpec::current(double t) const {
  return gaussian_waveform(t, center_frequency, amplitude);
}

void SourceSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidRange, "SourceSpec: " + what); };
  if (!(amplitude > 0.0)) bad("amplitude must be positive");
  if (!(center_frequency > 0.0)) bad("center_frequency must be positive");
  if (rx_offset_x < tx_offset_x) bad("rx_offset_x must be >= tx_offset_x");
  if (!(elevation >= 0.0)) bad("elevation must be >= 0");
}

SourceSpec SourceSpec::paper() { return SourceSpec{}; }

SourceSpec SourceSpec::desk() {
  SourceSpec s;
  s.tx_offset_x = -0.05;
  s.rx_offset_x = 0.05;
  return s;
}

Simulation::Simulation(const scene::MaterialGrid& materials, const GridSpec& grid) {
  grid.validate();
  if (std::abs(materials.cell_size - grid.cell_size) > 1e-12 * grid.cell_size) {
    fail(ErrorCode::ShapeMismatch, "material grid cell size differs from GridSpec");
  }
  if (materials.cols() != grid.cols() || materials.air_rows != grid.air_rows() ||
      materials.rows() != grid.air_rows() + grid.soil_rows()) {
    fail(ErrorCode::ShapeMismatch, "material grid shape does not match GridSpec");
  }
  rows_ = materials.rows();
  cols_ = materials.cols();
  pml_ = static_cast<std::size_t>(grid.pml_cells);
  nr_ = rows_ + 2 * pml_;
  nc_ = cols_ + 2 * pml_;
  h_ = grid.cell_size;
  dt_ = grid.resolved_dt();
  db_ = dt_ / (kMu0 * h_);

  const std::size_t n = nr_ * nc_;
  ez_.assign(n, 0.0);
  hx_.assign(n, 0.0);
  hy_.assign(n, 0.0);
  ca_.assign(n, 0.0);
  cb_.assign(n, 0.0);
  psi_ezx_.assign(n, 0.0);
  psi_ezy_.assign(n, 0.0);
  psi_hx_.assign(n, 0.0);
  psi_hy_.assign(n, 0.0);

  // Materials extend into the PML from the nearest interior cell.
  for (std::size_t j = 0; j < nr_; ++j) {
    const std::size_t r = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(pml_), 0,
                                                     static_cast<std::ptrdiff_t>(rows_) - 1);
    for (std::size_t i = 0; i < nc_; ++i) {
      const std::size_t c = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(pml_), 0,
                                                       static_cast<std::ptrdiff_t>(cols_) - 1);
      const double eps = materials.eps_r(r, c) * kEps0;
      const double sig = materials.sigma(r, c);
      if (!(materials.eps_r(r, c) >= 1.0) || !(sig >= 0.0)) {
        fail(ErrorCode::InvalidRange, "material eps_r must be >= 1 and sigma >= 0");
      }
      const double loss = sig * dt_ / (2.0 * eps);
      ca_[j * nc_ + i] = (1.0 - loss) / (1.0 + loss);
      cb_[j * nc_ + i] = (dt_ / eps) / (1.0 + loss);
    }
  }

  auto fill_axis = [&](std::size_t n_total, std::vector<double>& b_e, std::vector<double>& a_e,
                       std::vector<double>& b_h, std::vector<double>& a_h,
                       std::vector<std::size_t>& list_e, std::vector<std::size_t>& list_h) {
    b_e.assign(n_total, 0.0);
    a_e.assign(n_total, 0.0);
    b_h.assign(n_total, 0.0);
    a_h.assign(n_total, 0.0);
    for (std::size_t k = 0; k < n_total; ++k) {
      const auto ce = cpml_coeff(pml_depth(static_cast<double>(k), n_total, pml_), h_, dt_);
      b_e[k] = ce.b;
      a_e[k] = ce.a;
      // Outermost E nodes are PEC and never updated.
      if (ce.a != 0.0 && k > 0 && k + 1 < n_total) list_e.push_back(k);
      if (k + 1 < n_total) {
        const auto ch = cpml_coeff(pml_depth(static_cast<double>(k) + 0.5, n_total, pml_), h_, dt_);
        b_h[k] = ch.b;
        a_h[k] = ch.a;
        if (ch.a != 0.0) list_h.push_back(k);
      }
    }
  };
  fill_axis(nc_, bx_e_, ax_e_, bx_h_, ax_h_, pml_cols_e_, pml_cols_h_);
  fill_axis(nr_, by_e_, ay_e_, by_h_, ay_h_, pml_rows_e_, pml_rows_h_);
}

void Simulation::step() {
  const std::size_t nc = nc_;
  const double db = db_;
  double* __restrict ez = ez_.data();
  double* __restrict hx = hx_.data();
  double* __restrict hy = hy_.data();

  // H half step. Hx(j, i) sits between Ez(j, i) and Ez(j + 1, i); Hy(j, i)
  // between Ez(j, i) and Ez(j, i + 1).
  for (std::size_t j = 0; j + 1 < nr_; ++j) {
    const double* e0 = ez + j * nc;
    const double* e1 = e0 + nc;
    double* hxr = hx + j * nc;
    for (std::size_t i = 0; i < nc; ++i) hxr[i] -= db * (e1[i] - e0[i]);
  }
  for (std::size_t j = 0; j < nr_; ++j) {
    const double* e0 = ez + j * nc;
    double* hyr = hy + j * nc;
    for (std::size_t i = 0; i + 1 < nc; ++i) hyr[i] += db * (e0[i + 1] - e0[i]);
  }
  for (std::size_t j : pml_rows_h_) {
    const double b = by_h_[j], a = ay_h_[j];
    for (std::size_t i = 0; i < nc; ++i) {
      const std::size_t k = j * nc + i;
      psi_hx_[k] = b * psi_hx_[k] + a * (ez[k + nc] - ez[k]);
      hx[k] -= db * psi_hx_[k];
    }
  }
  for (std::size_t j = 0; j < nr_; ++j) {
    for (std::size_t i : pml_cols_h_) {
      const std::size_t k = j * nc + i;
      psi_hy_[k] = bx_h_[i] * psi_hy_[k] + ax_h_[i] * (ez[k + 1] - ez[k]);
      hy[k] += db * psi_hy_[k];
    }
  }

  // E full step over all non-PEC nodes.
  const double inv_h = 1.0 / h_;
  const double* __restrict ca = ca_.data();
  const double* __restrict cb = cb_.data();
  for (std::size_t j = 1; j + 1 < nr_; ++j) {
    const std::size_t row = j * nc;
    for (std::size_t i = 1; i + 1 < nc; ++i) {
      const std::size_t k = row + i;
      const double curl = (hy[k] - hy[k - 1]) - (hx[k] - hx[k - nc]);
      ez[k] = ca[k] * ez[k] + cb[k] * inv_h * curl;
    }
  }
  for (std::size_t j : pml_rows_e_) {
    const double b = by_e_[j], a = ay_e_[j];
    for (std::size_t i = 1; i + 1 < nc; ++i) {
      const std::size_t k = j * nc + i;
      psi_ezy_[k] = b * psi_ezy_[k] + a * (hx[k] - hx[k - nc]);
      ez[k] -= cb[k] * inv_h * psi_ezy_[k];
    }
  }
  for (std::size_t j = 1; j + 1 < nr_; ++j) {
    for (std::size_t i : pml_cols_e_) {
      const std::size_t k = j * nc + i;
      psi_ezx_[k] = bx_e_[i] * psi_ezx_[k] + ax_e_[i] * (hy[k] - hy[k - 1]);
      ez[k] += cb[k] * inv_h * psi_ezx_[k];
    }
  }
  ++steps_;
}

std::size_t Simulation::index(GridPoint p) const {
  if (p.row >= rows_ || p.col >= cols_) fail(ErrorCode::OutOfRange, "grid point outside the interior");
  return (p.row + pml_) * nc_ + p.col + pml_;
}

void Simulation::inject(GridPoint p, double current) {
  const std::size_t k = index(p);
  ez_[k] -= cb_[k] * current / (h_ * h_);
}

double Simulation::ez(GridPoint p) const { return ez_[index(p)]; }

double Simulation::injection_gain(GridPoint p) const { return cb_[index(p)] / (h_ * h_); }

double Simulation::interior_energy() const {
  double e = 0.0;
  for (std::size_t j = pml_; j < pml_ + rows_; ++j) {
    for (std::size_t i = pml_; i < pml_ + cols_; ++i) {
      const std::size_t k = j * nc_ + i;
      const double eps = dt_ / cb_[k] * 0.5 * (1.0 + ca_[k]);
      e += eps * ez_[k] * ez_[k] + kMu0 * (hx_[k] * hx_[k] + hy_[k] * hy_[k]);
    }
  }
  return 0.5 * e * h_ * h_;
}

double Simulation::max_abs_ez() const {
  double m = 0.0;
  for (double v : ez_) {
    if (!std::isfinite(v)) return v;
    m = std::max(m, std::abs(v));
  }
  return m;
}

}  // namespace gprinv::fdtd
