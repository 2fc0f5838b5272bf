#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>

#include "gprinv/error.hpp"
#include "gprinv/scene.hpp"

namespace gprinv::scene {

namespace {

// FFTW's planner is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
};

// Signed frequency of FFT bin i in cycles per cell.
double bin_frequency(std::size_t i, std::size_t n) {
  const auto si = static_cast<double>(i);
  const auto sn = static_cast<double>(n);
  return (i <= n / 2 ? si : si - sn) / sn;
}

}  // namespace

Grid2D<std::uint16_t> generate_fractal_field(std::size_t rows, std::size_t cols,
                                             double fractal_dimension, int n_bins,
                                             std::uint64_t seed) {
  if (rows == 0 || cols == 0) fail(ErrorCode::InvalidRange, "fractal field shape must be nonempty");
  if (n_bins < 1 || n_bins > 65535) fail(ErrorCode::InvalidRange, "n_bins must be in [1, 65535]");

  Grid2D<std::uint16_t> out(rows, cols, 0);
  if (n_bins == 1) return out;

  const std::size_t n = rows * cols;
  std::unique_ptr<fftw_complex[], FftwFree> spec(fftw_alloc_complex(n));
  if (!spec) fail(ErrorCode::Io, "fftw allocation failed");

  // 2D fBm surface: P(k) ~ k^-beta with beta = 8 - 2D, amplitude k^-beta/2.
  const double beta = 8.0 - 2.0 * fractal_dimension;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double ky = bin_frequency(r, rows);
    for (std::size_t c = 0; c < cols; ++c) {
      const double kx = bin_frequency(c, cols);
      const double re = normal(rng);
      const double im = normal(rng);
      const double k = std::hypot(kx, ky);
      const double amp = k > 0.0 ? std::pow(k, -beta / 2.0) : 0.0;
      spec[r * cols + c][0] = amp * re;
      spec[r * cols + c][1] = amp * im;
    }
  }

  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), spec.get(), spec.get(),
                            FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }

  // Equal-population quantization: rank cells by value (ties by index).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return spec[a][0] < spec[b][0]; });
  auto& cells = out.storage();
  const auto bins = static_cast<std::size_t>(n_bins);
  for (std::size_t rank = 0; rank < n; ++rank) {
    cells[order[rank]] = static_cast<std::uint16_t>(rank * bins / n);
  }
  return out;
}

MaterialField make_soil_field(const SoilSpec& soil, std::size_t rows, std::size_t cols,
                              double cell_size, double frequency, std::uint64_t field_seed) {
  soil.validate();
  MaterialField f;
  f.bin_index = generate_fractal_field(rows, cols, soil.fractal_dimension, soil.n_materials, field_seed);
  f.materials = soil_materials(soil, frequency);
  f.cell_size = cell_size;
  return f;
}

MaterialField uniform_field(std::size_t rows, std::size_t cols, double cell_size,
                            Material material) {
  MaterialField f;
  f.bin_index = Grid2D<std::uint16_t>(rows, cols, 0);
  f.materials = {material};
  f.cell_size = cell_size;
  return f;
}

}  // namespace gprinv::scene
