#include <algorithm>
#include <cmath>

#include "gprinv/dataset.hpp"
#include "gprinv/error.hpp"

namespace gprinv::dataset {

std::vector<double> mean_trace(const Image& bscan) {
  if (bscan.cols() < 2) fail(ErrorCode::TooFewTraces, "mean subtraction needs >= 2 traces");
  std::vector<double> mean(bscan.rows(), 0.0);
  for (std::size_t r = 0; r < bscan.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < bscan.cols(); ++c) s += bscan(r, c);
    mean[r] = s / static_cast<double>(bscan.cols());
  }
  return mean;
}

Image subtract_trace(const Image& bscan, const std::vector<double>& trace) {
  if (trace.size() != bscan.rows()) fail(ErrorCode::ShapeMismatch, "trace length differs from B-scan rows");
  Image out(bscan.rows(), bscan.cols());
  for (std::size_t r = 0; r < bscan.rows(); ++r) {
    for (std::size_t c = 0; c < bscan.cols(); ++c) out(r, c) = bscan(r, c) - trace[r];
  }
  return out;
}

Image mean_subtract(const Image& bscan) { return subtract_trace(bscan, mean_trace(bscan)); }

Image make_denoised_label(const Image& noisy, const Image& soil_only) {
  if (!noisy.same_shape(soil_only)) fail(ErrorCode::ShapeMismatch, "noisy and soil-only B-scans differ in shape");
  Image out(noisy.rows(), noisy.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.storage()[i] = noisy.storage()[i] - soil_only.storage()[i];
  return out;
}

double to_lattice(double v) {
  constexpr double kScale = 4294967296.0;  // 2^32
  return std::nearbyint(v * kScale) / kScale;
}

Image normalize(const Image& img, double lo, double hi) {
  if (lo == hi) fail(ErrorCode::DegenerateRange, "normalization range has lo == hi");
  Image out(img.rows(), img.cols());
  const double span = hi - lo;
  for (std::size_t i = 0; i < img.size(); ++i) {
    out.storage()[i] = std::clamp((img.storage()[i] - lo) / span, 0.0, 1.0);
  }
  return out;
}

Image inverse_normalize(const Image& img01, double lo, double hi) {
  if (lo == hi) fail(ErrorCode::DegenerateRange, "normalization range has lo == hi");
  Image out(img01.rows(), img01.cols());
  for (std::size_t i = 0; i < img01.size(); ++i) out.storage()[i] = lo + img01.storage()[i] * (hi - lo);
  return out;
}

Image resize_bilinear(const Image& img, std::size_t rows, std::size_t cols) {
  if (img.empty()) fail(ErrorCode::InvalidRange, "cannot resize an empty image");
  if (rows == 0 || cols == 0) fail(ErrorCode::InvalidRange, "resize target must be nonempty");
  auto coord = [](std::size_t i, std::size_t n_in, std::size_t n_out) {
    if (n_out == 1) return 0.5 * static_cast<double>(n_in - 1);
    return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };
  auto split = [](double x, std::size_t n_in, std::size_t& i0, std::size_t& i1, double& w) {
    i0 = std::min(static_cast<std::size_t>(x), n_in - 1);
    i1 = std::min(i0 + 1, n_in - 1);
    w = x - static_cast<double>(i0);
  };
  Image out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t r0, r1;
    double wr;
    split(coord(r, img.rows(), rows), img.rows(), r0, r1, wr);
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t c0, c1;
      double wc;
      split(coord(c, img.cols(), cols), img.cols(), c0, c1, wc);
      const double top = img(r0, c0) + wc * (img(r0, c1) - img(r0, c0));
      const double bot = img(r1, c0) + wc * (img(r1, c1) - img(r1, c0));
      out(r, c) = top + wr * (bot - top);
    }
  }
  return out;
}

void NormalizationSpec::validate() const {
  if (!(bscan_lo < bscan_hi)) fail(ErrorCode::DegenerateRange, "bscan normalization needs lo < hi");
  if (!(perm_lo < perm_hi)) fail(ErrorCode::DegenerateRange, "permittivity normalization needs lo < hi");
}

}  // namespace gprinv::dataset
