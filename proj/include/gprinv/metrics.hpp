#pragma once

// Image-comparison metrics (SSIM, MSE, MAE, MRE) and per-sample evaluation
// reports over a dataset split.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gprinv/dataset.hpp"
#include "gprinv/dmrf.hpp"
#include "gprinv/grid.hpp"

namespace gprinv::metrics {

class MetricConfig {
 public:
  // InvalidConfig unless R > 0 and finite.
  explicit MetricConfig(double dynamic_range);

  double dynamic_range() const noexcept { return r_; }
  double c1() const noexcept { return (0.01 * r_) * (0.01 * r_); }
  double c2() const noexcept { return (0.03 * r_) * (0.03 * r_); }

  // Denormalized B-scans span [-50, 75] V/m, permittivity maps [0, 32].
  static MetricConfig bscan(const dataset::NormalizationSpec& n = {});
  static MetricConfig permittivity(const dataset::NormalizationSpec& n = {});

 private:
  double r_;
};

// Global-statistics SSIM: means, population variances and covariance over
// the whole image. Symmetric; ssim(y, y) == 1.
double ssim(const Image& y, const Image& y_hat, const MetricConfig& cfg);
// Mean of local SSIM over 11x11 Gaussian windows (sigma 1.5), valid region
// only. ShapeMismatch if a side is below 11.
double ssim_windowed(const Image& y, const Image& y_hat, const MetricConfig& cfg);
double mse(const Image& y, const Image& y_hat);
double mae(const Image& y, const Image& y_hat);
// mean|y - y_hat| / max|y| * 100. ZeroDynamicRange when max|y| == 0.
double mre(const Image& y, const Image& y_hat);

// ---- reports ---------------------------------------------------------------

// Stage 1 = denoised B-scan, stage 2 = permittivity map.
struct SampleMetrics {
  std::string id;
  std::string group;
  double ssim = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> mre_pct;  // absent when max|y| == 0
  int stage = 2;

  friend bool operator==(const SampleMetrics&, const SampleMetrics&) = default;
};

SampleMetrics compare(const std::string& id, const std::string& group, int stage, const Image& y,
                      const Image& y_hat, const MetricConfig& cfg, bool windowed = false);

struct MetricMeans {
  std::size_t count = 0;
  double ssim = 0.0, mse = 0.0, mae = 0.0;
  std::size_t mre_count = 0;
  std::optional<double> mre_pct;
};

inline constexpr const char* kMetricsCsvHeader = "id,group,ssim,mse,mae,mre_pct,stage";

struct MetricsReport {
  std::vector<SampleMetrics> rows;

  // Arithmetic means over the rows of a stage, optionally one group only.
  MetricMeans means(int stage, const std::string& group = "") const;
  std::vector<int> stages() const;
  std::vector<std::string> groups() const;
  // Table of means per stage (all groups, then each group).
  std::string summary() const;

  void write_csv(const std::filesystem::path& path) const;
  static MetricsReport read_csv(const std::filesystem::path& path);
};

// What a model produced for one sample, in physical units.
struct Prediction {
  std::optional<Image> denoised_field;  // V/m
  Image perm_value;
};

using Predictor = std::function<std::vector<Prediction>(
    const std::vector<const dataset::SampleTriplet*>& batch)>;

struct EvaluateOptions {
  std::vector<std::string> groups;  // empty = every group
  bool windowed = false;
  std::size_t batch = 16;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

// Runs the predictor over a split and scores each sample against its
// denormalized ground truth. DataUnavailable if nothing is selected;
// failures carry the sample id.
MetricsReport evaluate_predictions(const dataset::DatasetManifest& manifest,
                                   const std::filesystem::path& root, dataset::Split split,
                                   const Predictor& predict, const EvaluateOptions& opts = {});

MetricsReport evaluate(const dmrf::Checkpoint& ckpt, const dataset::DatasetManifest& manifest,
                       const std::filesystem::path& root, dataset::Split split,
                       const EvaluateOptions& opts = {});

// The ground truth as its own prediction (both stages).
Predictor oracle_predictor(const dataset::NormalizationSpec& norm);

}  // namespace gprinv::metrics
