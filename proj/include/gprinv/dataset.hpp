#pragma once

// (noisy B-scan, denoised B-scan, permittivity map) triplets: preprocessing,
// GPRT tensor files, the text manifest and the dataset builder.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gprinv/fdtd.hpp"
#include "gprinv/grid.hpp"
#include "gprinv/scene.hpp"

namespace gprinv::dataset {

// ---- preprocessing -------------------------------------------------------

// B-scan images are [time x position]. The mean trace is the per-row mean.
std::vector<double> mean_trace(const Image& bscan);
Image subtract_trace(const Image& bscan, const std::vector<double>& trace);
// Throws TooFewTraces for fewer than 2 columns.
Image mean_subtract(const Image& bscan);

// Difference noisy - soil_only. Throws ShapeMismatch.
Image make_denoised_label(const Image& noisy, const Image& soil_only);

// Rounds to the nearest multiple of 2^-32. Field values below 2^20 in
// magnitude then keep every sum and difference of two lattice values exact
// in double precision.
double to_lattice(double v);

// Clamped affine map [lo, hi] -> [0, 1] and its inverse. DegenerateRange if
// lo == hi.
Image normalize(const Image& img, double lo, double hi);
Image inverse_normalize(const Image& img01, double lo, double hi);

// Corner-aligned bilinear resampling (output corners hit input corners).
Image resize_bilinear(const Image& img, std::size_t rows, std::size_t cols);

struct NormalizationSpec {
  double bscan_lo = -50.0;  // V/m
  double bscan_hi = 75.0;
  double perm_lo = 0.0;
  double perm_hi = 32.0;

  void validate() const;
  friend bool operator==(const NormalizationSpec&, const NormalizationSpec&) = default;
};

// ---- GPRT tensor files ---------------------------------------------------
//
// "GPRT", u32 version = 1, u32 rows, u32 cols, u32 channels, then
// rows*cols*channels little-endian float32, channel-major then row-major.

struct Tensor {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t channels = 1;
  std::vector<float> data;

  Image channel(std::size_t c) const;
  static Tensor from_image(const Image& img);
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

void write_gprt(const std::filesystem::path& path, const Tensor& t);
// CorruptFile on bad magic, version, truncated payload or trailing bytes.
Tensor read_gprt(const std::filesystem::path& path);

// Reads an external raw B-scan (V/m, one channel) and applies the dataset
// preprocessing: mean subtraction, normalization, resize.
Image import_bscan(const std::filesystem::path& path, const NormalizationSpec& norm,
                   std::size_t rows, std::size_t cols);

// ---- manifest ------------------------------------------------------------

enum class Split { Train, Test };
const char* to_string(Split s) noexcept;

struct SampleRecord {
  std::string id;
  Split split = Split::Train;
  std::string group;  // zero, one, two-separated, two-interfaced, three
  std::string noisy_path;  // relative to the dataset root
  std::string denoised_path;
  std::string perm_path;
  std::uint64_t field_seed = 0;
  std::vector<scene::ObjectSpec> objects;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

// One "sample" record line (no trailing newline).
std::string manifest_line(const SampleRecord& rec);

struct DatasetManifest {
  int version = 1;
  std::uint64_t master_seed = 0;
  std::string config_hash;
  NormalizationSpec norm;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
  scene::SoilSpec soil;
  double domain_width = 0.0;
  double domain_depth = 0.0;
  double cell_size = 0.0;
  std::vector<SampleRecord> samples;

  const SampleRecord* find(const std::string& id) const;
  std::vector<const SampleRecord*> split(Split s) const;
  scene::Scenario scenario(const SampleRecord& rec) const;

  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline constexpr const char* kManifestName = "manifest.tsv";

struct SampleTriplet {
  Image noisy;
  Image denoised;
  Image perm_map;
  SampleRecord meta;
};

// Loads and validates one sample. MissingId if the id is unknown;
// CorruptFile on header, shape or [0, 1] range violations.
SampleTriplet load_sample(const DatasetManifest& manifest, const std::filesystem::path& root,
                          const std::string& id);

// ---- builder -------------------------------------------------------------

struct DatasetConfig {
  fdtd::SimProfile sim;
  scene::SoilSpec soil;
  scene::ObjectSamplingRanges ranges;
  std::size_t soil_fields = 10;
  std::size_t zero_object = 0;
  std::size_t one_object = 8000;
  std::size_t two_object = 10000;
  std::size_t three_object = 0;
  double test_fraction = 0.1;
  std::size_t image_size = 128;
  NormalizationSpec norm;
  double object_sigma = 0.0;
  std::uint64_t master_seed = 0;

  std::size_t total() const;
  void validate() const;
  // Canonical key = value text; its FNV-1a hash names the configuration.
  std::string describe() const;
  std::string hash() const;

  static DatasetConfig paper();
  static DatasetConfig desk();
};

struct BuildOptions {
  std::size_t workers = 1;
  // Pre-normalization arrays of every freshly simulated sample: noisy and
  // soil-only after mean-trace removal, and the label.
  std::function<void(const SampleRecord&, const Image& noisy, const Image& soil_only,
                     const Image& label)>
      on_sample;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

// Simulates and writes every sample into out_dir (tensors/ + manifest.tsv).
// A partial build with the same configuration hash is resumed: samples
// already recorded with valid files are kept.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir,
                              const BuildOptions& options = {});

// Touching or overlapping rasterized objects (4-neighborhood) on the soil grid.
bool objects_touch(const scene::ObjectSpec& a, const scene::ObjectSpec& b, double width,
                   double depth, double cell_size);

}  // namespace gprinv::dataset
