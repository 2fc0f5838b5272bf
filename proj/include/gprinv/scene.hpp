#pragma once

// Subsurface scene generation: Peplinski soil materials, fractal material
// fields, buried object sampling and ground-truth permittivity rasters.
//
// Coordinates: x runs along the scan line from the left edge of the soil
// domain; y is measured upward from the bottom of the soil domain, so the
// soil surface sits at y = domain_depth. Image rows run top-down (row 0 is
// the cell touching the surface).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gprinv/grid.hpp"

namespace gprinv::scene {

struct SoilSpec {
  double sand_fraction = 0.5;
  double clay_fraction = 0.5;
  double bulk_density = 2.0;       // g/cm^3
  double particle_density = 2.66;  // g/cm^3
  double water_fraction_min = 0.001;
  double water_fraction_max = 0.20;
  int n_materials = 20;
  double fractal_dimension = 1.5;
  std::uint64_t seed = 0;

  // Throws InvalidRange on a violated invariant.
  void validate() const;

  friend bool operator==(const SoilSpec&, const SoilSpec&) = default;
};

struct Material {
  double eps_r = 1.0;
  double sigma = 0.0;  // S/m

  friend bool operator==(const Material&, const Material&) = default;
};

inline constexpr double kPeplinskiMinFrequency = 0.3e9;
inline constexpr double kPeplinskiMaxFrequency = 1.3e9;

// Peplinski semi-empirical soil model (0.3-1.3 GHz form). Returns the
// relaxed relative permittivity (the static real part with the free-water
// relaxation term removed, as gprMax stores it) and the effective
// conductivity. Throws OutOfRange outside the soil's water bounds or the
// model's frequency band.
Material peplinski_material(const SoilSpec& soil, double water_fraction, double frequency);

// Water fractions of the soil's material bins: midpoints of n_materials
// equal-width bins over [water_fraction_min, water_fraction_max].
std::vector<double> water_fraction_bins(const SoilSpec& soil);

// One material per bin, ordered by increasing water fraction.
std::vector<Material> soil_materials(const SoilSpec& soil, double frequency);

// Material-count-weighted mean of soil_materials (the homogeneous stand-in
// used when the true field is unknown).
Material mean_soil_material(const SoilSpec& soil, double frequency);

// Isotropic fractional Brownian field by spectral synthesis (power spectrum
// ~ |k|^-(8 - 2D)), quantized into n_bins equal-population classes.
// Deterministic in all arguments.
Grid2D<std::uint16_t> generate_fractal_field(std::size_t rows, std::size_t cols,
                                             double fractal_dimension, int n_bins,
                                             std::uint64_t seed);

struct MaterialField {
  Grid2D<std::uint16_t> bin_index;
  std::vector<Material> materials;
  double cell_size = 0.0;
};

MaterialField make_soil_field(const SoilSpec& soil, std::size_t rows, std::size_t cols,
                              double cell_size, double frequency, std::uint64_t field_seed);

MaterialField uniform_field(std::size_t rows, std::size_t cols, double cell_size,
                            Material material);

enum class Shape { Circle, SemiCircle, Triangle, Rectangle, RasterMask };

const char* to_string(Shape shape) noexcept;
Shape shape_from_string(const std::string& name);

struct ObjectSpec {
  Shape shape = Shape::Circle;
  double center_x = 0.0;  // m
  double center_y = 0.0;  // m, upward from the bottom of the soil domain
  // Radius (circle, semicircle), vertex-to-center distance (triangle) or
  // width along local x (rectangle).
  double size = 0.0;
  double length = 0.0;  // rectangle extent along local y
  double orientation_deg = 0.0;
  double eps_r = 1.0;
  // RasterMask only: nonzero cells are inside. Row 0 is the top of the mask;
  // the mask is centered on (center_x, center_y) before rotation.
  Grid2D<std::uint8_t> mask;
  double mask_cell_size = 0.0;

  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

// Point membership with rotation about the object center. Boundaries count
// as inside.
bool contains(const ObjectSpec& object, double x, double y);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool holds(double v) const noexcept { return v >= lo && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct ObjectSamplingRanges {
  std::vector<Shape> shapes{Shape::Circle, Shape::SemiCircle, Shape::Triangle, Shape::Rectangle};
  Interval eps_r{2.0, 32.0};
  Interval radius{0.05, 0.08};  // circle/semicircle radius, triangle vertex distance
  Interval center_x{0.25, 1.25};
  Interval center_y{0.25, 0.40};
  Interval rect_anchor_x{0.5, 1.0};  // left-bottom vertex before rotation
  Interval rect_anchor_y{0.25, 0.30};
  Interval rect_width{0.04, 0.06};
  Interval rect_length{0.12, 0.16};
  Interval orientation_deg{0.0, 360.0};

  // Throws InvalidRange if any lo > hi or the shape list is empty.
  void validate() const;

  static ObjectSamplingRanges paper();
  static ObjectSamplingRanges desk();
};

std::vector<ObjectSpec> sample_objects(std::uint64_t rng_seed, int n_objects,
                                       const ObjectSamplingRanges& ranges);

struct Scenario {
  SoilSpec soil;
  std::uint64_t field_seed = 0;
  std::vector<ObjectSpec> objects;
  double domain_width = 1.5;  // m
  double domain_depth = 0.5;  // m
  double cell_size = 0.0025;  // m

  std::size_t cols() const;
  std::size_t rows() const;
  void validate() const;
};

struct PermittivityMap {
  Image values;
  double cell_size = 0.0;
};

// Throws ObjectOutOfBounds if any rotated object leaves the soil domain.
void check_inside(const ObjectSpec& object, double domain_width, double domain_depth);

// Soil 0, object cells their eps_r; later objects overwrite earlier ones.
PermittivityMap rasterize_scene(const Scenario& scenario);

struct MaterialGrid {
  double cell_size = 0.0;
  std::size_t air_rows = 0;  // rows above the soil surface
  Grid2D<double> eps_r;
  Grid2D<double> sigma;
  Grid2D<std::int16_t> object_index;  // -1 where no object covers the cell

  std::size_t rows() const noexcept { return eps_r.rows(); }
  std::size_t cols() const noexcept { return eps_r.cols(); }
};

struct EmbedOptions {
  double air_height = 0.2;    // m of free space above the surface
  double object_sigma = 0.0;  // S/m
};

MaterialGrid embed_objects(const MaterialField& field, std::span<const ObjectSpec> objects,
                           const EmbedOptions& options = {});

// make_soil_field + embed_objects for a whole scenario.
MaterialGrid build_material_grid(const Scenario& scenario, double frequency,
                                 const EmbedOptions& options = {});

// Compact single-line text form used in dataset manifests.
std::string objects_to_string(std::span<const ObjectSpec> objects);
std::vector<ObjectSpec> objects_from_string(const std::string& text);
std::string soil_to_string(const SoilSpec& soil);
SoilSpec soil_from_string(const std::string& text);

}  // namespace gprinv::scene
