#include <algorithm>
#include <cmath>

#include "gprinv/error.hpp"
#include "gprinv/scene.hpp"

namespace gprinv::scene {

namespace {

double bounding_radius(const ObjectSpec& o) {
  switch (o.shape) {
    case Shape::Circle:
    case Shape::SemiCircle:
    case Shape::Triangle:
      return o.size;
    case Shape::Rectangle:
      return std::hypot(o.size, o.length) / 2.0;
    case Shape::RasterMask:
      return std::hypot(static_cast<double>(o.mask.rows()), static_cast<double>(o.mask.cols())) *
             o.mask_cell_size / 2.0;
  }
  return 0.0;
}

// Visits every soil cell (r, c) whose center lies inside the object. Cell
// centers sit at x = (c + 0.5) h and y = (rows - r - 0.5) h.
template <typename Fn>
void for_each_covered_cell(const ObjectSpec& o, std::size_t rows, std::size_t cols, double h,
                           Fn&& fn) {
  const double rad = bounding_radius(o) + h;
  const double depth = static_cast<double>(rows) * h;
  const auto clamp_index = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n)));
  };
  const std::size_t c0 = clamp_index(std::floor((o.center_x - rad) / h), cols);
  const std::size_t c1 = clamp_index(std::ceil((o.center_x + rad) / h) + 1, cols);
  const std::size_t r0 = clamp_index(std::floor((depth - o.center_y - rad) / h), rows);
  const std::size_t r1 = clamp_index(std::ceil((depth - o.center_y + rad) / h) + 1, rows);
  for (std::size_t r = r0; r < r1; ++r) {
    const double y = depth - (static_cast<double>(r) + 0.5) * h;
    for (std::size_t c = c0; c < c1; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * h;
      if (contains(o, x, y)) fn(r, c);
    }
  }
}

}  // namespace

std::size_t Scenario::cols() const {
  return static_cast<std::size_t>(std::llround(domain_width / cell_size));
}

std::size_t Scenario::rows() const {
  return static_cast<std::size_t>(std::llround(domain_depth / cell_size));
}

void Scenario::validate() const {
  soil.validate();
  if (!(cell_size > 0.0) || !(domain_width > 0.0) || !(domain_depth > 0.0)) {
    fail(ErrorCode::InvalidRange, "scenario geometry must be positive");
  }
  if (cols() == 0 || rows() == 0) fail(ErrorCode::InvalidRange, "scenario grid is empty");
  for (const auto& o : objects) {
    check_inside(o, static_cast<double>(cols()) * cell_size, static_cast<double>(rows()) * cell_size);
  }
}

PermittivityMap rasterize_scene(const Scenario& scenario) {
  scenario.validate();
  const std::size_t rows = scenario.rows();
  const std::size_t cols = scenario.cols();
  PermittivityMap map{Image(rows, cols, 0.0), scenario.cell_size};
  for (const auto& o : scenario.objects) {
    for_each_covered_cell(o, rows, cols, scenario.cell_size,
                          [&](std::size_t r, std::size_t c) { map.values(r, c) = o.eps_r; });
  }
  return map;
}

MaterialGrid embed_objects(const MaterialField& field, std::span<const ObjectSpec> objects,
                           const EmbedOptions& options) {
  const std::size_t soil_rows = field.bin_index.rows();
  const std::size_t cols = field.bin_index.cols();
  const double h = field.cell_size;
  if (soil_rows == 0 || cols == 0 || !(h > 0.0)) {
    fail(ErrorCode::InvalidRange, "material field is empty");
  }
  for (const auto& o : objects) {
    check_inside(o, static_cast<double>(cols) * h, static_cast<double>(soil_rows) * h);
  }

  MaterialGrid g;
  g.cell_size = h;
  g.air_rows = static_cast<std::size_t>(std::llround(options.air_height / h));
  const std::size_t rows = g.air_rows + soil_rows;
  g.eps_r = Grid2D<double>(rows, cols, 1.0);
  g.sigma = Grid2D<double>(rows, cols, 0.0);
  g.object_index = Grid2D<std::int16_t>(rows, cols, -1);

  for (std::size_t r = 0; r < soil_rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto bin = field.bin_index(r, c);
      if (bin >= field.materials.size()) {
        fail(ErrorCode::InvalidRange, "material bin index out of range");
      }
      const Material& m = field.materials[bin];
      g.eps_r(g.air_rows + r, c) = m.eps_r;
      g.sigma(g.air_rows + r, c) = m.sigma;
    }
  }
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const auto& o = objects[k];
    for_each_covered_cell(o, soil_rows, cols, h, [&](std::size_t r, std::size_t c) {
      g.eps_r(g.air_rows + r, c) = o.eps_r;
      g.sigma(g.air_rows + r, c) = options.object_sigma;
      g.object_index(g.air_rows + r, c) = static_cast<std::int16_t>(k);
    });
  }
  return g;
}

MaterialGrid build_material_grid(const Scenario& scenario, double frequency,
                                 const EmbedOptions& options) {
  scenario.validate();
  const auto field = make_soil_field(scenario.soil, scenario.rows(), scenario.cols(),
                                     scenario.cell_size, frequency, scenario.field_seed);
  return embed_objects(field, scenario.objects, options);
}

}  // namespace gprinv::scene
