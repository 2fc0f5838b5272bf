#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include "gprinv/error.hpp"
#include "gprinv/scene.hpp"

namespace gprinv::scene {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Local {
  double x;
  double y;
};

// Point in the object's unrotated frame.
Local to_local(const ObjectSpec& o, double x, double y) {
  const double th = o.orientation_deg * kDeg;
  const double dx = x - o.center_x;
  const double dy = y - o.center_y;
  const double c = std::cos(th);
  const double s = std::sin(th);
  return {c * dx + s * dy, -s * dx + c * dy};
}

Local to_global(const ObjectSpec& o, Local p) {
  const double th = o.orientation_deg * kDeg;
  const double c = std::cos(th);
  const double s = std::sin(th);
  return {o.center_x + c * p.x - s * p.y, o.center_y + s * p.x + c * p.y};
}

std::array<Local, 3> triangle_vertices(double d) {
  std::array<Local, 3> v{};
  const double angles[3] = {90.0, 210.0, 330.0};
  for (int i = 0; i < 3; ++i) v[i] = {d * std::cos(angles[i] * kDeg), d * std::sin(angles[i] * kDeg)};
  return v;
}

double edge_side(Local a, Local b, Local p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* to_string(Shape shape) noexcept {
  switch (shape) {
    case Shape::Circle: return "circle";
    case Shape::SemiCircle: return "semicircle";
    case Shape::Triangle: return "triangle";
    case Shape::Rectangle: return "rectangle";
    case Shape::RasterMask: return "mask";
  }
  return "unknown";
}

Shape shape_from_string(const std::string& name) {
  for (Shape s : {Shape::Circle, Shape::SemiCircle, Shape::Triangle, Shape::Rectangle,
                  Shape::RasterMask}) {
    if (name == to_string(s)) return s;
  }
  fail(ErrorCode::InvalidConfig, "unknown shape '" + name + "'");
}

bool contains(const ObjectSpec& o, double x, double y) {
  const Local p = to_local(o, x, y);
  switch (o.shape) {
    case Shape::Circle:
      return p.x * p.x + p.y * p.y <= o.size * o.size;
    case Shape::SemiCircle:
      return p.y >= 0.0 && p.x * p.x + p.y * p.y <= o.size * o.size;
    case Shape::Triangle: {
      const auto v = triangle_vertices(o.size);
      const double s0 = edge_side(v[0], v[1], p);
      const double s1 = edge_side(v[1], v[2], p);
      const double s2 = edge_side(v[2], v[0], p);
      return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
    }
    case Shape::Rectangle:
      return std::abs(p.x) <= o.size / 2.0 && std::abs(p.y) <= o.length / 2.0;
    case Shape::RasterMask: {
      if (o.mask.empty() || o.mask_cell_size <= 0.0) return false;
      const double half_w = static_cast<double>(o.mask.cols()) * o.mask_cell_size / 2.0;
      const double half_h = static_cast<double>(o.mask.rows()) * o.mask_cell_size / 2.0;
      const double u = (p.x + half_w) / o.mask_cell_size;
      const double v = (half_h - p.y) / o.mask_cell_size;
      if (u < 0.0 || v < 0.0) return false;
      const auto c = static_cast<std::size_t>(u);
      const auto r = static_cast<std::size_t>(v);
      if (c >= o.mask.cols() || r >= o.mask.rows()) return false;
      return o.mask(r, c) != 0;
    }
  }
  return false;
}

void check_inside(const ObjectSpec& o, double domain_width, double domain_depth) {
  std::vector<Local> extreme;
  switch (o.shape) {
    case Shape::Circle:
      extreme = {{o.size, 0}, {-o.size, 0}, {0, o.size}, {0, -o.size}};
      for (auto& p : extreme) p = {o.center_x + p.x, o.center_y + p.y};
      break;
    case Shape::SemiCircle: {
      // Arc endpoints plus any arc point facing a global axis direction.
      std::vector<double> phis{0.0, std::numbers::pi};
      const double th = o.orientation_deg * kDeg;
      for (int k = 0; k < 8; ++k) {
        double phi = std::remainder(k * std::numbers::pi / 2.0 - th, 2.0 * std::numbers::pi);
        if (phi < 0) phi += 2.0 * std::numbers::pi;
        if (phi <= std::numbers::pi) phis.push_back(phi);
      }
      for (double phi : phis) {
        extreme.push_back(to_global(o, {o.size * std::cos(phi), o.size * std::sin(phi)}));
      }
      break;
    }
    case Shape::Triangle:
      for (auto v : triangle_vertices(o.size)) extreme.push_back(to_global(o, v));
      break;
    case Shape::Rectangle:
    case Shape::RasterMask: {
      double hw = o.size / 2.0;
      double hl = o.length / 2.0;
      if (o.shape == Shape::RasterMask) {
        hw = static_cast<double>(o.mask.cols()) * o.mask_cell_size / 2.0;
        hl = static_cast<double>(o.mask.rows()) * o.mask_cell_size / 2.0;
      }
      for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) extreme.push_back(to_global(o, {sx * hw, sy * hl}));
      }
      break;
    }
  }
  constexpr double tol = 1e-9;
  for (const auto& p : extreme) {
    if (p.x < -tol || p.x > domain_width + tol || p.y < -tol || p.y > domain_depth + tol) {
      fail(ErrorCode::ObjectOutOfBounds,
           std::string(to_string(o.shape)) + " at (" + fmt(o.center_x) + ", " + fmt(o.center_y) +
               ") leaves the soil domain");
    }
  }
}

void ObjectSamplingRanges::validate() const {
  if (shapes.empty()) fail(ErrorCode::InvalidRange, "no shapes to sample from");
  const std::pair<const char*, const Interval*> all[] = {
      {"eps_r", &eps_r},           {"radius", &radius},
      {"center_x", &center_x},     {"center_y", &center_y},
      {"rect_anchor_x", &rect_anchor_x}, {"rect_anchor_y", &rect_anchor_y},
      {"rect_width", &rect_width}, {"rect_length", &rect_length},
      {"orientation_deg", &orientation_deg}};
  for (const auto& [name, iv] : all) {
    if (!(iv->lo <= iv->hi)) fail(ErrorCode::InvalidRange, std::string(name) + ": min > max");
  }
}

ObjectSamplingRanges ObjectSamplingRanges::paper() { return {}; }

ObjectSamplingRanges ObjectSamplingRanges::desk() {
  ObjectSamplingRanges r;
  r.radius = {0.03, 0.05};
  r.center_x = {0.15, 0.60};
  r.center_y = {0.10, 0.20};
  r.rect_anchor_x = {0.20, 0.50};
  r.rect_anchor_y = {0.08, 0.12};
  r.rect_width = {0.03, 0.04};
  r.rect_length = {0.06, 0.10};
  return r;
}

std::vector<ObjectSpec> sample_objects(std::uint64_t rng_seed, int n_objects,
                                       const ObjectSamplingRanges& ranges) {
  if (n_objects < 0) fail(ErrorCode::InvalidRange, "n_objects must be >= 0");
  ranges.validate();
  for (Shape s : ranges.shapes) {
    if (s == Shape::RasterMask) {
      fail(ErrorCode::InvalidRange, "raster masks are supplied by the caller, not sampled");
    }
  }
  std::mt19937_64 rng(rng_seed);
  auto draw = [&](const Interval& iv) {
    return std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng);
  };
  // Shapes draw a fixed number of values so streams stay aligned across shapes.
  std::vector<ObjectSpec> out;
  for (int i = 0; i < n_objects; ++i) {
    ObjectSpec o;
    const auto pick = std::uniform_int_distribution<std::size_t>(0, ranges.shapes.size() - 1)(rng);
    o.shape = ranges.shapes[pick];
    o.eps_r = draw(ranges.eps_r);
    const double orient = draw(ranges.orientation_deg);
    if (o.shape == Shape::Rectangle) {
      const double ax = draw(ranges.rect_anchor_x);
      const double ay = draw(ranges.rect_anchor_y);
      o.size = draw(ranges.rect_width);
      o.length = draw(ranges.rect_length);
      o.center_x = ax + o.size / 2.0;
      o.center_y = ay + o.length / 2.0;
    } else {
      o.center_x = draw(ranges.center_x);
      o.center_y = draw(ranges.center_y);
      o.size = draw(ranges.radius);
      (void)draw(ranges.radius);
    }
    o.orientation_deg = o.shape == Shape::Circle ? 0.0 : orient;
    out.push_back(std::move(o));
  }
  return out;
}

std::string objects_to_string(std::span<const ObjectSpec> objects) {
  if (objects.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    if (i) out += ';';
    out += to_string(o.shape);
    out += ':' + fmt(o.center_x) + ',' + fmt(o.center_y) + ',' + fmt(o.size) + ',' +
           fmt(o.length) + ',' + fmt(o.orientation_deg) + ',' + fmt(o.eps_r);
    if (o.shape == Shape::RasterMask) {
      out += ',' + std::to_string(o.mask.rows()) + ',' + std::to_string(o.mask.cols()) + ',' +
             fmt(o.mask_cell_size) + ',';
      for (auto b : o.mask.values()) out += b ? '1' : '0';
    }
  }
  return out;
}

std::vector<ObjectSpec> objects_from_string(const std::string& text) {
  std::vector<ObjectSpec> out;
  if (text == "none" || text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) fail(ErrorCode::CorruptFile, "bad object record '" + item + "'");
    ObjectSpec o;
    o.shape = shape_from_string(item.substr(0, colon));
    std::vector<std::string> fields;
    std::stringstream fs(item.substr(colon + 1));
    std::string f;
    while (std::getline(fs, f, ',')) fields.push_back(f);
    const std::size_t need = o.shape == Shape::RasterMask ? 10 : 6;
    if (fields.size() != need) fail(ErrorCode::CorruptFile, "bad object record '" + item + "'");
    try {
      o.center_x = std::stod(fields[0]);
      o.center_y = std::stod(fields[1]);
      o.size = std::stod(fields[2]);
      o.length = std::stod(fields[3]);
      o.orientation_deg = std::stod(fields[4]);
      o.eps_r = std::stod(fields[5]);
      if (o.shape == Shape::RasterMask) {
        const auto rows = std::stoul(fields[6]);
        const auto cols = std::stoul(fields[7]);
        o.mask_cell_size = std::stod(fields[8]);
        if (fields[9].size() != rows * cols) fail(ErrorCode::CorruptFile, "mask size mismatch");
        o.mask = Grid2D<std::uint8_t>(rows, cols);
        for (std::size_t k = 0; k < rows * cols; ++k) o.mask.storage()[k] = fields[9][k] == '1';
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::CorruptFile, "bad number in object record '" + item + "'");
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::string soil_to_string(const SoilSpec& s) {
  return fmt(s.sand_fraction) + ',' + fmt(s.clay_fraction) + ',' + fmt(s.bulk_density) + ',' +
         fmt(s.particle_density) + ',' + fmt(s.water_fraction_min) + ',' +
         fmt(s.water_fraction_max) + ',' + std::to_string(s.n_materials) + ',' +
         fmt(s.fractal_dimension) + ',' + std::to_string(s.seed);
}

SoilSpec soil_from_string(const std::string& text) {
  std::vector<std::string> f;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) f.push_back(item);
  if (f.size() != 9) fail(ErrorCode::CorruptFile, "bad soil record '" + text + "'");
  SoilSpec s;
  try {
    s.sand_fraction = std::stod(f[0]);
    s.clay_fraction = std::stod(f[1]);
    s.bulk_density = std::stod(f[2]);
    s.particle_density = std::stod(f[3]);
    s.water_fraction_min = std::stod(f[4]);
    s.water_fraction_max = std::stod(f[5]);
    s.n_materials = std::stoi(f[6]);
    s.fractal_dimension = std::stod(f[7]);
    s.seed = std::stoull(f[8]);
  } catch (const std::logic_error&) {
    fail(ErrorCode::CorruptFile, "bad number in soil record '" + text + "'");
  }
  return s;
}

}  // namespace gprinv::scene
