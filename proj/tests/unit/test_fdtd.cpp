#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "gprinv/error.hpp"
#include "gprinv/fdtd.hpp"
#include "gprinv/fdtd_checks.hpp"

using namespace gprinv;
using namespace gprinv::fdtd;

namespace {

scene::MaterialGrid homogeneous(const GridSpec& g, double eps, double sigma = 0.0) {
  auto f = scene::uniform_field(g.soil_rows(), g.cols(), g.cell_size, {eps, sigma});
  scene::EmbedOptions e;
  e.air_height = g.air_height;
  return scene::embed_objects(f, {}, e);
}

void check_result(const CheckResult& r) {
  INFO(r.name << ": " << r.detail);
  CHECK(r.pass);
}

}  // namespace

TEST_CASE("courant step") {
  CHECK(courant_dt(0.0025, 1.0) == doctest::Approx(0.0025 / (299792458.0 * std::sqrt(2.0))));
  CHECK(courant_dt(0.0025, 1.0) <= 5.9e-12);
  CHECK(courant_dt(0.005, 0.7) == doctest::Approx(2.0 * courant_dt(0.0025, 0.7)));
  CHECK_THROWS_AS(courant_dt(0.01, 0.0), Error);
  CHECK_THROWS_AS(courant_dt(0.01, 1.5), Error);
}

TEST_CASE("gaussian waveform") {
  const double fc = 1e9;
  CHECK(gaussian_waveform(1.0 / fc, fc, 1.0) == 1.0);
  CHECK(gaussian_waveform(1.0 / fc, fc, 2.5) == 2.5);
  CHECK(gaussian_waveform(0.0, fc, 1.0) == doctest::Approx(2.67e-9).epsilon(0.01));
  CHECK(gaussian_waveform(0.0, fc, 1.0) == doctest::Approx(std::exp(-2.0 * M_PI * M_PI)).epsilon(1e-12));
  for (double tau : {0.1e-9, 0.37e-9, 0.9e-9}) {
    CHECK(gaussian_waveform(1e-9 + tau, fc, 1.0) == doctest::Approx(gaussian_waveform(1e-9 - tau, fc, 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("grid and scan specs") {
  const GridSpec desk = GridSpec::desk();
  CHECK_NOTHROW(desk.validate());
  CHECK(desk.cols() == 75);
  CHECK(desk.soil_rows() == 30);
  CHECK(desk.air_rows() == 20);
  GridSpec bad = desk;
  bad.pml_cells = 6;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = desk;
  bad.dt = courant_dt(desk.cell_size, 1.0) * 1.01;
  CHECK_THROWS_AS(bad.validate(), Error);

  CHECK(ScanSpec{0.025, 1.0}.positions() == 41);
  CHECK(ScanSpec{0.025, 0.5}.positions() == 21);
  CHECK(ScanSpec{0.025, 1.0}.first_position(1.5) == doctest::Approx(0.25));

  SourceSpec s;
  s.rx_offset_x = -0.2;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("antenna placement") {
  const GridSpec g = GridSpec::desk();
  const auto p = antenna_point(g, 0.305, 0.1);
  CHECK(p.col == 30);
  CHECK(p.row == 20 - 1 - 10);
  CHECK_THROWS_AS(antenna_point(g, -0.01, 0.1), Error);
  CHECK_THROWS_AS(antenna_point(g, 0.2, 0.25), Error);
}

TEST_CASE("material grid must match the grid spec") {
  const GridSpec g = GridSpec::desk();
  GridSpec other = g;
  other.soil_depth = 0.4;
  CHECK_THROWS_AS(Simulation(homogeneous(other, 4.0), g), Error);
}

TEST_CASE("free-space stepping stays bounded") {
  GridSpec g = GridSpec::desk();
  const auto m = homogeneous(g, 1.0);
  Simulation sim(m, g);
  const GridPoint tx{10, 37};
  const double peak_injection = sim.injection_gain(tx);
  const SourceSpec src;
  double max_field = 0.0;
  for (std::size_t n = 0; n < 1000; ++n) {
    sim.step();
    sim.inject(tx, src.current((static_cast<double>(n) + 0.5) * sim.dt()));
    max_field = std::max(max_field, sim.max_abs_ez());
  }
  CHECK(std::isfinite(max_field));
  CHECK(max_field <= 10.0 * peak_injection);
  CHECK(sim.max_abs_ez() < 1e-2 * max_field);
}

TEST_CASE("doubling the source amplitude doubles every sample") {
  const GridSpec g = GridSpec::desk();
  scene::Scenario sc;
  sc.domain_width = g.soil_width;
  sc.domain_depth = g.soil_depth;
  sc.cell_size = g.cell_size;
  sc.field_seed = 3;
  const auto m = scene::build_material_grid(sc, 1e9);
  SourceSpec one = SourceSpec::desk();
  SourceSpec two = one;
  two.amplitude = 2.0;
  const auto tx = antenna_point(g, 0.3, 0.1);
  const auto rx = antenna_point(g, 0.4, 0.1);
  const auto a = run_ascan(m, tx, rx, g, one);
  const auto b = run_ascan(m, tx, rx, g, two);
  REQUIRE(a.samples.size() == 512);
  CHECK(a.dt_out == doctest::Approx(10e-9 / 512));
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) mismatches += b.samples[i] != 2.0 * a.samples[i];
  CHECK(mismatches == 0);
}

TEST_CASE("physics oracles on the desk cell size") {
  check_result(check_first_arrival());
  check_result(check_fresnel(4.0));
  check_result(check_fresnel(9.0));
  check_result(check_fresnel_ratio());
  check_result(check_pml());
  check_result(check_reciprocity());
  check_result(check_grid_scaling());
}

TEST_CASE("b-scan shape, determinism and hyperbola apex") {
  const SimProfile prof = SimProfile::desk();
  scene::Scenario sc;
  sc.domain_width = prof.grid.soil_width;
  sc.domain_depth = prof.grid.soil_depth;
  sc.cell_size = prof.grid.cell_size;
  sc.field_seed = 11;
  const auto soil_only = run_bscan(sc, prof.grid, prof.source, prof.scan);
  CHECK(soil_only.traces.rows() == 512);
  CHECK(soil_only.traces.cols() == 21);
  CHECK(soil_only.first_position == doctest::Approx(0.125));

  scene::ObjectSpec o;
  o.shape = scene::Shape::Circle;
  o.center_x = 0.4;
  o.center_y = 0.15;
  o.size = 0.03;
  o.eps_r = 30.0;
  sc.objects = {o};
  const auto with_object = run_bscan(sc, prof.grid, prof.source, prof.scan);
  BScanOptions parallel;
  parallel.workers = 3;
  CHECK(run_bscan(sc, prof.grid, prof.source, prof.scan, parallel) == with_object);

  std::vector<double> energy(21, 0.0);
  for (std::size_t t = 0; t < 512; ++t) {
    for (std::size_t k = 0; k < 21; ++k) {
      const double d = with_object.traces(t, k) - soil_only.traces(t, k);
      energy[k] += d * d;
    }
  }
  const auto apex = static_cast<double>(std::max_element(energy.begin(), energy.end()) - energy.begin());
  const double expected = (o.center_x - with_object.first_position) / prof.scan.step;
  CHECK(std::abs(apex - expected) <= 2.0);
}

TEST_CASE("scan positions outside the grid are rejected") {
  SimProfile prof = SimProfile::desk();
  prof.scan.span = 0.74;
  const auto m = homogeneous(prof.grid, 5.0);
  try {
    run_bscan(m, prof.grid, prof.source, prof.scan);
    FAIL("expected OutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OutOfRange);
  }
}

TEST_CASE("lossy soil attenuates the ground reflection") {
  const GridSpec g = GridSpec::desk();
  const SourceSpec s = SourceSpec::desk();
  const auto tx = antenna_point(g, 0.3, 0.1);
  const auto rx = antenna_point(g, 0.4, 0.1);
  const auto lossless = run_ascan(homogeneous(g, 6.0, 0.0), tx, rx, g, s);
  const auto lossy = run_ascan(homogeneous(g, 6.0, 0.05), tx, rx, g, s);
  double e0 = 0.0, e1 = 0.0;
  // Late samples only: energy that travelled through soil.
  for (std::size_t i = 300; i < 512; ++i) {
    e0 += lossless.samples[i] * lossless.samples[i];
    e1 += lossy.samples[i] * lossy.samples[i];
  }
  CHECK(e1 < e0);
}
