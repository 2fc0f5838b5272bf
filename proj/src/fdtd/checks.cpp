#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "gprinv/fdtd_checks.hpp"

namespace gprinv::fdtd {

namespace {

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

GridSpec test_grid(double h) {
  GridSpec g;
  g.cell_size = h;
  g.soil_width = 1.2;
  g.soil_depth = 0.6;
  g.air_height = 0.4;
  g.time_window = 8e-9;
  return g;
}

scene::MaterialGrid half_space(const GridSpec& g, double soil_eps) {
  auto f = scene::uniform_field(g.soil_rows(), g.cols(), g.cell_size, {soil_eps, 0.0});
  scene::EmbedOptions e;
  e.air_height = g.air_height;
  return scene::embed_objects(f, {}, e);
}

// Raw Ez at rx, one sample per step (time (n + 1) dt).
std::vector<double> raw_trace(const scene::MaterialGrid& m, const GridSpec& g, GridPoint tx,
                              GridPoint rx, std::vector<double>* energy = nullptr) {
  Simulation sim(m, g);
  const SourceSpec src;
  std::vector<double> out;
  out.reserve(g.steps());
  for (std::size_t n = 0; n < g.steps(); ++n) {
    sim.step();
    sim.inject(tx, src.current((static_cast<double>(n) + 0.5) * sim.dt()));
    out.push_back(sim.ez(rx));
    if (energy) energy->push_back(sim.interior_energy());
  }
  return out;
}

double signed_peak(const std::vector<double>& v) {
  double best = 0.0;
  for (double x : v) {
    if (std::abs(x) > std::abs(best)) best = x;
  }
  return best;
}

// Sub-sample position of the maximum of f over integer indices, refined by
// a parabola through the neighbors.
template <typename F>
double refined_argmax(F&& f, int lo, int hi) {
  int best = lo;
  double best_v = f(lo);
  for (int i = lo + 1; i < hi; ++i) {
    const double v = f(i);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  if (best == lo || best + 1 >= hi) return best;
  const double ym = f(best - 1), yp = f(best + 1);
  const double denom = ym - 2.0 * best_v + yp;
  return denom == 0.0 ? best : best + 0.5 * (ym - yp) / denom;
}

CheckResult relative(std::string name, double measured, double expected, double tol) {
  CheckResult r;
  r.name = std::move(name);
  r.measured = measured;
  r.expected = expected;
  r.tolerance = tol;
  r.pass = std::abs(measured - expected) <= tol * std::abs(expected);
  r.detail = fmt("measured %.6g vs expected %.6g", measured, expected);
  return r;
}

}  // namespace

CheckResult check_first_arrival(double h) {
  GridSpec g = test_grid(h);
  const auto m = half_space(g, 1.0);  // all air
  const GridPoint tx{g.air_rows() / 2, g.cols() / 4};
  const auto d1 = static_cast<std::size_t>(std::llround(0.2 / h));
  const auto d2 = static_cast<std::size_t>(std::llround(0.6 / h));
  const auto a = raw_trace(m, g, tx, {tx.row, tx.col + d1});
  const auto b = raw_trace(m, g, tx, {tx.row, tx.col + d2});
  const int n = static_cast<int>(a.size());
  auto xcorr = [&](int lag) {
    double s = 0.0;
    for (int i = 0; i + lag < n; ++i) s += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i + lag)];
    return s;
  };
  const double lag = refined_argmax(xcorr, 0, n / 2) * g.resolved_dt();
  const double expected = static_cast<double>(d2 - d1) * h / kC0;
  return relative("free-space arrival", lag, expected, 0.02);
}

namespace {

struct Reflection {
  double reflected;
  double direct;
};

Reflection monostatic_reflection(double eps_r, double h) {
  const GridSpec g = test_grid(h);
  const auto el = static_cast<std::size_t>(std::llround(0.15 / h));
  const GridPoint p{g.air_rows() - el, g.cols() / 2};
  const auto air = half_space(g, 1.0);
  const auto free = raw_trace(air, g, p, p);
  const auto hs = raw_trace(half_space(g, eps_r), g, p, p);
  std::vector<double> refl(hs.size());
  for (std::size_t i = 0; i < hs.size(); ++i) refl[i] = hs[i] - free[i];
  // Row p.row is centered (el - 0.5) cells above the interface, so the
  // image source is 2 el - 1 cells away; compare with the direct wave over
  // that distance.
  const auto direct = raw_trace(air, g, p, {p.row, p.col + 2 * el - 1});
  return {signed_peak(refl), signed_peak(direct)};
}

}  // namespace

CheckResult check_fresnel(double eps_r, double h) {
  const auto r = monostatic_reflection(eps_r, h);
  const double expected = (1.0 - std::sqrt(eps_r)) / (1.0 + std::sqrt(eps_r));
  return relative("fresnel eps " + fmt("%.3g", eps_r, 0.0), r.reflected / r.direct, expected, 0.10);
}

CheckResult check_fresnel_ratio(double h) {
  const auto r4 = monostatic_reflection(4.0, h);
  const auto r9 = monostatic_reflection(9.0, h);
  return relative("fresnel ratio eps4/eps9", r4.reflected / r9.reflected, (1.0 / 3.0) / 0.5, 0.10);
}

CheckResult check_pml(double h) {
  const GridSpec g = test_grid(h);
  const auto m = half_space(g, 1.0);
  const GridPoint tx{m.rows() / 2, m.cols() / 2};
  std::vector<double> energy;
  raw_trace(m, g, tx, tx, &energy);

  // The pulse is over by 2/fc; after that its trailing edge needs the time
  // to reach the farthest interior corner.
  const double far = std::hypot(static_cast<double>(std::max(tx.row, m.rows() - tx.row)),
                                static_cast<double>(std::max(tx.col, m.cols() - tx.col))) * h;
  const double t_check = 2.0 / SourceSpec{}.center_frequency + far / kC0 + 2e-9;
  const auto n_check = static_cast<std::size_t>(std::ceil(t_check / g.resolved_dt()));
  CheckResult r;
  r.name = "pml residual energy";
  r.expected = 0.0;
  r.tolerance = 0.01;
  if (n_check >= energy.size()) {
    r.detail = "time window too short for the residual check";
    return r;
  }
  const double peak = *std::max_element(energy.begin(), energy.end());
  r.measured = energy[n_check] / peak;
  r.pass = r.measured < r.tolerance;
  r.detail = fmt("residual fraction %.3g at t = %.3g s", r.measured, t_check);
  return r;
}

CheckResult check_reciprocity(double h) {
  const GridSpec g = test_grid(h);
  auto f = scene::uniform_field(g.soil_rows(), g.cols(), h, {6.0, 0.0});
  scene::ObjectSpec o;
  o.shape = scene::Shape::Rectangle;
  o.center_x = 0.45;
  o.center_y = 0.35;
  o.size = 0.08;
  o.length = 0.15;
  o.orientation_deg = 30.0;
  o.eps_r = 20.0;
  scene::EmbedOptions e;
  e.air_height = g.air_height;
  const std::vector<scene::ObjectSpec> objects{o};
  const auto m = scene::embed_objects(f, objects, e);
  const auto el = static_cast<std::size_t>(std::llround(0.1 / h));
  const GridPoint a{g.air_rows() - el, static_cast<std::size_t>(std::llround(0.35 / h))};
  const GridPoint b{g.air_rows() - 2 * el, static_cast<std::size_t>(std::llround(0.8 / h))};
  const auto ab = raw_trace(m, g, a, b);
  const auto ba = raw_trace(m, g, b, a);
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    diff += (ab[i] - ba[i]) * (ab[i] - ba[i]);
    norm += ab[i] * ab[i];
  }
  CheckResult r;
  r.name = "reciprocity";
  r.measured = std::sqrt(diff / norm);
  r.tolerance = 0.01;
  r.pass = r.measured < r.tolerance;
  r.detail = fmt("relative RMS change %.3g (limit %.3g)", r.measured, r.tolerance);
  return r;
}

CheckResult check_grid_scaling(double h) {
  auto peak_time = [](double cell) {
    const GridSpec g = test_grid(cell);
    const auto m = half_space(g, 1.0);
    const GridPoint tx{g.air_rows() / 2, g.cols() / 4};
    const auto d = static_cast<std::size_t>(std::llround(0.3 / cell));
    const auto v = raw_trace(m, g, tx, {tx.row, tx.col + d});
    auto sq = [&](int i) { return v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)]; };
    return (refined_argmax(sq, 0, static_cast<int>(v.size())) + 1.0) * g.resolved_dt();
  };
  const double coarse = peak_time(h);
  const double fine = peak_time(h / 2.0);
  auto r = relative("grid scaling", coarse, fine, 0.01);
  r.detail = fmt("peak time %.6g s at h, %.6g s at h/2", coarse, fine);
  return r;
}

std::vector<CheckResult> physics_checks(double h) {
  return {check_first_arrival(h), check_fresnel(4.0, h),  check_fresnel(9.0, h),
          check_fresnel_ratio(h), check_pml(h),           check_reciprocity(h),
          check_grid_scaling(h)};
}

}  // namespace gprinv::fdtd
