#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>

#include "gprinv/cli.hpp"
#include "gprinv/error.hpp"
#include "gprinv/fdtd_checks.hpp"
#include "gprinv/metrics.hpp"

namespace gprinv::cli {

namespace {

using nn::Graph;
using nn::ParamStore;
using nn::Shape4;
using nn::Tensor4;
using nn::Var;

Tensor4<double> random_tensor(Shape4 s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<double> t(s);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Conv weights plus a nonzero bias, so bias gradients are exercised.
ParamStore<double> conv_store(std::size_t cout, std::size_t cin, std::size_t k, std::mt19937_64& rng) {
  ParamStore<double> s;
  s.add("w", {cout, cin, k, k}, cin * k * k);
  s.add("b", {1, cout, 1, 1}, 1);
  nn::kaiming_uniform_init(s, rng());
  s[s.index("b")].value = random_tensor({1, cout, 1, 1}, rng, -0.5, 0.5);
  return s;
}

std::string fmt_err(double e) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3g", e);
  return buf;
}

struct Worst {
  double err = 0.0;
  std::string where;
  std::size_t checked = 0;
};

}  // namespace

std::vector<OracleLine> gradient_suite(const std::vector<std::uint64_t>& seeds, double tolerance) {
  std::vector<std::string> order;
  std::map<std::string, Worst> worst;
  auto record = [&](const std::string& name, std::uint64_t seed, const nn::GradCheckReport& r) {
    if (!worst.count(name)) order.push_back(name);
    auto& w = worst[name];
    w.checked += r.checked;
    if (r.max_rel_error >= w.err) {
      w.err = r.max_rel_error;
      w.where = "seed " + std::to_string(seed) + " " + r.worst;
    }
  };

  for (std::uint64_t seed : seeds) {
    std::mt19937_64 rng(seed);
    // Loss = MSE against a fixed random target, so every output element
    // carries gradient.
    const auto target_loss = [seed](Graph<double>& g, Var y, std::uint64_t salt) {
      std::mt19937_64 trng(seed * 1000 + salt);
      return g.mse(y, g.input(random_tensor(g.value(y).shape(), trng)));
    };
    const auto x = random_tensor({2, 4, 8, 8}, rng);
    for (std::size_t k : {1u, 3u, 5u}) {
      ParamStore<double> s = conv_store(3, 4, k, rng);
      record("conv2d " + std::to_string(k) + "x" + std::to_string(k), seed,
             nn::grad_check(s, x, [&](Graph<double>& g, Var in) {
               return target_loss(g, g.conv2d(in, g.param("w"), g.param("b")), 1);
             }));
    }
    {
      ParamStore<double> s = conv_store(3, 4, 2, rng);
      record("upconv2", seed, nn::grad_check(s, random_tensor({2, 4, 4, 4}, rng), [&](Graph<double>& g, Var in) {
               return target_loss(g, g.upconv2(in, g.param("w"), g.param("b")), 2);
             }));
    }
    ParamStore<double> none;
    record("upsample2", seed, nn::grad_check(none, x, [&](Graph<double>& g, Var in) {
             return target_loss(g, g.upsample2(in), 3);
           }));
    record("maxpool2", seed, nn::grad_check(none, x, [&](Graph<double>& g, Var in) {
             return target_loss(g, g.maxpool2(in), 4);
           }));
    record("relu", seed, nn::grad_check(none, x, [&](Graph<double>& g, Var in) {
             return target_loss(g, g.relu(in), 5);
           }));
    record("elu", seed, nn::grad_check(none, x, [&](Graph<double>& g, Var in) {
             return target_loss(g, g.elu(in), 6);
           }));
    const auto other = random_tensor({2, 3, 8, 8}, rng);
    record("concat", seed, nn::grad_check(none, x, [&](Graph<double>& g, Var in) {
             const Var o = g.input(other, true);
             return target_loss(g, g.concat({o, in, o}), 7);
           }));
    record("mse", seed, nn::grad_check(none, x, [&](Graph<double>& g, Var in) {
             return target_loss(g, in, 8);
           }));

    {
      const dmrf::MRFModuleConfig mc{2, 4};
      ParamStore<double> s;
      dmrf::declare_mrf(s, "m", mc);
      nn::kaiming_uniform_init(s, rng());
      record("MRF module", seed,
             nn::grad_check(s, random_tensor({2, 2, 6, 6}, rng), [&](Graph<double>& g, Var in) {
               return target_loss(g, dmrf::mrf_forward(g, in, "m", mc), 9);
             }));
    }

    // One seeded element per tensor: every tensor is covered on every seed.
    nn::GradCheckOptions sparse;
    sparse.max_per_tensor = 1;
    sparse.seed = seed;
    const dmrf::DMRFConfig c = dmrf::DMRFConfig::for_kind(dmrf::ModelKind::DMRF, 1.0 / 16.0);
    for (int stage : {1, 2}) {
      const dmrf::UNetConfig& u = stage == 1 ? c.stage1 : c.stage2;
      ParamStore<double> s;
      dmrf::declare_unet(s, "u.", u);
      nn::kaiming_uniform_init(s, rng());
      record("U-Net stage " + std::to_string(stage), seed,
             nn::grad_check(s, random_tensor({1, u.in_channels, 16, 16}, rng),
                            [&](Graph<double>& g, Var in) {
                              return target_loss(g, dmrf::unet_forward(g, in, "u.", u), 10 + stage);
                            },
                            sparse));
    }
    {
      ParamStore<double> s = dmrf::build_params<double>(c, rng());
      const auto y1 = random_tensor({1, 1, 16, 16}, rng, 0, 1);
      const auto y2 = random_tensor({1, 1, 16, 16}, rng, 0, 1);
      record("two-stage combined loss", seed,
             nn::grad_check(s, random_tensor({1, 1, 16, 16}, rng, 0, 1),
                            [&](Graph<double>& g, Var in) {
                              const auto r = dmrf::forward_dmrf(g, in, c);
                              return dmrf::combined_loss(g, g.input(y1), *r.denoised, g.input(y2),
                                                         r.perm, c.alpha, c.beta)
                                  .total;
                            },
                            sparse));
    }
  }

  std::vector<OracleLine> out;
  for (const auto& name : order) {
    const auto& w = worst[name];
    out.push_back({"grad " + name, w.err < tolerance && w.checked > 0,
                   "max rel err " + fmt_err(w.err) + " (" + w.where + "), " +
                       std::to_string(w.checked) + " elements"});
  }
  return out;
}

std::vector<OracleLine> physics_suite(double cell_size) {
  std::vector<OracleLine> out;
  for (const auto& r : fdtd::physics_checks(cell_size)) {
    out.push_back({"physics " + r.name, r.pass,
                   "measured " + fmt_err(r.measured) + ", expected " + fmt_err(r.expected) +
                       (r.detail.empty() ? "" : "; " + r.detail)});
  }
  return out;
}

std::vector<OracleLine> metric_suite() {
  using namespace metrics;
  std::vector<OracleLine> out;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-50, 75);
  bool ssim_ok = true, zero_ok = true;
  for (int i = 0; i < 20; ++i) {
    Image y(24, 24);
    for (auto& v : y.storage()) v = u(rng);
    for (const MetricConfig& cfg : {MetricConfig::bscan(), MetricConfig::permittivity()}) {
      ssim_ok = ssim_ok && ssim(y, y, cfg) == 1.0 && std::abs(ssim_windowed(y, y, cfg) - 1.0) < 1e-12;
    }
    zero_ok = zero_ok && mse(y, y) == 0.0 && mae(y, y) == 0.0 && mre(y, y) == 0.0;
  }
  out.push_back({"metric SSIM(y, y) = 1", ssim_ok, "20 random images, global and windowed"});
  out.push_back({"metric MSE/MAE/MRE zero on identical inputs", zero_ok, "20 random images"});

  bool thrown = false;
  try {
    mre(Image(8, 8, 0.0), Image(8, 8, 1.0));
  } catch (const Error& e) {
    thrown = e.code() == ErrorCode::ZeroDynamicRange;
  }
  const auto row = compare("z", "zero", 2, Image(8, 8, 0.0), Image(8, 8, 1.0), MetricConfig::permittivity());
  out.push_back({"metric MRE ZeroDynamicRange", thrown && !row.mre_pct,
                 std::string("error ") + (thrown ? "raised" : "missing") + ", report row " +
                     (row.mre_pct ? "has MRE" : "omits MRE")});

  const Image y(10, 10, 2.0), yh(10, 10, 1.5);
  const bool ex = std::abs(mse(y, yh) - 0.25) < 1e-15 && std::abs(mae(y, yh) - 0.5) < 1e-15 &&
                  std::abs(mre(y, yh) - 25.0) < 1e-12;
  out.push_back({"metric scaled-image example", ex,
                 "MSE " + fmt_err(mse(y, yh)) + ", MAE " + fmt_err(mae(y, yh)) + ", MRE " +
                     fmt_err(mre(y, yh)) + "%"});
  return out;
}

}  // namespace gprinv::cli
