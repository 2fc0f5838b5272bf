#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"
#include "gprinv/nn.hpp"

namespace gprinv::nn {

namespace {

struct Eval {
  double loss;
  std::uint64_t kinks;
};

Eval evaluate(ParamStore<double>& store, const Tensor4<double>& input, const LossBuilder& build) {
  Graph<double> g(&store);
  g.track_kinks(true);
  const Var in = g.input(input);
  const Var loss = build(g, in);
  const double v = g.value(loss).data()[0];
  if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "gradient check: loss is not finite");
  return {v, g.kink_signature()};
}

std::vector<std::size_t> pick(std::size_t n, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(ParamStore<double>& store, const Tensor4<double>& input,
                           const LossBuilder& build, const GradCheckOptions& opts) {
  // Analytic pass.
  store.zero_grad();
  Tensor4<double> input_grad;
  std::uint64_t base_kinks = 0;
  double base_loss = 0.0;
  {
    Graph<double> g(&store);
    g.track_kinks(true);
    const Var in = g.input(input, true);
    const Var loss = build(g, in);
    base_loss = g.value(loss).data()[0];
    if (!std::isfinite(base_loss)) {
      fail(ErrorCode::NonFinite, "gradient check: loss is not finite");
    }
    g.backward(loss);
    input_grad = g.grad(in);
    if (input_grad.empty()) input_grad = Tensor4<double>(input.shape());
    base_kinks = g.kink_signature();
  }

  GradCheckReport rep;
  // Central differences carry roundoff of about eps*|L|/h, so the floor follows the loss scale.
  const double floor = opts.floor * std::max(std::abs(base_loss), 1.0);
  auto compare = [&](const std::string& name, std::size_t i, double analytic, double& slot,
                     const Tensor4<double>& in) {
    const double theta = slot;
    const double h = opts.rel_step * std::max(std::abs(theta), 1.0);
    slot = theta + h;
    const Eval up = evaluate(store, in, build);
    slot = theta - h;
    const Eval down = evaluate(store, in, build);
    slot = theta;
    if (up.kinks != base_kinks || down.kinks != base_kinks) {
      ++rep.skipped_kinks;
      return;
    }
    const double numeric = (up.loss - down.loss) / (2.0 * h);
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
      fail(ErrorCode::NonFinite, "gradient check: non-finite gradient at " + name);
    }
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double err = std::abs(analytic - numeric) / denom;
    ++rep.checked;
    if (err >= rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst = name + "[" + std::to_string(i) + "]";
      rep.worst_analytic = analytic;
      rep.worst_numeric = numeric;
    }
  };

  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& par = store[p];
    if (!par.trainable) continue;
    const Tensor4<double> analytic = par.grad;
    for (const std::size_t i : pick(par.value.size(), opts.max_per_tensor,
                                    derive_seed(opts.seed, par.name, 0))) {
      compare(par.name, i, analytic.data()[i], par.value.data()[i], input);
    }
  }
  Tensor4<double> x = input;
  for (const std::size_t i : pick(x.size(), opts.max_per_tensor, derive_seed(opts.seed, "input", 0))) {
    compare("input", i, input_grad.data()[i], x.data()[i], x);
  }
  return rep;
}

}  // namespace gprinv::nn
