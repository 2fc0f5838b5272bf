#include <cmath>

#include "gprinv/dmrf.hpp"
#include "gprinv/error.hpp"

namespace gprinv::dmrf {

namespace {

template <typename T>
void declare_conv(nn::ParamStore<T>& s, const std::string& name, std::size_t cin, std::size_t cout,
                  std::size_t k) {
  s.add(name + ".w", {cout, cin, k, k}, cin * k * k);
  s.add(name + ".b", {1, cout, 1, 1}, 0);
}

template <typename T>
nn::Var conv(nn::Graph<T>& g, nn::Var x, const std::string& name) {
  return g.conv2d(x, g.param(name + ".w"), g.param(name + ".b"));
}

std::string branch_layer(const std::string& prefix, std::size_t b, std::size_t j) {
  return prefix + ".br" + std::to_string(b) + "." + std::to_string(j);
}

}  // namespace

template <typename T>
nn::Var mrf_apply(nn::Graph<T>& g, nn::Var x, const std::string& prefix);

namespace {

// One encoder/decoder module: an MRF module, or a plain 3x3 conv + ReLU.
template <typename T>
void declare_module(nn::ParamStore<T>& s, const std::string& name, std::size_t cin,
                    std::size_t width, bool use_mrf) {
  if (use_mrf) {
    declare_mrf(s, name, MRFModuleConfig{cin, width});
  } else {
    declare_conv(s, name, cin, width, 3);
  }
}

template <typename T>
nn::Var module_forward(nn::Graph<T>& g, nn::Var x, const std::string& name, std::size_t cin,
                       bool use_mrf) {
  if (use_mrf) {
    if (g.value(x).shape().c != cin) fail(ErrorCode::ShapeMismatch, "channel mismatch at " + name);
    return mrf_apply(g, x, name);
  }
  return g.relu(conv(g, x, name));
}

}  // namespace

void MRFModuleConfig::validate() const {
  if (in_channels == 0 || width == 0) {
    fail(ErrorCode::InvalidConfig, "MRF module channel counts must be >= 1");
  }
}

template <typename T>
void declare_mrf(nn::ParamStore<T>& s, const std::string& prefix, const MRFModuleConfig& cfg) {
  cfg.validate();
  const auto& plan = mrf_branch_kernels();
  for (std::size_t b = 0; b < plan.size(); ++b) {
    std::size_t cin = cfg.in_channels;
    for (std::size_t j = 0; j < plan[b].size(); ++j) {
      declare_conv(s, branch_layer(prefix, b, j), cin, cfg.width, plan[b][j]);
      cin = cfg.width;
    }
  }
  declare_conv(s, prefix + ".fuse", plan.size() * cfg.width, cfg.width, 3);
}

template <typename T>
nn::Var mrf_forward(nn::Graph<T>& g, nn::Var x, const std::string& prefix,
                    const MRFModuleConfig& cfg) {
  const nn::Shape4 s = g.value(x).shape();
  if (s.c != cfg.in_channels || s.h < 4 || s.w < 4) {
    fail(ErrorCode::ShapeMismatch, "MRF module '" + prefix + "' expects " +
                                       std::to_string(cfg.in_channels) +
                                       " channels and sides >= 4, got " + s.str());
  }
  return mrf_apply(g, x, prefix);
}

// No side check: the U-Net bottleneck of a 16x16 input is 1x1.
template <typename T>
nn::Var mrf_apply(nn::Graph<T>& g, nn::Var x, const std::string& prefix) {
  const auto& plan = mrf_branch_kernels();
  std::vector<nn::Var> branches;
  for (std::size_t b = 0; b < plan.size(); ++b) {
    nn::Var h = x;
    for (std::size_t j = 0; j < plan[b].size(); ++j) h = g.relu(conv(g, h, branch_layer(prefix, b, j)));
    branches.push_back(h);
  }
  return g.relu(conv(g, g.concat(branches), prefix + ".fuse"));
}

// ---- U-Net ---------------------------------------------------------------

std::vector<std::size_t> UNetConfig::widths() const {
  std::vector<std::size_t> w;
  for (int s = 0; s < 5; ++s) {
    const double v = std::round(64.0 * width_factor * std::ldexp(1.0, s));
    w.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(v)));
  }
  return w;
}

void UNetConfig::validate() const {
  if (in_channels == 0 || out_channels == 0) {
    fail(ErrorCode::InvalidConfig, "U-Net channel counts must be >= 1");
  }
  if (!(width_factor > 0.0) || !std::isfinite(width_factor)) {
    fail(ErrorCode::InvalidConfig, "width factor must be positive");
  }
}

template <typename T>
void declare_unet(nn::ParamStore<T>& s, const std::string& p, const UNetConfig& cfg) {
  cfg.validate();
  const auto w = cfg.widths();
  std::size_t cin = cfg.in_channels;
  for (std::size_t st = 0; st < 5; ++st) {
    const std::string stage = p + "enc" + std::to_string(st);
    declare_module(s, stage + ".m0", cin, w[st], cfg.use_mrf);
    declare_module(s, stage + ".m1", w[st], w[st], cfg.use_mrf);
    cin = w[st];
  }
  for (std::size_t d = 0; d < 4; ++d) {
    const std::size_t st = 3 - d;
    const std::string stage = p + "dec" + std::to_string(d);
    declare_conv(s, stage + ".up", w[st + 1], w[st], 2);
    const std::size_t merged = cfg.use_skips ? 2 * w[st] : w[st];
    declare_module(s, stage + ".m0", merged, w[st], cfg.use_mrf);
    declare_module(s, stage + ".m1", w[st], w[st], cfg.use_mrf);
  }
  declare_conv(s, p + "head", w[0], cfg.out_channels, 1);
}

template <typename T>
nn::Var unet_forward(nn::Graph<T>& g, nn::Var x, const std::string& p, const UNetConfig& cfg) {
  const nn::Shape4 s = g.value(x).shape();
  if (s.c != cfg.in_channels || s.h == 0 || s.w == 0 || s.h % 16 != 0 || s.w % 16 != 0) {
    fail(ErrorCode::ShapeMismatch, "U-Net '" + p + "' expects " + std::to_string(cfg.in_channels) +
                                       " channels and sides divisible by 16, got " + s.str());
  }
  const auto w = cfg.widths();
  std::vector<nn::Var> skips;
  nn::Var h = x;
  std::size_t cin = cfg.in_channels;
  for (std::size_t st = 0; st < 5; ++st) {
    const std::string stage = p + "enc" + std::to_string(st);
    h = module_forward(g, h, stage + ".m0", cin, cfg.use_mrf);
    h = module_forward(g, h, stage + ".m1", w[st], cfg.use_mrf);
    cin = w[st];
    if (st < 4) {
      skips.push_back(h);
      h = g.maxpool2(h);
    }
  }
  for (std::size_t d = 0; d < 4; ++d) {
    const std::size_t st = 3 - d;
    const std::string stage = p + "dec" + std::to_string(d);
    h = g.relu(g.upconv2(h, g.param(stage + ".up.w"), g.param(stage + ".up.b")));
    if (cfg.use_skips) h = g.concat({skips[st], h});
    const std::size_t merged = cfg.use_skips ? 2 * w[st] : w[st];
    h = module_forward(g, h, stage + ".m0", merged, cfg.use_mrf);
    h = module_forward(g, h, stage + ".m1", w[st], cfg.use_mrf);
  }
  h = conv(g, h, p + "head");
  return cfg.final_activation == Activation::ReLU ? g.relu(h) : g.elu(h);
}

template void declare_mrf(nn::ParamStore<float>&, const std::string&, const MRFModuleConfig&);
template void declare_mrf(nn::ParamStore<double>&, const std::string&, const MRFModuleConfig&);
template nn::Var mrf_forward(nn::Graph<float>&, nn::Var, const std::string&, const MRFModuleConfig&);
template nn::Var mrf_forward(nn::Graph<double>&, nn::Var, const std::string&, const MRFModuleConfig&);
template void declare_unet(nn::ParamStore<float>&, const std::string&, const UNetConfig&);
template void declare_unet(nn::ParamStore<double>&, const std::string&, const UNetConfig&);
template nn::Var unet_forward(nn::Graph<float>&, nn::Var, const std::string&, const UNetConfig&);
template nn::Var unet_forward(nn::Graph<double>&, nn::Var, const std::string&, const UNetConfig&);

}  // namespace gprinv::dmrf
