#include <cstdio>
#include <map>
#include <sstream>

#include "gprinv/dmrf.hpp"
#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"

namespace gprinv::dmrf {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(ErrorCode::InvalidConfig, key + ": expected true or false, got '" + v + "'");
}

Activation parse_activation(const std::string& key, const std::string& v) {
  if (v == "relu") return Activation::ReLU;
  if (v == "elu") return Activation::ELU;
  fail(ErrorCode::InvalidConfig, key + ": expected relu or elu, got '" + v + "'");
}

void write_unet(std::ostringstream& out, const std::string& p, const UNetConfig& u) {
  out << p << ".in_channels = " << u.in_channels << '\n';
  out << p << ".out_channels = " << u.out_channels << '\n';
  out << p << ".width_factor = " << num(u.width_factor) << '\n';
  out << p << ".final_activation = " << to_string(u.final_activation) << '\n';
  out << p << ".use_mrf = " << (u.use_mrf ? "true" : "false") << '\n';
  out << p << ".use_skips = " << (u.use_skips ? "true" : "false") << '\n';
}

}  // namespace

const char* to_string(Activation a) noexcept { return a == Activation::ReLU ? "relu" : "elu"; }

const char* to_string(ModelKind k) noexcept {
  switch (k) {
    case ModelKind::DMRF:
      return "dmrf";
    case ModelKind::SMRF:
      return "smrf";
    case ModelKind::UNet:
      return "unet";
    case ModelKind::EncDec:
      return "encdec";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  for (ModelKind k : {ModelKind::DMRF, ModelKind::SMRF, ModelKind::UNet, ModelKind::EncDec}) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorCode::InvalidConfig, "unknown model kind '" + s + "' (dmrf, smrf, unet, encdec)");
}

void DMRFConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) fail(ErrorCode::InvalidConfig, "alpha and beta must be > 0");
  if (!(lr > 0.0)) fail(ErrorCode::InvalidConfig, "learning rate must be > 0");
  if (batch == 0) fail(ErrorCode::InvalidConfig, "batch size must be >= 1");
  stage2.validate();
  if (has_stage1()) {
    stage1.validate();
    if (stage1.in_channels != 1 || stage1.out_channels != 1) {
      fail(ErrorCode::InvalidConfig, "stage 1 maps one channel to one channel");
    }
    const std::size_t want = two_channel_input ? 2 : 1;
    if (stage2.in_channels != want) {
      fail(ErrorCode::InvalidConfig, "stage 2 needs " + std::to_string(want) + " input channels");
    }
  } else if (stage2.in_channels != 1) {
    fail(ErrorCode::InvalidConfig, "a single-stage model takes the one-channel noisy B-scan");
  }
  if (stage2.out_channels != 1) fail(ErrorCode::InvalidConfig, "stage 2 outputs one channel");
}

std::string DMRFConfig::text() const {
  std::ostringstream out;
  out << "kind = " << to_string(kind) << '\n';
  write_unet(out, "stage1", stage1);
  write_unet(out, "stage2", stage2);
  out << "alpha = " << num(alpha) << '\n';
  out << "beta = " << num(beta) << '\n';
  out << "two_channel_input = " << (two_channel_input ? "true" : "false") << '\n';
  out << "end_to_end = " << (end_to_end ? "true" : "false") << '\n';
  out << "auto_balance = " << (auto_balance ? "true" : "false") << '\n';
  out << "epochs = " << epochs << '\n';
  out << "lr = " << num(lr) << '\n';
  out << "batch = " << batch << '\n';
  out << "seed = " << seed << '\n';
  return out.str();
}

DMRFConfig DMRFConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::InvalidConfig, "model config line without '='");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  DMRFConfig c;
  auto take = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorCode::InvalidConfig, "model config lacks '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_size = [&](const std::string& key) {
    const std::string v = take(key);
    try {
      return static_cast<std::size_t>(std::stoull(v));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, key + ": bad integer '" + v + "'");
    }
  };
  auto take_double = [&](const std::string& key) {
    const std::string v = take(key);
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, key + ": bad number '" + v + "'");
    }
  };
  auto take_unet = [&](const std::string& p, UNetConfig& u) {
    u.in_channels = take_size(p + ".in_channels");
    u.out_channels = take_size(p + ".out_channels");
    u.width_factor = take_double(p + ".width_factor");
    u.final_activation = parse_activation(p, take(p + ".final_activation"));
    u.use_mrf = parse_bool(p, take(p + ".use_mrf"));
    u.use_skips = parse_bool(p, take(p + ".use_skips"));
  };
  c.kind = model_kind_from_string(take("kind"));
  take_unet("stage1", c.stage1);
  take_unet("stage2", c.stage2);
  c.alpha = take_double("alpha");
  c.beta = take_double("beta");
  c.two_channel_input = parse_bool("two_channel_input", take("two_channel_input"));
  c.end_to_end = parse_bool("end_to_end", take("end_to_end"));
  c.auto_balance = parse_bool("auto_balance", take("auto_balance"));
  c.epochs = take_size("epochs");
  c.lr = take_double("lr");
  c.batch = take_size("batch");
  c.seed = static_cast<std::uint64_t>(take_size("seed"));
  if (!kv.empty()) fail(ErrorCode::InvalidConfig, "unknown model config key '" + kv.begin()->first + "'");
  c.validate();
  return c;
}

std::string DMRFConfig::hash() const { return to_hex(fnv1a64(text())); }

DMRFConfig DMRFConfig::for_kind(ModelKind kind, double width_factor) {
  DMRFConfig c;
  c.kind = kind;
  c.stage1 = {1, 1, width_factor, Activation::ReLU, true, true};
  c.stage2 = {kind == ModelKind::DMRF ? 2u : 1u, 1, width_factor, Activation::ELU,
              kind == ModelKind::DMRF || kind == ModelKind::SMRF, kind != ModelKind::EncDec};
  return c;
}

template <typename T>
nn::ParamStore<T> build_params(const DMRFConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  nn::ParamStore<T> store;
  if (cfg.has_stage1()) declare_unet(store, "u1.", cfg.stage1);
  declare_unet(store, "u2.", cfg.stage2);
  nn::kaiming_uniform_init(store, init_seed);
  return store;
}

template <typename T>
ForwardResult<T> forward_dmrf(nn::Graph<T>& g, nn::Var noisy, const DMRFConfig& cfg) {
  if (g.value(noisy).shape().c != 1) {
    fail(ErrorCode::ShapeMismatch, "noisy input must have one channel, got " +
                                       g.value(noisy).shape().str());
  }
  ForwardResult<T> r;
  if (!cfg.has_stage1()) {
    r.perm = unet_forward(g, noisy, "u2.", cfg.stage2);
    return r;
  }
  const nn::Var y1 = unet_forward(g, noisy, "u1.", cfg.stage1);
  const nn::Var in2 = cfg.two_channel_input ? g.concat({noisy, y1}) : y1;
  r.denoised = y1;
  r.perm = unet_forward(g, in2, "u2.", cfg.stage2);
  return r;
}

template <typename T>
LossVars combined_loss(nn::Graph<T>& g, nn::Var y1, nn::Var y1_hat, nn::Var y2, nn::Var y2_hat,
                       double alpha, double beta) {
  LossVars l;
  l.l1 = g.mse(y1_hat, y1);
  l.l2 = g.mse(y2_hat, y2);
  l.total = g.linear(l.l1, static_cast<T>(alpha), l.l2, static_cast<T>(beta));
  return l;
}

template nn::ParamStore<float> build_params(const DMRFConfig&, std::uint64_t);
template nn::ParamStore<double> build_params(const DMRFConfig&, std::uint64_t);
template ForwardResult<float> forward_dmrf(nn::Graph<float>&, nn::Var, const DMRFConfig&);
template ForwardResult<double> forward_dmrf(nn::Graph<double>&, nn::Var, const DMRFConfig&);
template LossVars combined_loss(nn::Graph<float>&, nn::Var, nn::Var, nn::Var, nn::Var, double,
                                double);
template LossVars combined_loss(nn::Graph<double>&, nn::Var, nn::Var, nn::Var, nn::Var, double,
                                double);

}  // namespace gprinv::dmrf
