#include <cmath>
#include <random>

#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"
#include "gprinv/nn.hpp"

namespace gprinv::nn {

std::string Shape4::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

template <typename T>
std::size_t ParamStore<T>::add(const std::string& name, Shape4 shape, std::size_t fan_in) {
  if (name.empty()) fail(ErrorCode::InvalidConfig, "parameter name is empty");
  if (by_name_.count(name)) fail(ErrorCode::InvalidConfig, "duplicate parameter '" + name + "'");
  Parameter<T> p;
  p.name = name;
  p.value = Tensor4<T>(shape);
  p.fan_in = fan_in;
  by_name_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
std::size_t ParamStore<T>::find(const std::string& name) const noexcept {
  const auto it = by_name_.find(name);
  return it == by_name_.end() ? npos : it->second;
}

template <typename T>
std::size_t ParamStore<T>::index(const std::string& name) const {
  const std::size_t i = find(name);
  if (i == npos) fail(ErrorCode::MissingId, "no parameter '" + name + "'");
  return i;
}

template <typename T>
std::size_t ParamStore<T>::element_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::size_t ParamStore<T>::element_count(const std::string& prefix) const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.value.size();
  }
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) {
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor4<T>(p.value.shape());
    } else {
      std::fill(p.grad.storage().begin(), p.grad.storage().end(), T{});
    }
  }
}

template <typename T>
void ParamStore<T>::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) p.trainable = trainable;
  }
}

template <typename T>
void kaiming_uniform_init(ParamStore<T>& store, std::uint64_t seed) {
  for (auto& p : store) {
    auto& v = p.value.storage();
    if (p.fan_in == 0) {
      std::fill(v.begin(), v.end(), T{});
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
    std::mt19937_64 rng(derive_seed(seed, p.name, 0));
    for (auto& x : v) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      x = static_cast<T>((2.0 * u - 1.0) * bound);
    }
  }
}

template <typename T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg, std::uint64_t t) {
  if (t == 0) fail(ErrorCode::InvalidConfig, "Adam step counter starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& p : store) {
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape()) {
      fail(ErrorCode::ShapeMismatch, "gradient of '" + p.name + "' does not match its parameter");
    }
    if (p.m.shape() != p.value.shape()) {
      p.m = Tensor4<T>(p.value.shape());
      p.v = Tensor4<T>(p.value.shape());
    }
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = p.m.data();
    T* v = p.v.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(w[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void kaiming_uniform_init(ParamStore<float>&, std::uint64_t);
template void kaiming_uniform_init(ParamStore<double>&, std::uint64_t);
template void adam_step(ParamStore<float>&, const AdamConfig&, std::uint64_t);
template void adam_step(ParamStore<double>&, const AdamConfig&, std::uint64_t);

}  // namespace gprinv::nn
