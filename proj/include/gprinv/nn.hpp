#pragma once

// Small tape-based autodiff for the convolutional networks: NCHW tensors,
// a parameter store with Adam moments, the layer set the U-Nets need and a
// central-difference gradient checker.
//
// Conventions: convolution is cross-correlation with zero padding, pad_lo =
// (k-1)/2 and pad_hi = k-1-pad_lo, so odd kernels are centred and the 2x2
// kernel of the up-convolution pads on the high side only. float is the
// training type; double is the verification type.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

namespace gprinv::nn {

struct Shape4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const noexcept { return n * c * h * w; }
  std::string str() const;
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 s, T fill = T{}) : shape_(s), data_(s.size(), fill) {}
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{})
      : Tensor4(Shape4{n, c, h, w}, fill) {}

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor4<To> tensor_cast(const Tensor4<From>& t) {
  Tensor4<To> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out.data()[i] = static_cast<To>(t.data()[i]);
  return out;
}

// ---- parameters ----------------------------------------------------------

template <typename T>
struct Parameter {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;
  Tensor4<T> m;  // Adam first moment
  Tensor4<T> v;  // Adam second moment
  std::size_t fan_in = 0;  // 0 marks a bias (initialized to zero)
  bool trainable = true;
};

template <typename T>
class ParamStore {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  // InvalidConfig on a duplicate name.
  std::size_t add(const std::string& name, Shape4 shape, std::size_t fan_in);
  std::size_t find(const std::string& name) const noexcept;
  // MissingId if absent.
  std::size_t index(const std::string& name) const;

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) noexcept { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const noexcept { return params_[i]; }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  std::size_t element_count() const noexcept;
  // Elements of every parameter whose name starts with prefix.
  std::size_t element_count(const std::string& prefix) const noexcept;
  void zero_grad();
  void set_trainable(const std::string& prefix, bool trainable);

  // Same names, shapes and values in another precision; moments reset.
  template <typename To>
  ParamStore<To> cast() const {
    ParamStore<To> out;
    for (const auto& p : params_) {
      const std::size_t i = out.add(p.name, p.value.shape(), p.fan_in);
      out[i].value = tensor_cast<To>(p.value);
      out[i].trainable = p.trainable;
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Kaiming-uniform on fan-in (bound sqrt(6 / fan_in)) for weights, zero
// biases. Each parameter draws from its own stream keyed by its name, so
// adding a parameter never shifts the others.
template <typename T>
void kaiming_uniform_init(ParamStore<T>& store, std::uint64_t seed);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update of every trainable parameter from its
// accumulated grad, at step t >= 1.
template <typename T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg, std::uint64_t t);

// ---- graph ---------------------------------------------------------------

struct Var {
  std::size_t id = 0;
};

template <typename T>
class Graph {
 public:
  // Called with the graph and the node's own id; adds into input grads
  // through grad_ref().
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  // With grad_enabled false no node records a backward step (inference).
  explicit Graph(ParamStore<T>* store = nullptr, bool grad_enabled = true)
      : store_(store), grad_enabled_(grad_enabled) {}

  Var input(Tensor4<T> x, bool requires_grad = false);
  Var param(std::size_t index);
  Var param(const std::string& name);

  // x [N, Cin, H, W], w [Cout, Cin, k, k], b [1, Cout, 1, 1].
  Var conv2d(Var x, Var w, Var b);
  // Nearest 2x upsample then a 2x2 convolution; w [Cout, Cin, 2, 2].
  Var upconv2(Var x, Var w, Var b);
  Var upsample2(Var x);
  // OddSpatialDim unless H and W are even. Ties go to the first index in
  // row-major block order.
  Var maxpool2(Var x);
  Var concat(const std::vector<Var>& xs);
  Var relu(Var x);
  Var elu(Var x);
  // Mean squared error as a [1,1,1,1] scalar node.
  Var mse(Var pred, Var target);
  // wa * a + wb * b for same-shape nodes.
  Var linear(Var a, T wa, Var b, T wb);
  // Extension point; value must be finite.
  Var custom(const std::vector<Var>& inputs, Tensor4<T> value, BackwardFn backward);

  const Tensor4<T>& value(Var v) const;
  // Empty until backward() reaches the node.
  const Tensor4<T>& grad(Var v) const;
  bool requires_grad(Var v) const;
  const std::vector<std::size_t>& inputs_of(std::size_t node) const { return nodes_[node].inputs; }
  const Tensor4<T>& value_of(std::size_t node) const;
  const Tensor4<T>& grad_of(std::size_t node) const;
  // Zero-initialized on first access.
  Tensor4<T>& grad_ref(std::size_t node);

  // Seeds d(loss)/d(loss) = 1 and runs the tape backwards. Parameter
  // gradients are added into the store's grad tensors.
  void backward(Var loss);

  // Hash of every ReLU sign pattern and max-pool choice seen in forward;
  // the gradient checker uses it to spot finite differences that cross a
  // kink. Off by default since it touches every activation.
  void track_kinks(bool on) noexcept { track_kinks_ = on; }
  std::uint64_t kink_signature() const noexcept { return kinks_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::size_t param = ParamStore<T>::npos;
    bool requires_grad = false;
  };

  Var push(Node node, const char* op);
  bool any_requires_grad(std::initializer_list<Var> vs) const;
  void mix_kink(std::uint64_t v) noexcept;
  Var conv_node(Var x, Var w, Var b, const char* op);

  ParamStore<T>* store_;
  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
  bool track_kinks_ = false;
  std::uint64_t kinks_ = 0x9e3779b97f4a7c15ULL;
};

// ---- reference kernels (exposed for tests) -------------------------------

// Direct convolution accumulating bias, then in (ci, ky, kx) order, per
// output element. The double-precision graph uses this ordering.
template <typename T>
Tensor4<T> conv2d_direct(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b);
// im2col + GEMM path used by the float graph.
Tensor4<float> conv2d_gemm(const Tensor4<float>& x, const Tensor4<float>& w, const Tensor4<float>& b);

// ---- gradient check ------------------------------------------------------

struct GradCheckOptions {
  double rel_step = 1e-5;  // h = rel_step * max(|theta|, 1)
  double floor = 1e-6;  // denominator floor, scaled by max(|loss|, 1)
  // Elements checked per tensor, chosen by a seeded shuffle; 0 = all.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

// Builds the loss on a fresh graph from the store and the input variable.
using LossBuilder = std::function<Var(Graph<double>&, Var input)>;

// Compares backward() against central differences for parameters and the
// input. Throws NonFinite if any evaluation is not finite.
GradCheckReport grad_check(ParamStore<double>& store, const Tensor4<double>& input,
                           const LossBuilder& build, const GradCheckOptions& opts = {});

}  // namespace gprinv::nn
