#include <algorithm>
#include <cmath>
#include <type_traits>

#include <Eigen/Core>

#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"
#include "gprinv/nn.hpp"

namespace gprinv::nn {

namespace {

template <typename T>
void check_bias(const Tensor4<T>& w, const Tensor4<T>& b) {
  if (b.shape() != Shape4{1, w.shape().n, 1, 1}) {
    fail(ErrorCode::ShapeMismatch, "bias " + b.shape().str() + " does not match weights " +
                                       w.shape().str());
  }
}

template <typename T>
void check_conv(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b) {
  if (w.shape().c != x.shape().c || w.shape().h != w.shape().w || w.shape().h == 0) {
    fail(ErrorCode::ShapeMismatch,
         "conv weights " + w.shape().str() + " do not fit input " + x.shape().str());
  }
  check_bias(w, b);
}

// Output rows y whose input row y + k - pad_lo is inside [0, n).
struct Span {
  std::size_t lo, hi;
};
Span valid(std::size_t n, std::size_t k, std::size_t pad_lo) {
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad_lo);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n),
                                                     static_cast<std::ptrdiff_t>(n) - off);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void conv_backward_direct(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& gy,
                          Tensor4<T>* gx, Tensor4<T>* gw) {
  const auto [N, Ci, H, W] = x.shape();
  const std::size_t Co = w.shape().n, K = w.shape().h, pl = (K - 1) / 2;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      const T* g = gy.data() + (n * Co + co) * H * W;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* in = x.data() + (n * Ci + ci) * H * W;
        T* gin = gx ? gx->data() + (n * Ci + ci) * H * W : nullptr;
        for (std::size_t ky = 0; ky < K; ++ky) {
          const Span ys = valid(H, ky, pl);
          for (std::size_t kx = 0; kx < K; ++kx) {
            const Span xs = valid(W, kx, pl);
            const std::size_t wi = ((co * Ci + ci) * K + ky) * K + kx;
            const T wv = w.data()[wi];
            T acc{};
            for (std::size_t y = ys.lo; y < ys.hi; ++y) {
              const std::size_t row = (y + ky - pl) * W;
              const T* grow = g + y * W;
              for (std::size_t xx = xs.lo; xx < xs.hi; ++xx) {
                const std::size_t src = row + (xx + kx - pl);
                acc += grow[xx] * in[src];
                if (gin) gin[src] += wv * grow[xx];
              }
            }
            if (gw) gw->data()[wi] += acc;
          }
        }
      }
    }
  }
}

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Keeps the im2col buffer near 16 MB.
std::size_t chunk_samples(std::size_t rows, std::size_t plane) {
  constexpr std::size_t kBudget = std::size_t{4} << 20;
  return std::max<std::size_t>(1, kBudget / std::max<std::size_t>(1, rows * plane));
}

// cols [Ci*K*K, nb*H*W] for samples [n0, n0 + nb).
void im2col(const Tensor4<float>& x, std::size_t n0, std::size_t nb, std::size_t K,
            std::vector<float>& cols) {
  const auto [N, Ci, H, W] = x.shape();
  (void)N;
  const std::size_t pl = (K - 1) / 2, plane = H * W, P = nb * plane;
  cols.assign(Ci * K * K * P, 0.0f);
  for (std::size_t ci = 0; ci < Ci; ++ci) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      const Span ys = valid(H, ky, pl);
      for (std::size_t kx = 0; kx < K; ++kx) {
        const Span xs = valid(W, kx, pl);
        float* row = cols.data() + ((ci * K + ky) * K + kx) * P;
        for (std::size_t s = 0; s < nb; ++s) {
          const float* in = x.data() + ((n0 + s) * Ci + ci) * plane;
          float* dst = row + s * plane;
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const float* src = in + (y + ky - pl) * W;
            std::copy(src + (xs.lo + kx - pl), src + (xs.hi + kx - pl), dst + y * W + xs.lo);
          }
        }
      }
    }
  }
}

void col2im(const std::vector<float>& cols, std::size_t n0, std::size_t nb, std::size_t K,
            Tensor4<float>& gx) {
  const auto [N, Ci, H, W] = gx.shape();
  (void)N;
  const std::size_t pl = (K - 1) / 2, plane = H * W, P = nb * plane;
  for (std::size_t ci = 0; ci < Ci; ++ci) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      const Span ys = valid(H, ky, pl);
      for (std::size_t kx = 0; kx < K; ++kx) {
        const Span xs = valid(W, kx, pl);
        const float* row = cols.data() + ((ci * K + ky) * K + kx) * P;
        for (std::size_t s = 0; s < nb; ++s) {
          float* out = gx.data() + ((n0 + s) * Ci + ci) * plane;
          const float* src = row + s * plane;
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            float* dst = out + (y + ky - pl) * W;
            for (std::size_t xx = xs.lo; xx < xs.hi; ++xx) dst[xx + kx - pl] += src[y * W + xx];
          }
        }
      }
    }
  }
}

void conv_backward_gemm(const Tensor4<float>& x, const Tensor4<float>& w, const Tensor4<float>& gy,
                        Tensor4<float>* gx, Tensor4<float>* gw) {
  const auto [N, Ci, H, W] = x.shape();
  const std::size_t Co = w.shape().n, K = w.shape().h, rows = Ci * K * K, plane = H * W;
  const std::size_t chunk = chunk_samples(rows, plane);
  CMapMat wm(w.data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(rows));
  std::vector<float> cols, gyc, gcols;
  RowMat gw_acc = RowMat::Zero(static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(rows));
  for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
    const std::size_t nb = std::min(chunk, N - n0), P = nb * plane;
    gyc.resize(Co * P);
    for (std::size_t s = 0; s < nb; ++s) {
      for (std::size_t co = 0; co < Co; ++co) {
        const float* src = gy.data() + ((n0 + s) * Co + co) * plane;
        std::copy(src, src + plane, gyc.data() + co * P + s * plane);
      }
    }
    CMapMat gym(gyc.data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(P));
    if (gw) {
      im2col(x, n0, nb, K, cols);
      CMapMat cm(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(P));
      gw_acc.noalias() += gym * cm.transpose();
    }
    if (gx) {
      gcols.resize(rows * P);
      MapMat gc(gcols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(P));
      gc.noalias() = wm.transpose() * gym;
      col2im(gcols, n0, nb, K, *gx);
    }
  }
  if (gw) {
    for (std::size_t i = 0; i < Co * rows; ++i) gw->data()[i] += gw_acc.data()[i];
  }
}

template <typename T>
void check_finite(const Tensor4<T>& t, const char* op) {
  for (const T v : t.storage()) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, std::string("non-finite value from ") + op);
  }
}

}  // namespace

template <typename T>
Tensor4<T> conv2d_direct(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b) {
  check_conv(x, w, b);
  const auto [N, Ci, H, W] = x.shape();
  const std::size_t Co = w.shape().n, K = w.shape().h, pl = (K - 1) / 2;
  Tensor4<T> out(N, Co, H, W);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      T* o = out.data() + (n * Co + co) * H * W;
      std::fill(o, o + H * W, b.data()[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* in = x.data() + (n * Ci + ci) * H * W;
        for (std::size_t ky = 0; ky < K; ++ky) {
          const Span ys = valid(H, ky, pl);
          for (std::size_t kx = 0; kx < K; ++kx) {
            const Span xs = valid(W, kx, pl);
            const T wv = w.data()[((co * Ci + ci) * K + ky) * K + kx];
            for (std::size_t y = ys.lo; y < ys.hi; ++y) {
              const T* src = in + (y + ky - pl) * W;
              T* dst = o + y * W;
              for (std::size_t xx = xs.lo; xx < xs.hi; ++xx) dst[xx] += wv * src[xx + kx - pl];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor4<float> conv2d_gemm(const Tensor4<float>& x, const Tensor4<float>& w,
                           const Tensor4<float>& b) {
  check_conv(x, w, b);
  const auto [N, Ci, H, W] = x.shape();
  const std::size_t Co = w.shape().n, K = w.shape().h, rows = Ci * K * K, plane = H * W;
  Tensor4<float> out(N, Co, H, W);
  const std::size_t chunk = chunk_samples(rows, plane);
  CMapMat wm(w.data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(rows));
  std::vector<float> cols, res;
  for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
    const std::size_t nb = std::min(chunk, N - n0), P = nb * plane;
    im2col(x, n0, nb, K, cols);
    CMapMat cm(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(P));
    res.resize(Co * P);
    MapMat rm(res.data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(P));
    rm.noalias() = wm * cm;
    for (std::size_t s = 0; s < nb; ++s) {
      for (std::size_t co = 0; co < Co; ++co) {
        const float* src = res.data() + co * P + s * plane;
        float* dst = out.data() + ((n0 + s) * Co + co) * plane;
        const float bias = b.data()[co];
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bias;
      }
    }
  }
  return out;
}

// ---- graph plumbing ------------------------------------------------------

template <typename T>
Var Graph<T>::push(Node node, const char* op) {
  check_finite(node.value, op);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
bool Graph<T>::any_requires_grad(std::initializer_list<Var> vs) const {
  for (const Var v : vs) {
    if (nodes_.at(v.id).requires_grad) return true;
  }
  return false;
}

template <typename T>
void Graph<T>::mix_kink(std::uint64_t v) noexcept {
  kinks_ = splitmix64(kinks_ ^ v);
}

template <typename T>
const Tensor4<T>& Graph<T>::value(Var v) const {
  return nodes_.at(v.id).value;
}
template <typename T>
const Tensor4<T>& Graph<T>::value_of(std::size_t node) const {
  return nodes_.at(node).value;
}
template <typename T>
const Tensor4<T>& Graph<T>::grad(Var v) const {
  return nodes_.at(v.id).grad;
}
template <typename T>
const Tensor4<T>& Graph<T>::grad_of(std::size_t node) const {
  return nodes_.at(node).grad;
}
template <typename T>
bool Graph<T>::requires_grad(Var v) const {
  return nodes_.at(v.id).requires_grad;
}

template <typename T>
Tensor4<T>& Graph<T>::grad_ref(std::size_t node) {
  Node& nd = nodes_.at(node);
  if (nd.grad.shape() != nd.value.shape()) nd.grad = Tensor4<T>(nd.value.shape());
  return nd.grad;
}

template <typename T>
Var Graph<T>::input(Tensor4<T> x, bool requires_grad) {
  Node n;
  n.value = std::move(x);
  n.requires_grad = requires_grad && grad_enabled_;
  return push(std::move(n), "input");
}

template <typename T>
Var Graph<T>::param(std::size_t index) {
  if (!store_ || index >= store_->size()) fail(ErrorCode::MissingId, "parameter index out of range");
  const auto& p = (*store_)[index];
  Node n;
  n.value = p.value;
  n.param = index;
  n.requires_grad = p.trainable && grad_enabled_;
  return push(std::move(n), p.name.c_str());
}

template <typename T>
Var Graph<T>::param(const std::string& name) {
  if (!store_) fail(ErrorCode::MissingId, "graph has no parameter store");
  return param(store_->index(name));
}

template <typename T>
Var Graph<T>::custom(const std::vector<Var>& inputs, Tensor4<T> value, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var v : inputs) {
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_.at(v.id).requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n), "custom op");
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (nodes_.at(loss.id).value.size() != 1) {
    fail(ErrorCode::ShapeMismatch, "backward needs a scalar loss");
  }
  grad_ref(loss.id).data()[0] = T{1};
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& nd = nodes_[id];
    if (!nd.requires_grad || nd.grad.empty()) continue;
    if (nd.backward) nd.backward(*this, id);
    if (nd.param != ParamStore<T>::npos) {
      auto& p = (*store_)[nd.param];
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor4<T>(p.value.shape());
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad.data()[i] += nd.grad.data()[i];
    }
  }
}

// ---- layers --------------------------------------------------------------

template <typename T>
Var Graph<T>::conv_node(Var x, Var w, Var b, const char* op) {
  const Tensor4<T>& xv = value(x);
  const Tensor4<T>& wv = value(w);
  const Tensor4<T>& bv = value(b);
  Node n;
  if constexpr (std::is_same_v<T, float>) {
    n.value = conv2d_gemm(xv, wv, bv);
  } else {
    n.value = conv2d_direct(xv, wv, bv);
  }
  n.inputs = {x.id, w.id, b.id};
  n.requires_grad = any_requires_grad({x, w, b});
  if (n.requires_grad) {
    n.backward = [](Graph& g, std::size_t self) {
      const auto in = g.inputs_of(self);
      const Tensor4<T>& gy = g.grad_of(self);
      Tensor4<T>* gx = g.nodes_[in[0]].requires_grad ? &g.grad_ref(in[0]) : nullptr;
      Tensor4<T>* gw = g.nodes_[in[1]].requires_grad ? &g.grad_ref(in[1]) : nullptr;
      if (gx || gw) {
        if constexpr (std::is_same_v<T, float>) {
          conv_backward_gemm(g.value_of(in[0]), g.value_of(in[1]), gy, gx, gw);
        } else {
          conv_backward_direct(g.value_of(in[0]), g.value_of(in[1]), gy, gx, gw);
        }
      }
      if (g.nodes_[in[2]].requires_grad) {
        Tensor4<T>& gb = g.grad_ref(in[2]);
        const auto [N, C, H, W] = gy.shape();
        for (std::size_t nn = 0; nn < N; ++nn) {
          for (std::size_t c = 0; c < C; ++c) {
            const T* src = gy.data() + (nn * C + c) * H * W;
            T acc{};
            for (std::size_t i = 0; i < H * W; ++i) acc += src[i];
            gb.data()[c] += acc;
          }
        }
      }
    };
  }
  return push(std::move(n), op);
}

template <typename T>
Var Graph<T>::conv2d(Var x, Var w, Var b) {
  if (value(w).shape().h % 2 == 0) {
    fail(ErrorCode::ShapeMismatch, "conv2d needs an odd kernel, got " + value(w).shape().str());
  }
  return conv_node(x, w, b, "conv2d");
}

template <typename T>
Var Graph<T>::upsample2(Var x) {
  const Tensor4<T>& xv = value(x);
  const auto [N, C, H, W] = xv.shape();
  Node n;
  n.value = Tensor4<T>(N, C, 2 * H, 2 * W);
  for (std::size_t p = 0; p < N * C; ++p) {
    const T* src = xv.data() + p * H * W;
    T* dst = n.value.data() + p * 4 * H * W;
    for (std::size_t y = 0; y < 2 * H; ++y) {
      for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
    }
  }
  n.inputs = {x.id};
  n.requires_grad = any_requires_grad({x});
  if (n.requires_grad) {
    n.backward = [](Graph& g, std::size_t self) {
      const std::size_t in = g.inputs_of(self)[0];
      Tensor4<T>& gx = g.grad_ref(in);
      const Tensor4<T>& gy = g.grad_of(self);
      const auto [N, C, H, W] = gx.shape();
      for (std::size_t p = 0; p < N * C; ++p) {
        const T* src = gy.data() + p * 4 * H * W;
        T* dst = gx.data() + p * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t xx = 0; xx < W; ++xx) {
            const T* q = src + 2 * y * 2 * W + 2 * xx;
            dst[y * W + xx] += (q[0] + q[1]) + (q[2 * W] + q[2 * W + 1]);
          }
        }
      }
    };
  }
  return push(std::move(n), "upsample2");
}

template <typename T>
Var Graph<T>::upconv2(Var x, Var w, Var b) {
  if (value(w).shape().h != 2 || value(w).shape().w != 2) {
    fail(ErrorCode::ShapeMismatch, "upconv2 needs 2x2 weights, got " + value(w).shape().str());
  }
  return conv_node(upsample2(x), w, b, "upconv2");
}

template <typename T>
Var Graph<T>::maxpool2(Var x) {
  const Tensor4<T>& xv = value(x);
  const auto [N, C, H, W] = xv.shape();
  if (H % 2 != 0 || W % 2 != 0) {
    fail(ErrorCode::OddSpatialDim, "maxpool2 needs even dimensions, got " + xv.shape().str());
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  Node n;
  n.value = Tensor4<T>(N, C, Ho, Wo);
  std::vector<std::uint32_t> arg(n.value.size());
  for (std::size_t p = 0; p < N * C; ++p) {
    const T* src = xv.data() + p * H * W;
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        const std::size_t base = 2 * y * W + 2 * xx;
        const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (src[cand[k]] > src[best]) best = cand[k];
        }
        const std::size_t o = p * Ho * Wo + y * Wo + xx;
        n.value.data()[o] = src[best];
        arg[o] = static_cast<std::uint32_t>(p * H * W + best);
      }
    }
  }
  if (track_kinks_) {
    for (const auto a : arg) mix_kink(a);
  }
  n.inputs = {x.id};
  n.requires_grad = any_requires_grad({x});
  if (n.requires_grad) {
    n.backward = [arg = std::move(arg)](Graph& g, std::size_t self) {
      Tensor4<T>& gx = g.grad_ref(g.inputs_of(self)[0]);
      const Tensor4<T>& gy = g.grad_of(self);
      for (std::size_t o = 0; o < arg.size(); ++o) gx.data()[arg[o]] += gy.data()[o];
    };
  }
  return push(std::move(n), "maxpool2");
}

template <typename T>
Var Graph<T>::concat(const std::vector<Var>& xs) {
  if (xs.empty()) fail(ErrorCode::ShapeMismatch, "concat of nothing");
  const Shape4 s0 = value(xs[0]).shape();
  std::size_t C = 0;
  for (const Var v : xs) {
    const Shape4 s = value(v).shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      fail(ErrorCode::ShapeMismatch, "concat of " + s0.str() + " and " + s.str());
    }
    C += s.c;
  }
  const std::size_t plane = s0.h * s0.w;
  Node n;
  n.value = Tensor4<T>(s0.n, C, s0.h, s0.w);
  for (std::size_t b = 0; b < s0.n; ++b) {
    T* dst = n.value.data() + b * C * plane;
    for (const Var v : xs) {
      const Tensor4<T>& t = value(v);
      const std::size_t len = t.shape().c * plane;
      std::copy(t.data() + b * len, t.data() + (b + 1) * len, dst);
      dst += len;
    }
  }
  for (const Var v : xs) {
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) {
    n.backward = [](Graph& g, std::size_t self) {
      const Tensor4<T>& gy = g.grad_of(self);
      const auto [N, C, H, W] = gy.shape();
      std::size_t offset = 0;
      for (const std::size_t in : g.inputs_of(self)) {
        const std::size_t ci = g.value_of(in).shape().c;
        if (g.nodes_[in].requires_grad) {
          Tensor4<T>& gx = g.grad_ref(in);
          for (std::size_t b = 0; b < N; ++b) {
            const T* src = gy.data() + (b * C + offset) * H * W;
            T* dst = gx.data() + b * ci * H * W;
            for (std::size_t i = 0; i < ci * H * W; ++i) dst[i] += src[i];
          }
        }
        offset += ci;
      }
    };
  }
  return push(std::move(n), "concat");
}

template <typename T>
Var Graph<T>::relu(Var x) {
  const Tensor4<T>& xv = value(x);
  Node n;
  n.value = Tensor4<T>(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    n.value.data()[i] = xv.data()[i] > T{0} ? xv.data()[i] : T{0};
  }
  if (track_kinks_) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      word = (word << 1) | (xv.data()[i] > T{0} ? 1u : 0u);
      if (i % 64 == 63) mix_kink(word);
    }
    mix_kink(word);
  }
  n.inputs = {x.id};
  n.requires_grad = any_requires_grad({x});
  if (n.requires_grad) {
    n.backward = [](Graph& g, std::size_t self) {
      const std::size_t in = g.inputs_of(self)[0];
      const Tensor4<T>& xv = g.value_of(in);
      const Tensor4<T>& gy = g.grad_of(self);
      Tensor4<T>& gx = g.grad_ref(in);
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv.data()[i] > T{0}) gx.data()[i] += gy.data()[i];
      }
    };
  }
  return push(std::move(n), "relu");
}

template <typename T>
Var Graph<T>::elu(Var x) {
  const Tensor4<T>& xv = value(x);
  Node n;
  n.value = Tensor4<T>(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv.data()[i];
    n.value.data()[i] = v > T{0} ? v : std::expm1(v);
  }
  n.inputs = {x.id};
  n.requires_grad = any_requires_grad({x});
  if (n.requires_grad) {
    n.backward = [](Graph& g, std::size_t self) {
      const std::size_t in = g.inputs_of(self)[0];
      const Tensor4<T>& xv = g.value_of(in);
      const Tensor4<T>& yv = g.value_of(self);
      const Tensor4<T>& gy = g.grad_of(self);
      Tensor4<T>& gx = g.grad_ref(in);
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const T d = xv.data()[i] >= T{0} ? T{1} : yv.data()[i] + T{1};
        gx.data()[i] += d * gy.data()[i];
      }
    };
  }
  return push(std::move(n), "elu");
}

template <typename T>
Var Graph<T>::mse(Var pred, Var target) {
  const Tensor4<T>& p = value(pred);
  const Tensor4<T>& t = value(target);
  if (p.shape() != t.shape()) {
    fail(ErrorCode::ShapeMismatch, "mse of " + p.shape().str() + " and " + t.shape().str());
  }
  if (p.empty()) fail(ErrorCode::ShapeMismatch, "mse of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p.data()[i]) - static_cast<double>(t.data()[i]);
    acc += d * d;
  }
  Node n;
  n.value = Tensor4<T>(1, 1, 1, 1, static_cast<T>(acc / static_cast<double>(p.size())));
  n.inputs = {pred.id, target.id};
  n.requires_grad = any_requires_grad({pred, target});
  if (n.requires_grad) {
    n.backward = [](Graph& g, std::size_t self) {
      const auto in = g.inputs_of(self);
      const Tensor4<T>& p = g.value_of(in[0]);
      const Tensor4<T>& t = g.value_of(in[1]);
      const T scale = static_cast<T>(2) * g.grad_of(self).data()[0] / static_cast<T>(p.size());
      for (int side = 0; side < 2; ++side) {
        if (!g.nodes_[in[side]].requires_grad) continue;
        Tensor4<T>& gx = g.grad_ref(in[side]);
        const T sign = side == 0 ? T{1} : T{-1};
        for (std::size_t i = 0; i < p.size(); ++i) {
          gx.data()[i] += sign * scale * (p.data()[i] - t.data()[i]);
        }
      }
    };
  }
  return push(std::move(n), "mse");
}

template <typename T>
Var Graph<T>::linear(Var a, T wa, Var b, T wb) {
  const Tensor4<T>& av = value(a);
  const Tensor4<T>& bv = value(b);
  if (av.shape() != bv.shape()) {
    fail(ErrorCode::ShapeMismatch, "linear of " + av.shape().str() + " and " + bv.shape().str());
  }
  Node n;
  n.value = Tensor4<T>(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    n.value.data()[i] = wa * av.data()[i] + wb * bv.data()[i];
  }
  n.inputs = {a.id, b.id};
  n.requires_grad = any_requires_grad({a, b});
  if (n.requires_grad) {
    n.backward = [wa, wb](Graph& g, std::size_t self) {
      const auto in = g.inputs_of(self);
      const Tensor4<T>& gy = g.grad_of(self);
      const T ws[2] = {wa, wb};
      for (int side = 0; side < 2; ++side) {
        if (!g.nodes_[in[side]].requires_grad) continue;
        Tensor4<T>& gx = g.grad_ref(in[side]);
        for (std::size_t i = 0; i < gy.size(); ++i) gx.data()[i] += ws[side] * gy.data()[i];
      }
    };
  }
  return push(std::move(n), "linear");
}

template class Graph<float>;
template class Graph<double>;
template Tensor4<float> conv2d_direct(const Tensor4<float>&, const Tensor4<float>&,
                                      const Tensor4<float>&);
template Tensor4<double> conv2d_direct(const Tensor4<double>&, const Tensor4<double>&,
                                       const Tensor4<double>&);

}  // namespace gprinv::nn
