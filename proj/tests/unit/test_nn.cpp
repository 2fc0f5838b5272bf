#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "gprinv/error.hpp"
#include "gprinv/nn.hpp"

using namespace gprinv;
using namespace gprinv::nn;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

template <typename T>
Tensor4<T> random_tensor(Shape4 s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<T> t(s);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

// Textbook convolution: one output element at a time, bias first, then
// channels, kernel rows, kernel columns; taps outside the image skipped.
Tensor4<double> naive_conv(const Tensor4<double>& x, const Tensor4<double>& w,
                           const Tensor4<double>& b) {
  const auto [N, Ci, H, W] = x.shape();
  const std::size_t Co = w.shape().n, K = w.shape().h;
  const long pl = static_cast<long>((K - 1) / 2);
  Tensor4<double> out(N, Co, H, W);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          double acc = b(0, co, 0, 0);
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = static_cast<long>(y + ky) - pl;
                const long ix = static_cast<long>(xx + kx) - pl;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                  continue;
                acc += w(co, ci, ky, kx) * x(n, ci, static_cast<std::size_t>(iy),
                                               static_cast<std::size_t>(ix));
              }
          out(n, co, y, xx) = acc;
        }
  return out;
}

Tensor4<double> naive_maxpool(const Tensor4<double>& x) {
  const auto [N, C, H, W] = x.shape();
  Tensor4<double> out(N, C, H / 2, W / 2);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H / 2; ++y)
        for (std::size_t xx = 0; xx < W / 2; ++xx)
          out(n, c, y, xx) = std::max(std::max(x(n, c, 2 * y, 2 * xx), x(n, c, 2 * y, 2 * xx + 1)),
                                      std::max(x(n, c, 2 * y + 1, 2 * xx), x(n, c, 2 * y + 1, 2 * xx + 1)));
  return out;
}

// Store with one conv layer "w"/"b".
ParamStore<double> conv_store(std::size_t co, std::size_t ci, std::size_t k, std::uint64_t seed) {
  ParamStore<double> s;
  s.add("w", {co, ci, k, k}, ci * k * k);
  s.add("b", {1, co, 1, 1}, 0);
  kaiming_uniform_init(s, seed);
  std::mt19937_64 rng(seed + 99);
  for (auto& v : s[1].value.storage()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  return s;
}

Var target_loss(Graph<double>& g, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return g.mse(y, g.input(random_tensor<double>(g.value(y).shape(), rng)));
}

}  // namespace

TEST_CASE("conv2d hand cases") {
  SUBCASE("1x1 identity") {
    std::mt19937_64 rng(1);
    ParamStore<double> s;
    s.add("w", {3, 3, 1, 1}, 3);
    s.add("b", {1, 3, 1, 1}, 0);
    for (std::size_t c = 0; c < 3; ++c) s[0].value(c, c, 0, 0) = 1.0;
    Graph<double> g(&s);
    const auto x = random_tensor<double>({2, 3, 5, 4}, rng);
    const Var y = g.conv2d(g.input(x), g.param("w"), g.param("b"));
    CHECK(g.value(y) == x);
  }
  SUBCASE("3x3 ones on 3x3 ones") {
    for (int precision = 0; precision < 2; ++precision) {
      Tensor4<float> x(1, 1, 3, 3, 1.0f), w(1, 1, 3, 3, 1.0f), b(1, 1, 1, 1, 0.0f);
      const Tensor4<float> y = precision == 0 ? conv2d_gemm(x, w, b) : conv2d_direct(x, w, b);
      CHECK(y(0, 0, 1, 1) == 9.0f);
      CHECK(y(0, 0, 0, 0) == 4.0f);
      CHECK(y(0, 0, 2, 2) == 4.0f);
      CHECK(y(0, 0, 0, 1) == 6.0f);
    }
  }
  SUBCASE("shape errors") {
    Graph<double> g;
    const Var x = g.input(Tensor4<double>(1, 2, 4, 4));
    const Var w = g.input(Tensor4<double>(3, 1, 3, 3));
    const Var w2 = g.input(Tensor4<double>(3, 2, 2, 2));
    const Var b = g.input(Tensor4<double>(1, 3, 1, 1));
    const Var bad_b = g.input(Tensor4<double>(1, 2, 1, 1));
    CHECK(code_of([&] { g.conv2d(x, w, b); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { g.conv2d(x, w2, b); }) == ErrorCode::ShapeMismatch);
    const Var w3 = g.input(Tensor4<double>(3, 2, 3, 3));
    CHECK(code_of([&] { g.conv2d(x, w3, bad_b); }) == ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { g.upconv2(x, w3, b); }) == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("conv2d and maxpool2 match textbook loops bit for bit in double") {
  std::mt19937_64 rng(7);
  for (std::size_t k : {1u, 3u, 5u}) {
    for (int rep = 0; rep < 3; ++rep) {
      const Shape4 xs{2, 3, 7 + static_cast<std::size_t>(rep), 6};
      const auto x = random_tensor<double>(xs, rng);
      const auto w = random_tensor<double>({4, 3, k, k}, rng);
      const auto b = random_tensor<double>({1, 4, 1, 1}, rng);
      Graph<double> g;
      const Var y = g.conv2d(g.input(x), g.input(w), g.input(b));
      CHECK(g.value(y) == naive_conv(x, w, b));
    }
  }
  for (int rep = 0; rep < 5; ++rep) {
    const auto x = random_tensor<double>({2, 3, 8, 6}, rng);
    Graph<double> g;
    CHECK(g.value(g.maxpool2(g.input(x))) == naive_maxpool(x));
  }
}

TEST_CASE("float GEMM path agrees with the double reference") {
  std::mt19937_64 rng(11);
  for (std::size_t k : {1u, 3u}) {
    const auto x = random_tensor<double>({3, 5, 9, 12}, rng);
    const auto w = random_tensor<double>({6, 5, k, k}, rng);
    const auto b = random_tensor<double>({1, 6, 1, 1}, rng);
    const auto ref = naive_conv(x, w, b);
    const auto got = conv2d_gemm(tensor_cast<float>(x), tensor_cast<float>(w), tensor_cast<float>(b));
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(ref.data()[i] - static_cast<double>(got.data()[i])));
    }
    CHECK(worst < 1e-5);
  }
  // Float backward against double backward.
  const auto x = random_tensor<double>({2, 3, 6, 6}, rng);
  auto grads = [&](auto tag) {
    using T = decltype(tag);
    ParamStore<T> s = conv_store(4, 3, 3, 5).cast<T>();
    Graph<T> g(&s);
    const Var in = g.input(tensor_cast<T>(x), true);
    const Var y = g.conv2d(in, g.param("w"), g.param("b"));
    g.backward(g.mse(y, g.input(Tensor4<T>(g.value(y).shape()))));
    std::vector<double> out;
    for (const auto& p : s)
      for (auto v : p.grad.storage()) out.push_back(static_cast<double>(v));
    for (auto v : g.grad(in).storage()) out.push_back(static_cast<double>(v));
    return out;
  };
  const auto gf = grads(0.0f);
  const auto gd = grads(0.0);
  REQUIRE(gf.size() == gd.size());
  for (std::size_t i = 0; i < gf.size(); ++i) CHECK(gf[i] == doctest::Approx(gd[i]).epsilon(1e-4));
}

TEST_CASE("maxpool2") {
  Graph<double> g;
  Tensor4<double> block(1, 1, 2, 2);
  block(0, 0, 0, 0) = 1;
  block(0, 0, 0, 1) = 2;
  block(0, 0, 1, 0) = 3;
  block(0, 0, 1, 1) = 4;
  CHECK(g.value(g.maxpool2(g.input(block))).storage() == std::vector<double>{4.0});

  const Var c = g.maxpool2(g.input(Tensor4<double>(2, 3, 6, 8, 2.5)));
  CHECK(g.value(c).shape() == Shape4{2, 3, 3, 4});
  for (double v : g.value(c).storage()) CHECK(v == 2.5);

  CHECK(code_of([&] { g.maxpool2(g.input(Tensor4<double>(1, 1, 3, 4))); }) ==
        ErrorCode::OddSpatialDim);

  // Ties route the gradient to the first element of the block.
  Graph<double> t;
  const Var x = t.input(Tensor4<double>(1, 1, 2, 2, 1.0), true);
  const Var s = t.mse(t.maxpool2(x), t.input(Tensor4<double>(1, 1, 1, 1, 0.0)));
  t.backward(s);
  CHECK(t.grad(x).storage() == std::vector<double>{2.0, 0.0, 0.0, 0.0});
}

TEST_CASE("upconv2") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  Graph<double> g;
  Tensor4<double> w(2, 2, 2, 2), b(1, 2, 1, 1);
  w(0, 0, 0, 0) = 1.0;  // anchor tap only: output is the plain upsample
  w(1, 1, 0, 0) = 1.0;
  const Var y = g.upconv2(g.input(x), g.input(w), g.input(b));
  REQUIRE(g.value(y).shape() == Shape4{1, 2, 8, 8});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t q = 0; q < 8; ++q) CHECK(g.value(y)(0, c, r, q) == x(0, c, r / 2, q / 2));

  // Constant field, averaging kernel: constant everywhere except the high
  // edges, where the zero padding removes half the taps (one corner keeps
  // a quarter).
  Tensor4<double> cst(1, 1, 4, 4, 2.0), avg(1, 1, 2, 2, 0.25), zb(1, 1, 1, 1);
  const Var z = g.upconv2(g.input(cst), g.input(avg), g.input(zb));
  const auto& zv = g.value(z);
  CHECK(zv(0, 0, 3, 3) == 2.0);
  CHECK(zv(0, 0, 0, 0) == 2.0);
  CHECK(zv(0, 0, 7, 3) == 1.0);
  CHECK(zv(0, 0, 3, 7) == 1.0);
  CHECK(zv(0, 0, 7, 7) == 0.5);
}

TEST_CASE("concat") {
  std::mt19937_64 rng(4);
  const auto a = random_tensor<double>({2, 3, 4, 5}, rng);
  const auto b = random_tensor<double>({2, 2, 4, 5}, rng);
  Graph<double> g;
  const Var va = g.input(a), vb = g.input(b);
  CHECK(g.value(g.concat({va})) == a);
  const auto& ab = g.value(g.concat({va, vb}));
  REQUIRE(ab.shape() == Shape4{2, 5, 4, 5});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(ab(n, c, y, x) == a(n, c, y, x));
        for (std::size_t c = 0; c < 2; ++c) CHECK(ab(n, 3 + c, y, x) == b(n, c, y, x));
      }
  const Var big = g.concat({g.input(Tensor4<double>(1, 64, 2, 2)), g.input(Tensor4<double>(1, 64, 2, 2))});
  CHECK(g.value(big).shape().c == 128);
  CHECK(code_of([&] { g.concat({va, g.input(Tensor4<double>(2, 1, 4, 4))}); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("activations and mse") {
  Graph<double> g;
  Tensor4<double> x(1, 1, 1, 4);
  x.storage() = {-3.0, 5.0, -1.0, -60.0};
  const Var vx = g.input(x);
  CHECK(g.value(g.relu(vx)).storage() == std::vector<double>{0.0, 5.0, 0.0, 0.0});
  const auto& e = g.value(g.elu(vx)).storage();
  CHECK(e[1] == 5.0);
  CHECK(e[2] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
  CHECK(e[2] == doctest::Approx(-0.632).epsilon(1e-3));
  CHECK(e[3] == doctest::Approx(-1.0).epsilon(1e-15));

  // Subgradients at zero: 0 for relu, 1 for elu.
  Graph<double> z;
  const Var v0 = z.input(Tensor4<double>(1, 1, 1, 1, 0.0), true);
  z.backward(z.linear(z.relu(v0), 1.0, z.elu(v0), 1.0));
  CHECK(z.grad(v0).storage()[0] == 1.0);
  Graph<double> r;
  const Var r0 = r.input(Tensor4<double>(1, 1, 1, 1, 0.0), true);
  r.backward(r.relu(r0));
  CHECK(r.grad(r0).storage()[0] == 0.0);

  Graph<double> m;
  const Var zeros = m.input(Tensor4<double>(2, 1, 3, 3, 0.0));
  const Var twos = m.input(Tensor4<double>(2, 1, 3, 3, 2.0));
  CHECK(m.value(m.mse(twos, zeros)).storage()[0] == 4.0);
  CHECK(m.value(m.mse(twos, twos)).storage()[0] == 0.0);
  CHECK(code_of([&] { m.mse(twos, m.input(Tensor4<double>(1, 1, 3, 3))); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("non-finite values are hard errors") {
  Graph<double> g;
  CHECK(code_of([&] { g.input(Tensor4<double>(1, 1, 1, 1, std::nan(""))); }) == ErrorCode::NonFinite);
  ParamStore<double> s = conv_store(1, 1, 3, 1);
  const Tensor4<double> x(1, 1, 4, 4, 1.0);
  const auto blowup = [](Graph<double>& gg, Var in) {
    const auto& v = gg.value(in);
    Tensor4<double> out(1, 1, 1, 1, v.storage()[0] * 1e308 * 10.0);
    return gg.custom({in}, out, [](Graph<double>&, std::size_t) {});
  };
  CHECK(code_of([&] { grad_check(s, x, blowup); }) == ErrorCode::NonFinite);
}

TEST_CASE("adam") {
  ParamStore<double> s;
  s.add("p", {1, 1, 1, 1}, 0);
  s.zero_grad();
  s[0].grad.storage()[0] = 1.0;
  adam_step(s, AdamConfig{}, 1);
  // t = 1: m_hat = g, v_hat = g^2, step = lr * 1 / (1 + eps).
  CHECK(s[0].value.storage()[0] == doctest::Approx(-1e-4 / (1.0 + 1e-8)).epsilon(1e-12));

  ParamStore<float> z;
  z.add("w", {2, 2, 3, 3}, 18);
  kaiming_uniform_init(z, 3);
  const auto before = z[0].value;
  z.zero_grad();
  adam_step(z, AdamConfig{}, 1);
  CHECK(z[0].value == before);
  for (float v : z[0].m.storage()) CHECK(v == 0.0f);
  for (float v : z[0].v.storage()) CHECK(v == 0.0f);

  auto run = [] {
    ParamStore<float> p;
    p.add("w", {3, 2, 3, 3}, 18);
    p.add("b", {1, 3, 1, 1}, 0);
    kaiming_uniform_init(p, 9);
    std::mt19937_64 rng(2);
    for (std::uint64_t t = 1; t <= 5; ++t) {
      p.zero_grad();
      for (auto& q : p)
        for (auto& g : q.grad.storage()) g = std::uniform_real_distribution<float>(-1, 1)(rng);
      adam_step(p, AdamConfig{}, t);
    }
    return p[0].value;
  };
  CHECK(run() == run());

  ParamStore<double> frozen;
  frozen.add("f", {1, 1, 1, 2}, 0);
  frozen[0].trainable = false;
  frozen.zero_grad();
  frozen[0].grad.storage() = {1.0, 1.0};
  adam_step(frozen, AdamConfig{}, 1);
  CHECK(frozen[0].value.storage() == std::vector<double>{0.0, 0.0});
  CHECK(code_of([&] { adam_step(frozen, AdamConfig{}, 0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("kaiming init") {
  ParamStore<float> a;
  a.add("w1", {8, 4, 3, 3}, 36);
  a.add("b1", {1, 8, 1, 1}, 0);
  a.add("w2", {2, 8, 1, 1}, 8);
  kaiming_uniform_init(a, 42);
  const double bound = std::sqrt(6.0 / 36.0);
  double lo = 1, hi = -1;
  for (float v : a[0].value.storage()) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(hi - lo > bound);  // 288 draws spread over most of the range
  for (float v : a[1].value.storage()) CHECK(v == 0.0f);

  // A parameter's values depend on its name, not on its position.
  ParamStore<float> b;
  b.add("w2", {2, 8, 1, 1}, 8);
  b.add("w1", {8, 4, 3, 3}, 36);
  kaiming_uniform_init(b, 42);
  CHECK(b[1].value == a[0].value);
  CHECK(b[0].value == a[2].value);
  CHECK(code_of([&] { b.add("w1", {1, 1, 1, 1}, 1); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("gradient checks per layer, ten seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    const auto x = random_tensor<double>({2, 4, 8, 8}, rng);
    for (std::size_t k : {1u, 3u, 5u}) {
      ParamStore<double> s = conv_store(3, 4, k, seed);
      const auto rep = grad_check(s, x, [&](Graph<double>& g, Var in) {
        return target_loss(g, g.conv2d(in, g.param("w"), g.param("b")), seed);
      });
      CHECK(rep.max_rel_error < 1e-4);
      CHECK(rep.checked > 0);
    }
    {
      ParamStore<double> s = conv_store(3, 4, 2, seed);
      const auto rep = grad_check(s, random_tensor<double>({2, 4, 4, 4}, rng),
                                  [&](Graph<double>& g, Var in) {
                                    return target_loss(g, g.upconv2(in, g.param("w"), g.param("b")), seed);
                                  });
      CHECK(rep.max_rel_error < 1e-4);
    }
    ParamStore<double> none;
    const auto pool = grad_check(none, x, [&](Graph<double>& g, Var in) {
      return target_loss(g, g.maxpool2(in), seed);
    });
    CHECK(pool.max_rel_error < 1e-4);
    const auto relu = grad_check(none, x, [&](Graph<double>& g, Var in) {
      return target_loss(g, g.relu(in), seed);
    });
    CHECK(relu.max_rel_error < 1e-4);
    const auto elu = grad_check(none, x, [&](Graph<double>& g, Var in) {
      return target_loss(g, g.elu(in), seed);
    });
    CHECK(elu.max_rel_error < 1e-4);
    const auto other = random_tensor<double>({2, 3, 8, 8}, rng);
    const auto cat = grad_check(none, x, [&](Graph<double>& g, Var in) {
      const Var o = g.input(other, true);
      return target_loss(g, g.concat({o, g.elu(in), o}), seed);
    });
    CHECK(cat.max_rel_error < 1e-4);
    const auto lin = grad_check(none, x, [&](Graph<double>& g, Var in) {
      const Var a = target_loss(g, in, seed + 1);
      const Var b = target_loss(g, g.elu(in), seed);
      return g.linear(a, 10.0, b, 1.0);
    });
    CHECK(lin.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradient checker catches a wrong backward") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  ParamStore<double> none;
  // relu forward with a sign-flipped backward.
  const auto rep = grad_check(none, x, [](Graph<double>& g, Var in) {
    Tensor4<double> y = g.value(in);
    for (auto& v : y.storage()) v = std::max(v, 0.0);
    const Var out = g.custom({in}, y, [](Graph<double>& gg, std::size_t self) {
      const std::size_t src = gg.inputs_of(self)[0];
      const auto& xv = gg.value_of(src);
      const auto& gy = gg.grad_of(self);
      auto& gx = gg.grad_ref(src);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (xv.data()[i] > 0) gx.data()[i] -= gy.data()[i];
      }
    });
    return g.mse(out, g.input(Tensor4<double>(y.shape(), -0.3)));
  });
  CHECK(rep.max_rel_error > 0.1);
}

TEST_CASE("backward bookkeeping") {
  ParamStore<float> s;
  s.add("w", {2, 1, 3, 3}, 9);
  s.add("b", {1, 2, 1, 1}, 0);
  kaiming_uniform_init(s, 1);
  s[1].trainable = false;
  s.zero_grad();
  for (int rep = 0; rep < 2; ++rep) {
    Graph<float> g(&s);
    const Var y = g.conv2d(g.input(Tensor4<float>(1, 1, 4, 4, 1.0f)), g.param("w"), g.param("b"));
    g.backward(g.mse(y, g.input(Tensor4<float>(1, 2, 4, 4))));
  }
  // Gradients accumulate across graphs until zero_grad; frozen ones stay 0.
  Graph<float> once(&s);
  ParamStore<float> s2 = s;
  s2.zero_grad();
  Graph<float> g2(&s2);
  const Var y2 = g2.conv2d(g2.input(Tensor4<float>(1, 1, 4, 4, 1.0f)), g2.param("w"), g2.param("b"));
  g2.backward(g2.mse(y2, g2.input(Tensor4<float>(1, 2, 4, 4))));
  for (std::size_t i = 0; i < s[0].grad.size(); ++i) {
    CHECK(s[0].grad.data()[i] == doctest::Approx(2.0f * s2[0].grad.data()[i]));
  }
  for (float v : s[1].grad.storage()) CHECK(v == 0.0f);
  CHECK(code_of([&] { once.backward(once.input(Tensor4<float>(1, 1, 1, 2))); }) ==
        ErrorCode::ShapeMismatch);
  CHECK(s.element_count() == 20);
  CHECK(s.element_count("w") == 18);
}
