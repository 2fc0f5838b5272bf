#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gprinv/dmrf.hpp"
#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"

using namespace gprinv;
using namespace gprinv::dmrf;
namespace fs = std::filesystem;

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
nn::Tensor4<T> random_tensor(nn::Shape4 s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  nn::Tensor4<T> t(s);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

std::size_t weight_count(const nn::ParamStore<double>& s, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& p : s) {
    if (p.name.rfind(prefix, 0) == 0 && p.name.size() > 2 &&
        p.name.compare(p.name.size() - 2, 2, ".w") == 0) {
      n += p.value.size();
    }
  }
  return n;
}

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("gprinv_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small dataset shared by the training tests (built once).
const fs::path& tiny_dataset() {
  static const fs::path root = [] {
    const auto dir = scratch_dir("dmrf_data");
    dataset::DatasetConfig c = dataset::DatasetConfig::desk();
    c.one_object = 3;
    c.two_object = 3;
    c.soil_fields = 2;
    c.test_fraction = 1.0 / 3.0;
    c.image_size = 16;
    c.master_seed = 5;
    dataset::build_dataset(c, dir);
    return dir;
  }();
  return root;
}

DMRFConfig tiny_model(ModelKind kind) {
  DMRFConfig c = DMRFConfig::for_kind(kind, 1.0 / 32.0);
  c.epochs = 3;
  c.batch = 2;
  c.lr = 1e-3;
  c.seed = 3;
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("receptive field arithmetic") {
  CHECK(receptive_field({3, 3}, {1, 1}) == 5);
  CHECK(receptive_field({3, 3, 3}, {1, 1, 1}) == 7);
  CHECK(receptive_field({1}, {1}) == 1);
  // Strides widen later layers: 3x3 s2 then 3x3 -> 1 + 2 + 2*2.
  CHECK(receptive_field({3, 3}, {2, 1}) == 7);
  std::vector<std::size_t> fields;
  for (const auto& branch : mrf_branch_kernels()) {
    fields.push_back(receptive_field(branch, std::vector<std::size_t>(branch.size(), 1)));
  }
  CHECK(fields == std::vector<std::size_t>{1, 3, 5, 7});
  CHECK(code_of([] { receptive_field({}, {}); }) == ErrorCode::EmptySpec);
  CHECK(code_of([] { receptive_field({3}, {1, 1}); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { receptive_field({0}, {1}); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("replacement parameter counts") {
  const auto a = replacement_param_count(5, 64);
  CHECK(a.direct == 102400);
  CHECK(a.replaced == 73728);
  const auto b = replacement_param_count(7, 1);
  CHECK(b.direct == 49);
  CHECK(b.replaced == 27);
  for (std::size_t c = 1; c <= 200; ++c) {
    CHECK(replacement_param_count(5, c).replaced < replacement_param_count(5, c).direct);
    CHECK(replacement_param_count(7, c).replaced < replacement_param_count(7, c).direct);
  }
  CHECK(code_of([] { replacement_param_count(3, 4); }) == ErrorCode::UnsupportedKernel);

  // The parameter store of a real module carries exactly these counts.
  for (std::size_t c : {1u, 4u, 64u}) {
    nn::ParamStore<double> s;
    declare_mrf(s, "m", MRFModuleConfig{c, c});
    CHECK(weight_count(s, "m.br2.") == replacement_param_count(5, c).replaced);
    CHECK(weight_count(s, "m.br3.") == replacement_param_count(7, c).replaced);
    CHECK(weight_count(s, "m.br0.") == c * c);
    CHECK(weight_count(s, "m.br1.") == 9 * c * c);
    CHECK(weight_count(s, "m.fuse") == 9 * 4 * c * c);
  }
  // Different input width: first layer 9*C*C_in, second 9*C*C.
  nn::ParamStore<double> s;
  declare_mrf(s, "m", MRFModuleConfig{3, 8});
  CHECK(weight_count(s, "m.br2.") == 9 * 8 * 3 + 9 * 8 * 8);
}

TEST_CASE("MRF module forward") {
  nn::ParamStore<double> s;
  declare_mrf(s, "m", MRFModuleConfig{3, 5});
  nn::kaiming_uniform_init(s, 1);
  nn::Graph<double> g(&s);
  const nn::Var y = mrf_forward(g, g.input(random_tensor<double>({1, 3, 16, 16}, 2)), "m",
                                MRFModuleConfig{3, 5});
  CHECK(g.value(y).shape() == nn::Shape4{1, 5, 16, 16});
  CHECK(code_of([&] {
          mrf_forward(g, g.input(nn::Tensor4<double>(1, 2, 16, 16)), "m", MRFModuleConfig{3, 5});
        }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([&] {
          mrf_forward(g, g.input(nn::Tensor4<double>(1, 3, 2, 16)), "m", MRFModuleConfig{3, 5});
        }) == ErrorCode::ShapeMismatch);

  nn::ParamStore<double> c4;
  declare_mrf(c4, "m", MRFModuleConfig{2, 4});
  nn::kaiming_uniform_init(c4, 9);
  const auto rep = nn::grad_check(c4, random_tensor<double>({2, 2, 6, 6}, 4, -1, 1),
                                  [](nn::Graph<double>& gg, nn::Var in) {
                                    const nn::Var o = mrf_forward(gg, in, "m", MRFModuleConfig{2, 4});
                                    return gg.mse(o, gg.input(random_tensor<double>(
                                                         gg.value(o).shape(), 5)));
                                  });
  CHECK(rep.max_rel_error < 1e-4);
  CHECK(rep.checked > 100);
}

TEST_CASE("U-Net structure") {
  UNetConfig u;
  CHECK(u.widths() == std::vector<std::size_t>{64, 128, 256, 512, 1024});
  u.width_factor = 1.0 / 16.0;
  CHECK(u.widths() == std::vector<std::size_t>{4, 8, 16, 32, 64});
  u.width_factor = 1.0 / 128.0;
  CHECK(u.widths() == std::vector<std::size_t>{1, 1, 2, 4, 8});

  UNetConfig small{1, 1, 1.0 / 64.0, Activation::ReLU, true, true};
  nn::ParamStore<float> s;
  declare_unet(s, "u.", small);
  nn::kaiming_uniform_init(s, 3);
  const auto w = small.widths();
  for (std::size_t st = 0; st < 5; ++st) {
    const auto& fuse = s[s.index("u.enc" + std::to_string(st) + ".m1.fuse.w")].value.shape();
    CHECK(fuse == nn::Shape4{w[st], 4 * w[st], 3, 3});
  }
  nn::Graph<float> g(&s, false);
  const nn::Var y = unet_forward(g, g.input(random_tensor<float>({1, 1, 128, 128}, 1)), "u.", small);
  CHECK(g.value(y).shape() == nn::Shape4{1, 1, 128, 128});
  for (float v : g.value(y).storage()) CHECK(v >= 0.0f);
  CHECK(code_of([&] { unet_forward(g, g.input(nn::Tensor4<float>(1, 1, 24, 32)), "u.", small); }) ==
        ErrorCode::ShapeMismatch);

  UNetConfig e = small;
  e.final_activation = Activation::ELU;
  e.use_mrf = false;
  e.use_skips = false;
  nn::ParamStore<float> es;
  declare_unet(es, "u.", e);
  nn::kaiming_uniform_init(es, 4);
  CHECK(es.find("u.enc0.m0.w") != nn::ParamStore<float>::npos);
  CHECK(es.find("u.enc0.m0.br0.0.w") == nn::ParamStore<float>::npos);
  // Without skips the first decoder module sees only the up-conv output.
  CHECK(es[es.index("u.dec3.m0.w")].value.shape().c == e.widths()[0]);
  CHECK(s[s.index("u.dec3.m0.br0.0.w")].value.shape().c == 2 * small.widths()[0]);
  nn::Graph<float> ge(&es, false);
  const nn::Var ye = unet_forward(ge, ge.input(random_tensor<float>({2, 1, 32, 32}, 2, -5, 5)), "u.", e);
  for (float v : ge.value(ye).storage()) CHECK(v >= -1.0f);
}

TEST_CASE("U-Net gradient check") {
  for (bool use_mrf : {true, false}) {
    DMRFConfig c = DMRFConfig::for_kind(ModelKind::DMRF, 1.0 / 16.0);
    c.stage1.use_mrf = c.stage2.use_mrf = use_mrf;
    nn::ParamStore<double> s = build_params<double>(c, 17);
    nn::GradCheckOptions o;
    o.max_per_tensor = 2;
    o.seed = 1;
    const auto y1 = random_tensor<double>({1, 1, 16, 16}, 6);
    const auto y2 = random_tensor<double>({1, 1, 16, 16}, 7);
    const auto rep = nn::grad_check(s, random_tensor<double>({1, 1, 16, 16}, 8),
                                    [&](nn::Graph<double>& g, nn::Var in) {
                                      const auto r = forward_dmrf(g, in, c);
                                      return combined_loss(g, g.input(y1), *r.denoised, g.input(y2),
                                                           r.perm, 10.0, 1.0)
                                          .total;
                                    },
                                    o);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.checked > 50);
  }
}

TEST_CASE("two-stage forward") {
  DMRFConfig c = DMRFConfig::for_kind(ModelKind::DMRF, 1.0 / 32.0);
  nn::ParamStore<float> s = build_params<float>(c, 1);
  nn::Graph<float> g(&s, false);
  const auto r = forward_dmrf(g, g.input(random_tensor<float>({3, 1, 32, 32}, 1)), c);
  REQUIRE(r.denoised);
  CHECK(g.value(*r.denoised).shape() == nn::Shape4{3, 1, 32, 32});
  CHECK(g.value(r.perm).shape() == nn::Shape4{3, 1, 32, 32});

  DMRFConfig one = c;
  one.two_channel_input = false;
  CHECK(code_of([&] { one.validate(); }) == ErrorCode::InvalidConfig);
  one.stage2.in_channels = 1;
  nn::ParamStore<float> s1 = build_params<float>(one, 1);
  CHECK(s1[s1.index("u2.enc0.m0.br0.0.w")].value.shape().c == 1);
  CHECK(s[s.index("u2.enc0.m0.br0.0.w")].value.shape().c == 2);

  const DMRFConfig smrf = DMRFConfig::for_kind(ModelKind::SMRF, 1.0 / 32.0);
  nn::ParamStore<float> ss = build_params<float>(smrf, 1);
  CHECK(ss.find("u1.head.w") == nn::ParamStore<float>::npos);
  nn::Graph<float> gs(&ss, false);
  const auto rs = forward_dmrf(gs, gs.input(random_tensor<float>({1, 1, 32, 32}, 1)), smrf);
  CHECK(!rs.denoised);
}

TEST_CASE("end-to-end gradient reaches stage 1 through the stage-2 loss") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    DMRFConfig c = DMRFConfig::for_kind(ModelKind::DMRF, 1.0 / 8.0);
    nn::ParamStore<float> s = build_params<float>(c, seed);
    s.zero_grad();
    nn::Graph<float> g(&s);
    const auto r = forward_dmrf(g, g.input(random_tensor<float>({2, 1, 32, 32}, seed)), c);
    const auto l = combined_loss(g, g.input(random_tensor<float>({2, 1, 32, 32}, seed + 10)),
                                 *r.denoised, g.input(random_tensor<float>({2, 1, 32, 32}, seed + 20)),
                                 r.perm, 10.0, 1.0);
    g.backward(l.l2);
    std::size_t stage1 = 0, reached = 0;
    for (const auto& p : s) {
      if (p.name.rfind("u1.", 0) != 0) continue;
      ++stage1;
      double norm = 0;
      for (float v : p.grad.storage()) norm += std::abs(v);
      if (norm > 0) ++reached;
    }
    CHECK(stage1 > 0);
    CHECK(reached == stage1);
  }
}

TEST_CASE("combined loss") {
  nn::Graph<double> g;
  const nn::Var z = g.input(nn::Tensor4<double>(1, 1, 4, 4, 0.0));
  const auto perfect = combined_loss(g, z, z, z, z, 10.0, 1.0);
  CHECK(g.value(perfect.total).storage()[0] == 0.0);
  CHECK(g.value(perfect.l1).storage()[0] == 0.0);
  const nn::Var a = g.input(nn::Tensor4<double>(1, 1, 4, 4, std::sqrt(0.2)));
  const nn::Var b = g.input(nn::Tensor4<double>(1, 1, 4, 4, std::sqrt(0.05)));
  const auto l = combined_loss(g, z, a, z, b, 10.0, 1.0);
  CHECK(g.value(l.l1).storage()[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(g.value(l.l2).storage()[0] == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(g.value(l.total).storage()[0] == doctest::Approx(2.05).epsilon(1e-12));
  const DMRFConfig d;
  CHECK(d.alpha == 10.0);
  CHECK(d.beta == 1.0);
  CHECK(code_of([&] { combined_loss(g, z, g.input(nn::Tensor4<double>(1, 1, 2, 2)), z, z, 1.0, 1.0); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("model config text") {
  DMRFConfig c = DMRFConfig::for_kind(ModelKind::UNet, 0.125);
  c.seed = 99;
  c.alpha = 3.25;
  c.end_to_end = false;
  CHECK(DMRFConfig::parse(c.text()) == c);
  CHECK(DMRFConfig::parse(c.text()).hash() == c.hash());
  CHECK(code_of([&] { DMRFConfig::parse(c.text() + "bogus = 1\n"); }) == ErrorCode::InvalidConfig);
  DMRFConfig bad = c;
  bad.beta = 0.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidConfig);
  CHECK(model_kind_from_string("encdec") == ModelKind::EncDec);
  CHECK(code_of([] { model_kind_from_string("gan"); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("fine-tune learning-rate rule") {
  const double lr0 = 1e-4;
  double lr = lr0;
  lr = next_fine_tune_lr(lr, 1.0, 1.0);
  lr = next_fine_tune_lr(lr, 1.0, 1.2);
  CHECK(lr == doctest::Approx(lr0 * 0.99 * 0.99).epsilon(1e-15));
  double keep = lr0;
  for (double loss : {0.9, 0.8, 0.7}) keep = next_fine_tune_lr(keep, loss + 0.05, loss);
  CHECK(keep == lr0);
}

TEST_CASE("training, checkpoints and inference") {
  const fs::path& root = tiny_dataset();
  const auto manifest = dataset::DatasetManifest::read(root / dataset::kManifestName);
  const auto work = scratch_dir("dmrf_train");

  TrainOptions o;
  o.loss_csv = work / "a.csv";
  const DMRFConfig cfg = tiny_model(ModelKind::DMRF);
  const TrainResult a = train(manifest, root, cfg, o);
  REQUIRE(a.history.size() == 3);
  for (const auto& e : a.history) {
    CHECK(e.train_l == doctest::Approx(cfg.alpha * e.train_l1 + cfg.beta * e.train_l2).epsilon(1e-6));
    CHECK(e.test_l == doctest::Approx(cfg.alpha * e.test_l1 + cfg.beta * e.test_l2).epsilon(1e-6));
  }
  const std::string csv = read_file(work / "a.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == loss_csv_header());
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 6);
  }
  CHECK(rows == 3);

  o.loss_csv = work / "b.csv";
  const TrainResult b = train(manifest, root, cfg, o);
  CHECK(read_file(work / "b.csv") == csv);
  CHECK(b.last.params[0].value == a.last.params[0].value);

  // Checkpoint round trip gives bit-identical inference.
  a.best.save(work / "best.gprc");
  const Checkpoint back = Checkpoint::load(work / "best.gprc");
  CHECK(back.config == a.best.config);
  CHECK(back.epoch == a.best.epoch);
  CHECK(back.rng_state == a.best.rng_state);
  const auto smp = dataset::load_sample(manifest, root, manifest.samples.front().id);
  const auto r1 = infer(a.best, {smp.noisy});
  const auto r2 = infer(back, {smp.noisy});
  CHECK(r1[0].perm == r2[0].perm);
  CHECK(*r1[0].denoised == *r2[0].denoised);
  for (double v : r1[0].perm_value.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 32.0);
  }
  const auto again = infer(back, {smp.noisy});
  CHECK(again[0].perm == r2[0].perm);
  const auto via_file = infer_file(back, root / manifest.samples.front().noisy_path);
  CHECK(via_file.perm == r2[0].perm);

  // Corruption is detected.
  {
    std::string bytes = read_file(work / "best.gprc");
    bytes[bytes.size() / 2] ^= 0x10;
    std::ofstream(work / "bad.gprc", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK(code_of([&] { Checkpoint::load(work / "bad.gprc"); }) == ErrorCode::CorruptFile);
    std::ofstream(work / "junk.gprc", std::ios::binary) << "GPRX....";
    CHECK(code_of([&] { Checkpoint::load(work / "junk.gprc"); }) == ErrorCode::CorruptFile);
  }
  CHECK(code_of([&] { infer(back, {Image(32, 32)}); }) == ErrorCode::IncompatibleCheckpoint);

  // Fine-tuning.
  const TrainResult same = fine_tune(a.best, manifest, root, 0, 1e-4);
  CHECK(same.best.params[0].value == a.best.params[0].value);
  CHECK(same.history.empty());
  const TrainResult ft = fine_tune(a.best, manifest, root, 2, 1e-4);
  CHECK(ft.history.size() == 2);
  CHECK(ft.history[0].lr == 1e-4);
  auto other = manifest;
  other.image_rows = 32;
  CHECK(code_of([&] { fine_tune(a.best, other, root, 1, 1e-4); }) == ErrorCode::IncompatibleCheckpoint);

  // Separate training: stage 1, then stage 2 with stage 1 frozen.
  DMRFConfig sep = cfg;
  sep.end_to_end = false;
  sep.epochs = 2;
  const TrainResult st = train(manifest, root, sep);
  CHECK(st.history.size() == 4);
  const auto s1_after_phase1 = st.last.params[st.last.params.index("u1.head.w")].value;
  CHECK(st.best.epoch >= 3);
  CHECK(st.best.params[st.best.params.index("u1.head.w")].value == s1_after_phase1);

  // Single-stage baseline: only a permittivity map.
  const TrainResult sm = train(manifest, root, tiny_model(ModelKind::SMRF));
  for (const auto& e : sm.history) CHECK(e.train_l1 == 0.0);
  const auto rs = infer(sm.best, {smp.noisy});
  CHECK(!rs[0].denoised);
  CHECK(rs[0].perm.rows() == 16);
}

TEST_CASE("training needs both splits") {
  const fs::path& root = tiny_dataset();
  auto manifest = dataset::DatasetManifest::read(root / dataset::kManifestName);
  for (auto& s : manifest.samples) s.split = dataset::Split::Train;
  CHECK(code_of([&] { train(manifest, root, tiny_model(ModelKind::SMRF)); }) ==
        ErrorCode::DataUnavailable);
}
