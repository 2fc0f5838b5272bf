#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "gprinv/dmrf.hpp"
#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"

namespace gprinv::dmrf {

namespace {

using nn::Tensor4;

struct Data {
  Tensor4<float> noisy, denoised, perm;
  std::size_t count = 0;
};

void put_image(Tensor4<float>& t, std::size_t n, const Image& img) {
  float* dst = t.data() + n * img.size();
  for (std::size_t i = 0; i < img.size(); ++i) dst[i] = static_cast<float>(img.storage()[i]);
}

Data load_split(const dataset::DatasetManifest& m, const std::filesystem::path& root,
                dataset::Split split, std::size_t max) {
  auto recs = m.split(split);
  if (max != 0 && recs.size() > max) recs.resize(max);
  Data d;
  d.count = recs.size();
  const nn::Shape4 s{recs.size(), 1, m.image_rows, m.image_cols};
  d.noisy = d.denoised = d.perm = Tensor4<float>(s);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto smp = dataset::load_sample(m, root, recs[i]->id);
    put_image(d.noisy, i, smp.noisy);
    put_image(d.denoised, i, smp.denoised);
    put_image(d.perm, i, smp.perm_map);
  }
  return d;
}

Tensor4<float> gather(const Tensor4<float>& src, const std::vector<std::size_t>& idx,
                      std::size_t begin, std::size_t end) {
  const nn::Shape4 s = src.shape();
  const std::size_t plane = s.c * s.h * s.w;
  Tensor4<float> out(end - begin, s.c, s.h, s.w);
  for (std::size_t i = begin; i < end; ++i) {
    std::copy(src.data() + idx[i] * plane, src.data() + (idx[i] + 1) * plane,
              out.data() + (i - begin) * plane);
  }
  return out;
}

struct Means {
  double l = 0, l1 = 0, l2 = 0;
  std::size_t n = 0;

  void add(double bl, double bl1, double bl2, std::size_t bn) {
    l += bl * static_cast<double>(bn);
    l1 += bl1 * static_cast<double>(bn);
    l2 += bl2 * static_cast<double>(bn);
    n += bn;
  }
  Means mean() const {
    const double k = n ? 1.0 / static_cast<double>(n) : 0.0;
    return {l * k, l1 * k, l2 * k, n};
  }
};

enum class Phase { Joint, Stage1, Stage2 };

class Trainer {
 public:
  Trainer(DMRFConfig cfg, nn::ParamStore<float>& store, std::mt19937_64& rng)
      : cfg_(std::move(cfg)), store_(store), rng_(rng) {}

  double alpha() const { return cfg_.alpha; }
  void set_alpha(double a) { cfg_.alpha = a; }
  std::uint64_t step = 0;

  Means train_epoch(const Data& d, Phase phase, double lr, std::size_t epoch) {
    std::vector<std::size_t> order(d.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    nn::AdamConfig adam;
    adam.lr = lr;
    Means m;
    std::size_t batch_no = 0;
    for (std::size_t b = 0; b < d.count; b += cfg_.batch, ++batch_no) {
      const std::size_t e = std::min(d.count, b + cfg_.batch);
      try {
        store_.zero_grad();
        nn::Graph<float> g(&store_);
        const auto l = losses(g, d, order, b, e);
        const nn::Var target = phase == Phase::Joint ? l.total : phase == Phase::Stage1 ? l.l1 : l.l2;
        const double lv = g.value(l.total).data()[0];
        if (!std::isfinite(lv)) fail(ErrorCode::NonFinite, "loss is not finite");
        g.backward(target);
        nn::adam_step(store_, adam, ++step);
        m.add(lv, g.value(l.l1).data()[0], g.value(l.l2).data()[0], e - b);
      } catch (const Error& err) {
        if (err.code() != ErrorCode::NonFinite) throw;
        fail(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " batch " +
                                           std::to_string(batch_no) + ": " + err.what());
      }
    }
    return m.mean();
  }

  Means evaluate(const Data& d) {
    std::vector<std::size_t> order(d.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Means m;
    for (std::size_t b = 0; b < d.count; b += cfg_.batch) {
      const std::size_t e = std::min(d.count, b + cfg_.batch);
      nn::Graph<float> g(&store_, false);
      const auto l = losses(g, d, order, b, e);
      m.add(g.value(l.total).data()[0], g.value(l.l1).data()[0], g.value(l.l2).data()[0], e - b);
    }
    const Means out = m.mean();
    if (!std::isfinite(out.l)) fail(ErrorCode::NonFiniteLoss, "test loss is not finite");
    return out;
  }

 private:
  LossVars losses(nn::Graph<float>& g, const Data& d, const std::vector<std::size_t>& order,
                  std::size_t b, std::size_t e) {
    const nn::Var x = g.input(gather(d.noisy, order, b, e));
    const nn::Var y2 = g.input(gather(d.perm, order, b, e));
    const auto out = forward_dmrf(g, x, cfg_);
    if (out.denoised) {
      const nn::Var y1 = g.input(gather(d.denoised, order, b, e));
      return combined_loss(g, y1, *out.denoised, y2, out.perm, cfg_.alpha, cfg_.beta);
    }
    LossVars l;
    l.l2 = g.mse(out.perm, y2);
    l.l1 = g.input(Tensor4<float>(1, 1, 1, 1));
    l.total = g.linear(l.l2, static_cast<float>(cfg_.beta), l.l1, 0.0f);
    return l;
  }

  DMRFConfig cfg_;
  nn::ParamStore<float>& store_;
  std::mt19937_64& rng_;
};

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

Checkpoint snapshot(const nn::ParamStore<float>& store, const DMRFConfig& cfg,
                    const dataset::DatasetManifest& m, double test_loss, std::size_t epoch,
                    std::uint64_t step, const std::mt19937_64& rng) {
  Checkpoint c;
  c.config = cfg;
  c.params = store.cast<float>();
  c.best_test_loss = test_loss;
  c.epoch = epoch;
  c.adam_step = step;
  c.rng_state = rng_text(rng);
  c.norm = m.norm;
  c.image_rows = m.image_rows;
  c.image_cols = m.image_cols;
  c.dataset_hash = m.config_hash;
  c.master_seed = m.master_seed;
  return c;
}

class CsvLog {
 public:
  explicit CsvLog(const std::optional<std::filesystem::path>& path) {
    if (!path) return;
    out_.open(*path, std::ios::trunc);
    if (!out_) fail(ErrorCode::Io, "cannot write " + path->string());
    out_ << loss_csv_header() << '\n';
    out_.flush();
  }
  void row(const EpochStats& e) {
    if (!out_.is_open()) return;
    out_ << loss_csv_row(e) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

void check_data(const Data& train, const Data& test) {
  if (train.count == 0) fail(ErrorCode::DataUnavailable, "the dataset has no training samples");
  if (test.count == 0) fail(ErrorCode::DataUnavailable, "the dataset has no test samples");
}

}  // namespace

std::string loss_csv_header() { return "epoch,train_l,train_l1,train_l2,test_l,test_l1,test_l2"; }

std::string loss_csv_row(const EpochStats& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", e.epoch, e.train_l,
                e.train_l1, e.train_l2, e.test_l, e.test_l1, e.test_l2);
  return buf;
}

double next_fine_tune_lr(double lr, double previous_loss, double loss) {
  return loss < previous_loss ? lr : lr * 0.99;
}

TrainResult train(const dataset::DatasetManifest& manifest, const std::filesystem::path& root,
                  const DMRFConfig& cfg_in, const TrainOptions& opts) {
  DMRFConfig cfg = cfg_in;
  cfg.validate();
  const Data train_d = load_split(manifest, root, dataset::Split::Train, opts.max_train);
  const Data test_d = load_split(manifest, root, dataset::Split::Test, 0);
  check_data(train_d, test_d);

  nn::ParamStore<float> store = build_params<float>(cfg, derive_seed(cfg.seed, "init", 0));
  std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle", 0));
  Trainer tr(cfg, store, rng);
  CsvLog csv(opts.loss_csv);

  TrainResult res;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Phase> phases;
  if (cfg.has_stage1() && !cfg.end_to_end) {
    phases = {Phase::Stage1, Phase::Stage2};
  } else {
    phases = {Phase::Joint};
  }
  std::size_t epoch = 0;
  for (const Phase phase : phases) {
    if (phase == Phase::Stage2) {
      store.set_trainable("u1.", false);
      tr.step = 0;
    }
    for (std::size_t k = 0; k < cfg.epochs; ++k) {
      ++epoch;
      const Means tm = tr.train_epoch(train_d, phase, cfg.lr, epoch);
      if (cfg.auto_balance && cfg.has_stage1() && epoch == 1 && tm.l1 > 0.0) {
        tr.set_alpha(cfg.beta * tm.l2 / tm.l1);
        cfg.alpha = tr.alpha();
      }
      const Means vm = tr.evaluate(test_d);
      EpochStats st{epoch, tm.l, tm.l1, tm.l2, vm.l, vm.l1, vm.l2, cfg.lr};
      res.history.push_back(st);
      csv.row(st);
      if (opts.on_epoch) opts.on_epoch(st);
      // Stage 2 is untrained during the first phase of separate training.
      if (phase != Phase::Stage1 && vm.l < best) {
        best = vm.l;
        res.best = snapshot(store, cfg, manifest, vm.l, epoch, tr.step, rng);
      }
    }
  }
  store.set_trainable("u1.", true);
  res.last = snapshot(store, cfg, manifest, res.history.empty() ? 0.0 : res.history.back().test_l,
                      epoch, tr.step, rng);
  if (!std::isfinite(best)) res.best = res.last;
  return res;
}

TrainResult fine_tune(const Checkpoint& ckpt, const dataset::DatasetManifest& manifest,
                      const std::filesystem::path& root, std::size_t epochs, double lr0,
                      const TrainOptions& opts) {
  if (manifest.image_rows != ckpt.image_rows || manifest.image_cols != ckpt.image_cols) {
    fail(ErrorCode::IncompatibleCheckpoint,
         "checkpoint was trained on " + std::to_string(ckpt.image_rows) + "x" +
             std::to_string(ckpt.image_cols) + " images, dataset has " +
             std::to_string(manifest.image_rows) + "x" + std::to_string(manifest.image_cols));
  }
  if (!(manifest.norm == ckpt.norm)) {
    fail(ErrorCode::IncompatibleCheckpoint, "dataset normalization differs from the checkpoint's");
  }
  TrainResult res;
  res.best = res.last = ckpt;
  if (epochs == 0) return res;
  if (!(lr0 > 0.0)) fail(ErrorCode::InvalidConfig, "learning rate must be > 0");

  const Data train_d = load_split(manifest, root, dataset::Split::Train, opts.max_train);
  const Data test_d = load_split(manifest, root, dataset::Split::Test, 0);
  check_data(train_d, test_d);

  DMRFConfig cfg = ckpt.config;
  nn::ParamStore<float> store = ckpt.params;
  for (auto& p : store) p.trainable = true;
  std::mt19937_64 rng(derive_seed(cfg.seed, "fine-tune", 0));
  Trainer tr(cfg, store, rng);
  CsvLog csv(opts.loss_csv);

  double lr = lr0;
  double prev = std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const Means tm = tr.train_epoch(train_d, Phase::Joint, lr, epoch);
    const Means vm = tr.evaluate(test_d);
    EpochStats st{epoch, tm.l, tm.l1, tm.l2, vm.l, vm.l1, vm.l2, lr};
    res.history.push_back(st);
    csv.row(st);
    if (opts.on_epoch) opts.on_epoch(st);
    if (vm.l < best) {
      best = vm.l;
      res.best = snapshot(store, cfg, manifest, vm.l, epoch, tr.step, rng);
    }
    if (epoch > 1) lr = next_fine_tune_lr(lr, prev, tm.l);
    prev = tm.l;
  }
  res.last = snapshot(store, cfg, manifest, res.history.back().test_l, epochs, tr.step, rng);
  return res;
}

// ---- inference ------------------------------------------------------------

std::vector<Inference> infer(const Checkpoint& ckpt, const std::vector<Image>& noisy,
                             std::size_t batch) {
  if (batch == 0) batch = 1;
  for (const Image& img : noisy) {
    if (img.rows() != ckpt.image_rows || img.cols() != ckpt.image_cols) {
      fail(ErrorCode::IncompatibleCheckpoint,
           "input is " + std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
               ", checkpoint expects " + std::to_string(ckpt.image_rows) + "x" +
               std::to_string(ckpt.image_cols));
    }
  }
  nn::ParamStore<float> store = ckpt.params;
  const std::size_t H = ckpt.image_rows, W = ckpt.image_cols;
  auto to_image = [&](const Tensor4<float>& t, std::size_t n) {
    Image img(H, W);
    for (std::size_t i = 0; i < H * W; ++i) {
      img.storage()[i] = std::clamp(static_cast<double>(t.data()[n * H * W + i]), 0.0, 1.0);
    }
    return img;
  };
  std::vector<Inference> out;
  for (std::size_t b = 0; b < noisy.size(); b += batch) {
    const std::size_t e = std::min(noisy.size(), b + batch);
    Tensor4<float> x(e - b, 1, H, W);
    for (std::size_t i = b; i < e; ++i) put_image(x, i - b, noisy[i]);
    nn::Graph<float> g(&store, false);
    const auto r = forward_dmrf(g, g.input(std::move(x)), ckpt.config);
    for (std::size_t i = b; i < e; ++i) {
      Inference inf;
      inf.perm = to_image(g.value(r.perm), i - b);
      inf.perm_value = dataset::inverse_normalize(inf.perm, ckpt.norm.perm_lo, ckpt.norm.perm_hi);
      if (r.denoised) {
        inf.denoised = to_image(g.value(*r.denoised), i - b);
        inf.denoised_field =
            dataset::inverse_normalize(*inf.denoised, ckpt.norm.bscan_lo, ckpt.norm.bscan_hi);
      }
      out.push_back(std::move(inf));
    }
  }
  return out;
}

Inference infer_file(const Checkpoint& ckpt, const std::filesystem::path& noisy_gprt) {
  const dataset::Tensor t = dataset::read_gprt(noisy_gprt);
  if (t.channels != 1) {
    fail(ErrorCode::CorruptFile, noisy_gprt.string() + ": expected a one-channel B-scan");
  }
  for (float v : t.data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      fail(ErrorCode::CorruptFile, noisy_gprt.string() + ": values outside [0, 1]");
    }
  }
  return infer(ckpt, {t.channel(0)}).front();
}

}  // namespace gprinv::dmrf
