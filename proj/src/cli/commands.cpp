#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "gprinv/cli.hpp"
#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"
#include "gprinv/metrics.hpp"

namespace gprinv::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "config file ([section] key = value)");
  sub->add_option("--set", c.sets, "override, section.key=value (repeatable)");
  sub->add_option("--profile", c.profile, "desk | paper");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--workers", c.workers, "worker threads");
  sub->add_flag("--quiet", c.quiet, "echo only the config hash and seed");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot read config file " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// File first, then flags, then --set, then subcommand-specific settings.
RunConfig load_config(const Common& c, const std::vector<Assignment>& extra) {
  std::vector<Assignment> all;
  if (!c.config_file.empty()) all = parse_config_text(read_text(c.config_file), c.config_file);
  if (!c.profile.empty()) all.push_back({"run.profile", c.profile, "--profile"});
  if (c.seed) all.push_back({"run.seed", std::to_string(*c.seed), "--seed"});
  if (c.workers) all.push_back({"run.workers", std::to_string(*c.workers), "--workers"});
  for (const auto& s : c.sets) all.push_back(parse_override(s));
  all.insert(all.end(), extra.begin(), extra.end());
  RunConfig cfg = resolve(all);
  cfg.validate();
  return cfg;
}

void echo(std::ostream& out, const std::string& command, const RunConfig& cfg, bool quiet) {
  out << "gprinv " << command << ": profile " << cfg.profile << ", config hash " << cfg.hash()
      << ", master seed " << cfg.seed << '\n';
  if (quiet) return;
  std::istringstream in(cfg.text());
  std::string line;
  while (std::getline(in, line)) out << "  " << line << '\n';
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + p.string());
  out << text;
  if (!out) fail(ErrorCode::Io, "short write to " + p.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

dataset::Split split_from(const std::string& s) {
  return s == "train" ? dataset::Split::Train : dataset::Split::Test;
}

dataset::DatasetManifest read_manifest(const fs::path& dir) {
  return dataset::DatasetManifest::read(dir / dataset::kManifestName);
}

void print_epoch(std::ostream& out, const dmrf::EpochStats& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %zu  train %.6g (l1 %.6g, l2 %.6g)  test %.6g  lr %.3g\n",
                e.epoch, e.train_l, e.train_l1, e.train_l2, e.test_l, e.lr);
  out << buf << std::flush;
}

// ---- subcommands ----------------------------------------------------------

struct GenerateArgs {
  std::string out;
  std::optional<std::size_t> samples;
};

int cmd_generate(const Common& c, const GenerateArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(c, {});
  if (a.samples) set_total_samples(cfg.data, *a.samples);
  cfg.validate();
  echo(out, "generate", cfg, c.quiet);
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  dataset::BuildOptions opts;
  opts.workers = resolve_workers(cfg.workers, hw);
  opts.progress = [&err](std::size_t done, std::size_t total) {
    err << "\rsimulated " << done << '/' << total << (done == total ? "\n" : "") << std::flush;
  };
  const fs::path dir = a.out;
  const auto manifest = dataset::build_dataset(cfg.dataset(), dir, opts);
  write_file(dir / "run_config.txt", cfg.text());
  out << "dataset " << dir.string() << ": " << manifest.samples.size() << " samples ("
      << manifest.split(dataset::Split::Train).size() << " train, "
      << manifest.split(dataset::Split::Test).size() << " test), dataset hash "
      << manifest.config_hash << ", " << opts.workers << " workers\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, loss_csv, checkpoint;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
};

int cmd_train(const Common& c, const TrainArgs& a, std::ostream& out) {
  std::vector<Assignment> extra;
  if (a.epochs) extra.push_back({"train.epochs", std::to_string(*a.epochs), "--epochs"});
  if (a.lr) extra.push_back({"train.lr", fmt(*a.lr), "--lr"});
  const RunConfig cfg = load_config(c, extra);
  echo(out, "train", cfg, c.quiet);
  const fs::path root = a.data;
  const auto manifest = read_manifest(root);
  const fs::path ckpt = a.out.empty() ? root / "model.gprc" : fs::path(a.out);
  dmrf::TrainOptions opts;
  opts.loss_csv = a.loss_csv.empty() ? sibling(ckpt, "_loss.csv") : fs::path(a.loss_csv);
  opts.on_epoch = [&out](const dmrf::EpochStats& e) { print_epoch(out, e); };
  if (opts.loss_csv->has_parent_path()) fs::create_directories(opts.loss_csv->parent_path());
  const auto result = dmrf::train(manifest, root, cfg.model(), opts);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  result.best.save(ckpt);
  result.last.save(sibling(ckpt, "_last.gprc"));
  out << "checkpoint " << ckpt.string() << " (best test loss " << result.best.best_test_loss
      << " at epoch " << result.best.epoch << "), loss curve " << opts.loss_csv->string() << '\n';
  return 0;
}

int cmd_fine_tune(const Common& c, const TrainArgs& a, std::ostream& out) {
  std::vector<Assignment> extra;
  if (a.epochs) extra.push_back({"finetune.epochs", std::to_string(*a.epochs), "--epochs"});
  if (a.lr) extra.push_back({"finetune.lr", fmt(*a.lr), "--lr"});
  const RunConfig cfg = load_config(c, extra);
  echo(out, "fine-tune", cfg, c.quiet);
  const fs::path root = a.data;
  const auto manifest = read_manifest(root);
  const auto base = dmrf::Checkpoint::load(a.checkpoint);
  const fs::path ckpt = a.out.empty() ? root / "finetuned.gprc" : fs::path(a.out);
  dmrf::TrainOptions opts;
  opts.loss_csv = a.loss_csv.empty() ? sibling(ckpt, "_loss.csv") : fs::path(a.loss_csv);
  opts.on_epoch = [&out](const dmrf::EpochStats& e) { print_epoch(out, e); };
  if (opts.loss_csv->has_parent_path()) fs::create_directories(opts.loss_csv->parent_path());
  const auto result = dmrf::fine_tune(base, manifest, root, cfg.finetune_epochs, cfg.finetune_lr, opts);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  result.best.save(ckpt);
  out << "checkpoint " << ckpt.string() << '\n';
  return 0;
}

struct InferArgs {
  std::string checkpoint, input, out;
  bool raw = false;
};

int cmd_infer(const Common& c, const InferArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(c, {});
  echo(out, "infer", cfg, c.quiet);
  const auto ckpt = dmrf::Checkpoint::load(a.checkpoint);
  dmrf::Inference r;
  if (a.raw) {
    const Image x = dataset::import_bscan(a.input, ckpt.norm, ckpt.image_rows, ckpt.image_cols);
    r = dmrf::infer(ckpt, {x}).front();
  } else {
    r = dmrf::infer_file(ckpt, a.input);
  }
  const fs::path dir = a.out;
  fs::create_directories(dir);
  dataset::write_gprt(dir / "predicted.gprt", dataset::Tensor::from_image(r.perm_value));
  out << "permittivity map " << (dir / "predicted.gprt").string() << '\n';
  if (r.denoised_field) {
    dataset::write_gprt(dir / "denoised.gprt", dataset::Tensor::from_image(*r.denoised_field));
    out << "denoised B-scan " << (dir / "denoised.gprt").string() << '\n';
  }
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, data, out, split;
  std::vector<std::string> groups;
};

int cmd_evaluate(const Common& c, const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<Assignment> extra;
  if (!a.split.empty()) extra.push_back({"evaluate.split", a.split, "--split"});
  if (!a.groups.empty()) {
    std::string g;
    for (const auto& s : a.groups) g += (g.empty() ? "" : ",") + s;
    extra.push_back({"evaluate.groups", g, "--groups"});
  }
  const RunConfig cfg = load_config(c, extra);
  echo(out, "evaluate", cfg, c.quiet);
  const fs::path root = a.data;
  const auto manifest = read_manifest(root);
  const auto ckpt = dmrf::Checkpoint::load(a.checkpoint);
  metrics::EvaluateOptions opts;
  opts.groups = cfg.eval_groups;
  opts.windowed = cfg.eval_windowed;
  opts.batch = cfg.eval_batch;
  opts.progress = [&err](std::size_t done, std::size_t total) {
    err << "\revaluated " << done << '/' << total << (done == total ? "\n" : "") << std::flush;
  };
  const auto report = metrics::evaluate(ckpt, manifest, root, split_from(cfg.eval_split), opts);
  const fs::path csv = a.out.empty() ? root / "metrics.csv" : fs::path(a.out);
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  report.write_csv(csv);
  std::ostringstream summary;
  summary << "config_hash = " << cfg.hash() << "\nmaster_seed = " << cfg.seed
          << "\ndataset_hash = " << manifest.config_hash << "\ncheckpoint_dataset_hash = "
          << ckpt.dataset_hash << "\nmodel = " << dmrf::to_string(ckpt.config.kind)
          << "\nsplit = " << cfg.eval_split << "\nwindowed_ssim = " << (cfg.eval_windowed ? "true" : "false")
          << "\n\n"
          << report.summary();
  write_file(sibling(csv, "_summary.txt"), summary.str());
  out << report.summary() << "metrics " << csv.string() << '\n';
  return 0;
}

struct FwiArgs {
  std::string data, sample, observed, start, out;
  std::uint64_t field_seed = 0;
};

std::string objects_text(const std::vector<scene::ObjectSpec>& o) { return scene::objects_to_string(o); }

int cmd_fwi(const Common& c, const FwiArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(c, {});
  echo(out, "fwi", cfg, c.quiet);
  const auto& sim = cfg.data.sim;
  scene::SoilSpec soil = cfg.data.soil;
  std::uint64_t field_seed = a.field_seed;
  std::vector<scene::ObjectSpec> truth;
  std::optional<Image> observed;

  if (!a.data.empty()) {
    if (a.sample.empty()) fail(ErrorCode::InvalidConfig, "--data needs --sample");
    const auto manifest = read_manifest(a.data);
    const auto* rec = manifest.find(a.sample);
    if (!rec) fail(ErrorCode::MissingId, "no sample '" + a.sample + "' in " + a.data);
    const auto& g = sim.grid;
    if (std::abs(manifest.cell_size - g.cell_size) > 1e-12 ||
        std::abs(manifest.domain_width - g.soil_width) > 1e-12 ||
        std::abs(manifest.domain_depth - g.soil_depth) > 1e-12) {
      fail(ErrorCode::InvalidConfig, "dataset geometry differs from the configured sim.* grid");
    }
    soil = manifest.soil;
    field_seed = rec->field_seed;
    truth = rec->objects;
    if (truth.empty()) fail(ErrorCode::InvalidConfig, "sample '" + a.sample + "' has no objects to invert");
    // The stored tensors are normalized and resized, so the observation is
    // re-simulated at full resolution in the sample's own soil.
    const fwi::ForwardModel truth_model(sim, soil, field_seed, fwi::SoilModel::TrueField,
                                        cfg.data.object_sigma);
    observed = truth_model.simulate(truth);
  } else if (!a.observed.empty()) {
    const auto t = dataset::read_gprt(a.observed);
    if (t.channels != 1) fail(ErrorCode::CorruptFile, a.observed + ": expected a one-channel B-scan");
    observed = dataset::mean_subtract(t.channel(0));
  } else {
    fail(ErrorCode::InvalidConfig, "fwi needs --data DIR --sample ID or --observed FILE");
  }

  std::vector<scene::ObjectSpec> start;
  if (!a.start.empty()) {
    start = scene::objects_from_string(a.start);
  } else if (!truth.empty()) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "fwi-start", 0));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    start = truth;
    for (auto& o : start) {
      o.eps_r *= 1.0 + cfg.fwi_start_eps * u(rng);
      o.center_x += cfg.fwi_start_offset * u(rng);
      o.center_y += cfg.fwi_start_offset * u(rng);
    }
  } else {
    fail(ErrorCode::InvalidConfig, "--observed needs --start");
  }

  const fwi::ForwardModel model(sim, soil, field_seed, cfg.fwi_soil, cfg.data.object_sigma);
  const auto res = fwi::invert(*observed, start, model, cfg.data.ranges, cfg.anneal, cfg.seed);
  if (!res.improved) err << "warning: NoProgress, the best objective never improved on the start\n";

  const fs::path dir = a.out;
  fs::create_directories(dir);
  fwi::write_trace_csv(dir / "trace.csv", res.trace);
  dataset::write_gprt(dir / "map.gprt", dataset::Tensor::from_image(res.map.values));
  std::ostringstream r;
  r << "config_hash = " << cfg.hash() << "\nmaster_seed = " << cfg.seed
    << "\nsample = " << (a.sample.empty() ? "-" : a.sample) << "\nfield_seed = " << field_seed
    << "\nsoil_model = " << fwi::to_string(cfg.fwi_soil) << "\nstart = " << objects_text(start)
    << "\nbest = " << objects_text(res.best) << "\nbest_objective = " << fmt(res.best_objective)
    << "\ninitial_objective = " << fmt(res.initial_objective) << "\niterations = " << res.iterations
    << "\nstop_reason = " << res.stop_reason << "\nuphill_accepted = " << res.uphill_accepted
    << "\nimproved = " << (res.improved ? "true" : "false") << '\n';
  if (!truth.empty()) {
    r << "truth = " << objects_text(truth) << '\n';
    if (truth.size() == res.best.size()) {
      for (std::size_t i = 0; i < truth.size(); ++i) {
        r << "eps_rel_error_" << i << " = "
          << fmt(std::abs(res.best[i].eps_r - truth[i].eps_r) / truth[i].eps_r) << '\n';
      }
    }
  }
  write_file(dir / "result.txt", r.str());
  out << r.str() << "trace " << (dir / "trace.csv").string() << ", map " << (dir / "map.gprt").string()
      << '\n';
  return 0;
}

struct ExportArgs {
  std::string data, checkpoint, out, loss_csv, metrics_csv, fwi_dir, split;
  std::size_t samples = 4;
};

// "key = value" lookup in an fwi result file.
std::string result_value(const fs::path& p, const std::string& key) {
  std::ifstream in(p);
  if (!in) fail(ErrorCode::Io, "cannot read " + p.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + " = ", 0) == 0) return line.substr(key.size() + 3);
  }
  return "";
}

int cmd_export(const Common& c, const ExportArgs& a, std::ostream& out) {
  std::vector<Assignment> extra;
  if (!a.split.empty()) extra.push_back({"evaluate.split", a.split, "--split"});
  const RunConfig cfg = load_config(c, extra);
  echo(out, "export-figures", cfg, c.quiet);
  const fs::path root = a.data, dir = a.out;
  const auto manifest = read_manifest(root);
  const auto selected = manifest.split(split_from(cfg.eval_split));
  if (selected.empty()) fail(ErrorCode::DataUnavailable, "no samples in the " + cfg.eval_split + " split");
  fs::create_directories(dir / "panels");

  std::optional<dmrf::Checkpoint> ckpt;
  if (!a.checkpoint.empty()) ckpt = dmrf::Checkpoint::load(a.checkpoint);
  std::string fwi_sample;
  if (!a.fwi_dir.empty()) fwi_sample = result_value(fs::path(a.fwi_dir) / "result.txt", "sample");

  std::ostringstream index;
  index << "sample\trole\tpath\n";
  auto panel = [&](const std::string& id, const std::string& role, const Image& img) {
    const std::string rel = "panels/" + id + "_" + role + ".gprt";
    dataset::write_gprt(dir / rel, dataset::Tensor::from_image(img));
    index << id << '\t' << role << '\t' << rel << '\n';
  };
  const auto& n = manifest.norm;
  const std::size_t count = std::min(a.samples, selected.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = dataset::load_sample(manifest, root, selected[i]->id);
    panel(s.meta.id, "noisy", dataset::inverse_normalize(s.noisy, n.bscan_lo, n.bscan_hi));
    panel(s.meta.id, "ground_truth", dataset::inverse_normalize(s.perm_map, n.perm_lo, n.perm_hi));
    if (ckpt) {
      const auto r = dmrf::infer(*ckpt, {s.noisy}).front();
      if (r.denoised_field) panel(s.meta.id, "denoised", *r.denoised_field);
      panel(s.meta.id, "predicted", r.perm_value);
    }
    if (s.meta.id == fwi_sample) {
      const auto t = dataset::read_gprt(fs::path(a.fwi_dir) / "map.gprt");
      // Resampled to the network grid so it shares the panel layout.
      panel(s.meta.id, "fwi", dataset::resize_bilinear(t.channel(0), manifest.image_rows, manifest.image_cols));
    }
  }
  write_file(dir / "index.tsv", index.str());
  if (!a.loss_csv.empty()) fs::copy_file(a.loss_csv, dir / "loss.csv", fs::copy_options::overwrite_existing);
  if (!a.metrics_csv.empty()) {
    fs::copy_file(a.metrics_csv, dir / "metrics.csv", fs::copy_options::overwrite_existing);
  }
  write_file(dir / "bundle.txt", "config_hash = " + cfg.hash() + "\nmaster_seed = " +
                                     std::to_string(cfg.seed) + "\ndataset_hash = " +
                                     manifest.config_hash + "\n");
  out << "bundle " << dir.string() << ": " << count << " samples, index " << (dir / "index.tsv").string()
      << '\n';
  return 0;
}

struct SelftestArgs {
  std::size_t seeds = 3;
  bool skip_physics = false;
};

int cmd_selftest(const Common& c, const SelftestArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(c, {});
  echo(out, "selftest", cfg, true);
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 1; s <= std::max<std::size_t>(a.seeds, 1); ++s) seeds.push_back(cfg.seed + s);
  std::vector<OracleLine> lines = gradient_suite(seeds);
  if (!a.skip_physics) {
    const auto p = physics_suite(cfg.data.sim.grid.cell_size);
    lines.insert(lines.end(), p.begin(), p.end());
  }
  const auto m = metric_suite();
  lines.insert(lines.end(), m.begin(), m.end());
  std::size_t failed = 0;
  for (const auto& l : lines) {
    out << (l.pass ? "PASS " : "FAIL ") << l.name << ": " << l.detail << '\n';
    if (!l.pass) ++failed;
  }
  out << lines.size() - failed << '/' << lines.size() << " checks passed\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gprinv: GPR B-scan simulation, two-stage permittivity inversion and FWI baseline"};
  app.require_subcommand(1);
  app.footer("Run 'gprinv <command> --help' for command options and 'gprinv --schema' for config keys.");
  bool schema = false;
  app.add_flag("--schema", schema, "print every config key with its defaults");

  Common common;

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "simulate scenes into a dataset");
  add_common(g, common);
  g->add_option("--out", gen.out, "dataset directory")->required();
  g->add_option("--samples", gen.samples, "total samples, split over groups in profile proportion");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on a dataset");
  add_common(t, common);
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "checkpoint (default DATA/model.gprc)");
  t->add_option("--loss-csv", tr.loss_csv, "loss curve CSV (default next to the checkpoint)");
  t->add_option("--epochs", tr.epochs, "overrides train.epochs");
  t->add_option("--lr", tr.lr, "overrides train.lr");

  TrainArgs ft;
  auto* f = app.add_subcommand("fine-tune", "continue training a checkpoint on a small dataset");
  add_common(f, common);
  f->add_option("--checkpoint", ft.checkpoint, "pretrained checkpoint")->required();
  f->add_option("--data", ft.data, "dataset directory")->required();
  f->add_option("--out", ft.out, "checkpoint (default DATA/finetuned.gprc)");
  f->add_option("--loss-csv", ft.loss_csv, "loss curve CSV");
  f->add_option("--epochs", ft.epochs, "overrides finetune.epochs");
  f->add_option("--lr", ft.lr, "overrides finetune.lr");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "predict the permittivity map of one B-scan");
  add_common(i, common);
  i->add_option("--checkpoint", inf.checkpoint, "checkpoint")->required();
  i->add_option("--input", inf.input, "GPRT B-scan, normalized to [0, 1] unless --raw")->required();
  i->add_flag("--raw", inf.raw, "input is a raw V/m B-scan; apply the dataset preprocessing");
  i->add_option("--out", inf.out, "output directory")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "score a checkpoint on a dataset split");
  add_common(e, common);
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint")->required();
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--out", ev.out, "metrics CSV (default DATA/metrics.csv)");
  e->add_option("--split", ev.split, "overrides evaluate.split");
  e->add_option("--groups", ev.groups, "overrides evaluate.groups");

  FwiArgs fw;
  auto* w = app.add_subcommand("fwi", "simulated-annealing full-waveform inversion");
  add_common(w, common);
  w->add_option("--data", fw.data, "dataset directory; the observation is re-simulated");
  w->add_option("--sample", fw.sample, "sample id in --data");
  w->add_option("--observed", fw.observed, "raw V/m B-scan GPRT instead of --data");
  w->add_option("--field-seed", fw.field_seed, "soil field seed for --observed");
  w->add_option("--start", fw.start, "starting objects (manifest object syntax)");
  w->add_option("--out", fw.out, "output directory")->required();

  ExportArgs ex;
  auto* x = app.add_subcommand("export-figures", "write the CSV/GPRT bundle for the figure scripts");
  add_common(x, common);
  x->add_option("--data", ex.data, "dataset directory")->required();
  x->add_option("--out", ex.out, "bundle directory")->required();
  x->add_option("--checkpoint", ex.checkpoint, "adds denoised and predicted panels");
  x->add_option("--samples", ex.samples, "samples to export (default 4)");
  x->add_option("--split", ex.split, "overrides evaluate.split");
  x->add_option("--loss-csv", ex.loss_csv, "copied to loss.csv");
  x->add_option("--metrics-csv", ex.metrics_csv, "copied to metrics.csv");
  x->add_option("--fwi", ex.fwi_dir, "fwi output directory; adds an fwi panel for its sample");

  SelftestArgs st;
  auto* s = app.add_subcommand("selftest", "gradient, FDTD physics and metric oracle checks");
  add_common(s, common);
  s->add_option("--seeds", st.seeds, "gradient-check seeds (default 3)");
  s->add_flag("--skip-physics", st.skip_physics, "skip the FDTD checks");

  // --schema alone is a complete request.
  if (argc == 2 && std::string(argv[1]) == "--schema") {
    out << schema_help();
    return 0;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex_) {
    app.exit(ex_, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& ex_) {
    app.exit(ex_, out, err);
    return 0;
  } catch (const CLI::ParseError& ex_) {
    std::ostringstream sink;
    app.exit(ex_, sink, err);
    return 2;
  }

  try {
    if (g->parsed()) return cmd_generate(common, gen, out, err);
    if (t->parsed()) return cmd_train(common, tr, out);
    if (f->parsed()) return cmd_fine_tune(common, ft, out);
    if (i->parsed()) return cmd_infer(common, inf, out);
    if (e->parsed()) return cmd_evaluate(common, ev, out, err);
    if (w->parsed()) return cmd_fwi(common, fw, out, err);
    if (x->parsed()) return cmd_export(common, ex, out);
    if (s->parsed()) return cmd_selftest(common, st, out);
  } catch (const Error& ex_) {
    err << "error: " << ex_.what() << '\n';
    if (ex_.code() == ErrorCode::InvalidConfig) {
      err << "\n" << schema_help();
      return 2;
    }
    return 1;
  } catch (const std::exception& ex_) {
    err << "error: " << ex_.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace gprinv::cli
