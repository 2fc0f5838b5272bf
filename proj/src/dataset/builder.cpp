#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "gprinv/dataset.hpp"
#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"

namespace gprinv::dataset {

namespace {

constexpr const char* kPartialName = "manifest.partial";

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string group_of_count(std::size_t n) {
  static const char* names[] = {"zero", "one", "two", "three"};
  return names[n];
}

struct PlannedSample {
  std::size_t index = 0;
  std::size_t n_objects = 0;
  Split split = Split::Train;
};

std::vector<PlannedSample> plan_samples(const DatasetConfig& c) {
  std::vector<PlannedSample> plan;
  const std::size_t counts[] = {c.zero_object, c.one_object, c.two_object, c.three_object};
  std::size_t index = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    const std::size_t first = plan.size();
    for (std::size_t k = 0; k < counts[n]; ++k) plan.push_back({index++, n, Split::Train});
    // Test membership: a seeded shuffle of the group, first round(n f) win.
    std::vector<std::size_t> order(counts[n]);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(c.master_seed, "split", n));
    std::shuffle(order.begin(), order.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(counts[n]) * c.test_fraction));
    // Tiny groups keep one sample on each side of the split.
    if (c.test_fraction > 0.0 && c.test_fraction < 1.0 && counts[n] >= 2) {
      n_test = std::clamp<std::size_t>(n_test, 1, counts[n] - 1);
    }
    for (std::size_t k = 0; k < n_test; ++k) plan[first + order[k]].split = Split::Test;
  }
  return plan;
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", index);
  return buf;
}

Image quantized(const Image& img) {
  Image out = img;
  for (double& v : out.storage()) v = to_lattice(v);
  return out;
}

// Drops an unterminated trailing line left by an interrupted append.
void trim_torn_tail(const std::filesystem::path& path) {
  std::string text;
  {
    std::ifstream in(path, std::ios::binary);
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  if (text.empty() || text.back() == '\n') return;
  const auto last = text.rfind('\n');
  text.resize(last == std::string::npos ? 0 : last + 1);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

bool files_valid(const DatasetManifest& m, const std::filesystem::path& root, const SampleRecord& rec) {
  DatasetManifest single = m;
  single.samples = {rec};
  try {
    load_sample(single, root, rec.id);
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

std::size_t DatasetConfig::total() const { return zero_object + one_object + two_object + three_object; }

void DatasetConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidConfig, "dataset: " + what); };
  sim.grid.validate();
  sim.source.validate();
  sim.scan.validate();
  soil.validate();
  ranges.validate();
  norm.validate();
  if (soil_fields == 0) bad("soil_fields must be >= 1");
  if (total() == 0) bad("no samples requested");
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) bad("test_fraction must be in [0, 1]");
  if (image_size < 2) bad("image_size must be >= 2");
  if (sim.scan.positions() < 2) bad("scan must have >= 2 positions for mean subtraction");
  if (!(object_sigma >= 0.0)) bad("object_sigma must be >= 0");
}

std::string DatasetConfig::describe() const {
  std::ostringstream o;
  const auto& g = sim.grid;
  const auto& s = sim.source;
  o << "grid.cell_size=" << num(g.cell_size) << "\ngrid.soil_width=" << num(g.soil_width)
    << "\ngrid.soil_depth=" << num(g.soil_depth) << "\ngrid.air_height=" << num(g.air_height)
    << "\ngrid.pml_cells=" << g.pml_cells << "\ngrid.dt=" << num(g.dt)
    << "\ngrid.time_window=" << num(g.time_window) << "\ngrid.trace_length=" << g.trace_length
    << "\nsource.amplitude=" << num(s.amplitude) << "\nsource.center_frequency=" << num(s.center_frequency)
    << "\nsource.tx_offset_x=" << num(s.tx_offset_x) << "\nsource.rx_offset_x=" << num(s.rx_offset_x)
    << "\nsource.elevation=" << num(s.elevation) << "\nscan.step=" << num(sim.scan.step)
    << "\nscan.span=" << num(sim.scan.span) << "\nsoil=" << scene::soil_to_string(soil);
  o << "\nranges.shapes=";
  for (auto sh : ranges.shapes) o << scene::to_string(sh) << ' ';
  auto iv = [&](const char* name, const scene::Interval& v) {
    o << "\nranges." << name << '=' << num(v.lo) << ',' << num(v.hi);
  };
  iv("eps_r", ranges.eps_r);
  iv("radius", ranges.radius);
  iv("center_x", ranges.center_x);
  iv("center_y", ranges.center_y);
  iv("rect_anchor_x", ranges.rect_anchor_x);
  iv("rect_anchor_y", ranges.rect_anchor_y);
  iv("rect_width", ranges.rect_width);
  iv("rect_length", ranges.rect_length);
  iv("orientation_deg", ranges.orientation_deg);
  o << "\nsoil_fields=" << soil_fields << "\ncounts=" << zero_object << ',' << one_object << ','
    << two_object << ',' << three_object << "\ntest_fraction=" << num(test_fraction)
    << "\nimage_size=" << image_size << "\nnorm=" << num(norm.bscan_lo) << ',' << num(norm.bscan_hi)
    << ',' << num(norm.perm_lo) << ',' << num(norm.perm_hi) << "\nobject_sigma=" << num(object_sigma)
    << "\nmaster_seed=" << master_seed << '\n';
  return o.str();
}

std::string DatasetConfig::hash() const { return to_hex(fnv1a64(describe())); }

DatasetConfig DatasetConfig::paper() { return DatasetConfig{}; }

DatasetConfig DatasetConfig::desk() {
  DatasetConfig c;
  c.sim = fdtd::SimProfile::desk();
  c.ranges = scene::ObjectSamplingRanges::desk();
  c.one_object = 140;
  c.two_object = 210;
  c.test_fraction = 1.0 / 7.0;
  c.image_size = 32;
  return c;
}

bool objects_touch(const scene::ObjectSpec& a, const scene::ObjectSpec& b, double width,
                   double depth, double cell_size) {
  scene::Scenario sc;
  sc.domain_width = width;
  sc.domain_depth = depth;
  sc.cell_size = cell_size;
  sc.objects = {a};
  const auto ma = scene::rasterize_scene(sc).values;
  sc.objects = {b};
  const auto mb = scene::rasterize_scene(sc).values;
  for (std::size_t r = 0; r < ma.rows(); ++r) {
    for (std::size_t c = 0; c < ma.cols(); ++c) {
      if (ma(r, c) == 0.0) continue;
      if (mb(r, c) != 0.0) return true;
      if (r > 0 && mb(r - 1, c) != 0.0) return true;
      if (r + 1 < ma.rows() && mb(r + 1, c) != 0.0) return true;
      if (c > 0 && mb(r, c - 1) != 0.0) return true;
      if (c + 1 < ma.cols() && mb(r, c + 1) != 0.0) return true;
    }
  }
  return false;
}

DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir,
                              const BuildOptions& options) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "tensors");

  DatasetManifest manifest;
  manifest.master_seed = config.master_seed;
  manifest.config_hash = config.hash();
  manifest.norm = config.norm;
  manifest.image_rows = config.image_size;
  manifest.image_cols = config.image_size;
  manifest.soil = config.soil;
  manifest.domain_width = config.sim.grid.soil_width;
  manifest.domain_depth = config.sim.grid.soil_depth;
  manifest.cell_size = config.sim.grid.cell_size;

  const auto plan = plan_samples(config);
  const fs::path final_path = out_dir / kManifestName;
  const fs::path partial_path = out_dir / kPartialName;

  // Completed earlier: a finished manifest with the same configuration.
  if (fs::exists(final_path)) {
    auto done = DatasetManifest::read(final_path);
    if (done.config_hash == manifest.config_hash && done.samples.size() == plan.size() &&
        std::all_of(done.samples.begin(), done.samples.end(),
                    [&](const SampleRecord& r) { return files_valid(done, out_dir, r); })) {
      return done;
    }
  }

  std::map<std::string, SampleRecord> finished;
  if (fs::exists(partial_path)) {
    trim_torn_tail(partial_path);
    try {
      const auto partial = DatasetManifest::read(partial_path);
      if (partial.config_hash == manifest.config_hash) {
        for (const auto& r : partial.samples) {
          if (files_valid(manifest, out_dir, r)) finished[r.id] = r;
        }
      }
    } catch (const Error&) {
      finished.clear();
    }
  }
  {
    DatasetManifest header = manifest;
    for (const auto& [id, r] : finished) header.samples.push_back(r);
    header.write(partial_path);
  }

  std::vector<const PlannedSample*> pending;
  for (const auto& p : plan) {
    if (!finished.count(sample_id(p.index))) pending.push_back(&p);
  }

  const auto& grid = config.sim.grid;
  const auto freq = config.sim.source.center_frequency;
  scene::EmbedOptions embed;
  embed.air_height = grid.air_height;
  embed.object_sigma = config.object_sigma;
  const std::size_t rows = grid.soil_rows();
  const std::size_t cols = grid.cols();

  auto field_index = [&](std::size_t i) {
    return derive_seed(config.master_seed, "field-pick", i) % config.soil_fields;
  };
  auto field_seed = [&](std::uint64_t k) { return derive_seed(config.master_seed, "field", k); };

  // Soil-only scans, one per soil field used by a pending sample.
  std::vector<std::uint64_t> needed;
  for (const auto* p : pending) needed.push_back(field_index(p->index));
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  std::map<std::uint64_t, Image> soil_scans;
  for (auto k : needed) soil_scans[k] = Image();

  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  auto run_parallel = [&](std::size_t n, const std::function<void(std::size_t)>& job) {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto worker = [&] {
      for (std::size_t k = next++; k < n; k = next++) {
        try {
          job(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    };
    const std::size_t w = std::min(workers, std::max<std::size_t>(n, 1));
    if (w <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < w; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  };

  run_parallel(needed.size(), [&](std::size_t j) {
    const auto k = needed[j];
    const auto field = scene::make_soil_field(config.soil, rows, cols, grid.cell_size, freq, field_seed(k));
    const auto materials = scene::embed_objects(field, {}, embed);
    soil_scans.at(k) = quantized(fdtd::run_bscan(materials, grid, config.sim.source, config.sim.scan).traces);
  });

  std::mutex io_mutex;
  std::ofstream partial(partial_path, std::ios::app);
  if (!partial) fail(ErrorCode::Io, "cannot append to " + partial_path.string());
  std::atomic<std::size_t> done{finished.size()};

  run_parallel(pending.size(), [&](std::size_t j) {
    const PlannedSample& p = *pending[j];
    SampleRecord rec;
    rec.id = sample_id(p.index);
    rec.split = p.split;
    try {
      const auto k = field_index(p.index);
      rec.field_seed = field_seed(k);
      rec.objects = scene::sample_objects(derive_seed(config.master_seed, "objects", p.index),
                                          static_cast<int>(p.n_objects), config.ranges);
      rec.group = group_of_count(p.n_objects);
      if (p.n_objects == 2) {
        rec.group = objects_touch(rec.objects[0], rec.objects[1], grid.soil_width, grid.soil_depth, grid.cell_size)
                        ? "two-interfaced"
                        : "two-separated";
      }
      scene::Scenario sc = manifest.scenario(rec);
      const auto field = scene::make_soil_field(config.soil, rows, cols, grid.cell_size, freq, rec.field_seed);
      const auto materials = scene::embed_objects(field, rec.objects, embed);
      const Image noisy_raw =
          quantized(fdtd::run_bscan(materials, grid, config.sim.source, config.sim.scan).traces);
      const Image& soil_raw = soil_scans.at(k);

      // One mean trace, on the 2^-32 lattice, removed from both scans: every
      // difference below is then exact and label + soil == noisy holds bit
      // for bit.
      auto mean = mean_trace(noisy_raw);
      for (double& v : mean) v = to_lattice(v);
      const Image noisy = subtract_trace(noisy_raw, mean);
      const Image soil = subtract_trace(soil_raw, mean);
      const Image label = make_denoised_label(noisy, soil);
      if (options.on_sample) options.on_sample(rec, noisy, soil, label);

      const auto perm = scene::rasterize_scene(sc).values;
      const auto n = config.image_size;
      const auto& nm = config.norm;
      rec.noisy_path = "tensors/" + rec.id + "_noisy.gprt";
      rec.denoised_path = "tensors/" + rec.id + "_denoised.gprt";
      rec.perm_path = "tensors/" + rec.id + "_perm.gprt";
      write_gprt(out_dir / rec.noisy_path, Tensor::from_image(resize_bilinear(normalize(noisy, nm.bscan_lo, nm.bscan_hi), n, n)));
      write_gprt(out_dir / rec.denoised_path, Tensor::from_image(resize_bilinear(normalize(label, nm.bscan_lo, nm.bscan_hi), n, n)));
      write_gprt(out_dir / rec.perm_path, Tensor::from_image(resize_bilinear(normalize(perm, nm.perm_lo, nm.perm_hi), n, n)));
    } catch (const Error& e) {
      fail(e.code(), "sample " + rec.id + ": " + e.what());
    }
    std::lock_guard lock(io_mutex);
    partial << manifest_line(rec) << '\n' << std::flush;
    finished[rec.id] = rec;
    const std::size_t d = ++done;
    if (options.progress) options.progress(d, plan.size());
  });
  partial.close();

  for (const auto& p : plan) manifest.samples.push_back(finished.at(sample_id(p.index)));
  manifest.write(final_path);
  std::filesystem::remove(partial_path);
  return manifest;
}

}  // namespace gprinv::dataset
