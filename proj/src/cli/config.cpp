#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <thread>

#include "gprinv/cli.hpp"
#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"

namespace gprinv::cli {

namespace {

[[noreturn]] void bad_value(const Assignment& a, const std::string& want) {
  fail(ErrorCode::InvalidConfig,
       a.origin + ": " + a.key + " = '" + a.value + "': expected " + want);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

double to_double(const Assignment& a) {
  double v = 0;
  const auto& s = a.value;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    bad_value(a, "a finite number");
  }
  return v;
}

std::uint64_t to_u64(const Assignment& a) {
  std::uint64_t v = 0;
  const auto& s = a.value;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad_value(a, "a non-negative integer");
  return v;
}

bool to_bool(const Assignment& a) {
  const auto& s = a.value;
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  bad_value(a, "true or false");
}

scene::Interval to_interval(const Assignment& a) {
  const auto parts = split_list(a.value);
  if (parts.size() != 2) bad_value(a, "'lo, hi'");
  Assignment lo = a, hi = a;
  lo.value = parts[0];
  hi.value = parts[1];
  const scene::Interval iv{to_double(lo), to_double(hi)};
  if (iv.lo > iv.hi) bad_value(a, "lo <= hi");
  return iv;
}

std::string fmt(const scene::Interval& iv) { return fmt(iv.lo) + ", " + fmt(iv.hi); }

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, const Assignment&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GPRINV_NUM(name, field, help)                                              \
  Entry {                                                                          \
    {name, help}, [](RunConfig& c, const Assignment& a) { c.field = to_double(a); }, \
        [](const RunConfig& c) { return fmt(static_cast<double>(c.field)); }         \
  }
#define GPRINV_INT(name, field, help)                                                      \
  Entry {                                                                                  \
    {name, help},                                                                          \
        [](RunConfig& c, const Assignment& a) {                                            \
          c.field = static_cast<decltype(c.field)>(to_u64(a));                             \
        },                                                                                 \
        [](const RunConfig& c) { return std::to_string(c.field); }                         \
  }
#define GPRINV_BOOL(name, field, help)                                           \
  Entry {                                                                        \
    {name, help}, [](RunConfig& c, const Assignment& a) { c.field = to_bool(a); }, \
        [](const RunConfig& c) { return fmt(c.field); }                            \
  }
#define GPRINV_RANGE(name, field, help)                                              \
  Entry {                                                                            \
    {name, help}, [](RunConfig& c, const Assignment& a) { c.field = to_interval(a); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    // run.profile is consumed by resolve(); applying it alone only records it.
    t.push_back({{"run.profile", "desk | paper; selects every default below"},
                 [](RunConfig& c, const Assignment& a) {
                   if (a.value != "desk" && a.value != "paper") bad_value(a, "desk or paper");
                   c.profile = a.value;
                 },
                 [](const RunConfig& c) { return c.profile; }});
    t.push_back(GPRINV_INT("run.seed", seed, "master seed of every pipeline stage"));
    t.push_back(GPRINV_INT("run.workers", workers,
                           "worker threads; 0 = all cores for generate, 1 for training"));

    t.push_back(GPRINV_INT("dataset.zero_object", data.zero_object, "scenes without objects"));
    t.push_back(GPRINV_INT("dataset.one_object", data.one_object, "scenes with one object"));
    t.push_back(GPRINV_INT("dataset.two_object", data.two_object, "scenes with two objects"));
    t.push_back(GPRINV_INT("dataset.three_object", data.three_object, "scenes with three objects"));
    t.push_back(GPRINV_NUM("dataset.test_fraction", data.test_fraction,
                           "test share per object-count group, in [0, 1]"));
    t.push_back(GPRINV_INT("dataset.image_size", data.image_size, "square network image side"));
    t.push_back(GPRINV_INT("dataset.soil_fields", data.soil_fields,
                           "distinct fractal soil fields cycled over the scenes"));
    t.push_back(GPRINV_NUM("dataset.object_sigma", data.object_sigma, "object conductivity, S/m"));

    t.push_back(GPRINV_NUM("sim.cell_size", data.sim.grid.cell_size, "FDTD cell size, m"));
    t.push_back(GPRINV_NUM("sim.soil_width", data.sim.grid.soil_width, "soil domain width, m"));
    t.push_back(GPRINV_NUM("sim.soil_depth", data.sim.grid.soil_depth, "soil domain depth, m"));
    t.push_back(GPRINV_NUM("sim.air_height", data.sim.grid.air_height, "free space above the soil, m"));
    t.push_back(GPRINV_INT("sim.pml_cells", data.sim.grid.pml_cells, "CPML thickness, cells"));
    t.push_back(GPRINV_NUM("sim.dt", data.sim.grid.dt, "time step, s; 0 = Courant limit x 0.99"));
    t.push_back(GPRINV_NUM("sim.time_window", data.sim.grid.time_window, "simulated time, s"));
    t.push_back(GPRINV_INT("sim.trace_length", data.sim.grid.trace_length, "samples per A-scan"));
    t.push_back(GPRINV_NUM("sim.amplitude", data.sim.source.amplitude, "source current amplitude, A"));
    t.push_back(GPRINV_NUM("sim.center_frequency", data.sim.source.center_frequency,
                           "Gaussian source center frequency, Hz"));
    t.push_back(GPRINV_NUM("sim.tx_offset_x", data.sim.source.tx_offset_x,
                           "transmitter offset from the trace position, m"));
    t.push_back(GPRINV_NUM("sim.rx_offset_x", data.sim.source.rx_offset_x,
                           "receiver offset from the trace position, m"));
    t.push_back(GPRINV_NUM("sim.elevation", data.sim.source.elevation, "antenna height, m"));
    t.push_back(GPRINV_NUM("sim.scan_step", data.sim.scan.step, "trace spacing, m"));
    t.push_back(GPRINV_NUM("sim.scan_span", data.sim.scan.span, "centered scan length, m"));

    t.push_back(GPRINV_NUM("soil.sand_fraction", data.soil.sand_fraction, "Peplinski sand fraction"));
    t.push_back(GPRINV_NUM("soil.clay_fraction", data.soil.clay_fraction, "Peplinski clay fraction"));
    t.push_back(GPRINV_NUM("soil.bulk_density", data.soil.bulk_density, "g/cm^3"));
    t.push_back(GPRINV_NUM("soil.particle_density", data.soil.particle_density, "g/cm^3"));
    t.push_back(GPRINV_NUM("soil.water_fraction_min", data.soil.water_fraction_min,
                           "volumetric water fraction, lower bound"));
    t.push_back(GPRINV_NUM("soil.water_fraction_max", data.soil.water_fraction_max,
                           "volumetric water fraction, upper bound"));
    t.push_back(GPRINV_INT("soil.n_materials", data.soil.n_materials, "soil material bins"));
    t.push_back(GPRINV_NUM("soil.fractal_dimension", data.soil.fractal_dimension,
                           "fractal dimension of the water-fraction field"));

    t.push_back({{"objects.shapes", "comma list of circle, semicircle, triangle, rectangle"},
                 [](RunConfig& c, const Assignment& a) {
                   std::vector<scene::Shape> shapes;
                   for (const auto& s : split_list(a.value)) {
                     try {
                       shapes.push_back(scene::shape_from_string(s));
                     } catch (const Error&) {
                       bad_value(a, "shape names");
                     }
                   }
                   if (shapes.empty()) bad_value(a, "at least one shape");
                   c.data.ranges.shapes = shapes;
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (auto sh : c.data.ranges.shapes) s += (s.empty() ? "" : ", ") + std::string(scene::to_string(sh));
                   return s;
                 }});
    t.push_back(GPRINV_RANGE("objects.eps_r", data.ranges.eps_r, "object relative permittivity"));
    t.push_back(GPRINV_RANGE("objects.radius", data.ranges.radius,
                             "circle radius / triangle vertex distance, m"));
    t.push_back(GPRINV_RANGE("objects.center_x", data.ranges.center_x, "object center x, m"));
    t.push_back(GPRINV_RANGE("objects.center_y", data.ranges.center_y,
                             "object center y above the domain bottom, m"));
    t.push_back(GPRINV_RANGE("objects.rect_anchor_x", data.ranges.rect_anchor_x,
                             "rectangle left-bottom vertex x, m"));
    t.push_back(GPRINV_RANGE("objects.rect_anchor_y", data.ranges.rect_anchor_y,
                             "rectangle left-bottom vertex y, m"));
    t.push_back(GPRINV_RANGE("objects.rect_width", data.ranges.rect_width, "rectangle width, m"));
    t.push_back(GPRINV_RANGE("objects.rect_length", data.ranges.rect_length, "rectangle length, m"));
    t.push_back(GPRINV_RANGE("objects.orientation_deg", data.ranges.orientation_deg,
                             "rotation, degrees"));

    t.push_back(GPRINV_NUM("norm.bscan_lo", data.norm.bscan_lo, "B-scan value mapped to 0, V/m"));
    t.push_back(GPRINV_NUM("norm.bscan_hi", data.norm.bscan_hi, "B-scan value mapped to 1, V/m"));
    t.push_back(GPRINV_NUM("norm.perm_lo", data.norm.perm_lo, "permittivity mapped to 0"));
    t.push_back(GPRINV_NUM("norm.perm_hi", data.norm.perm_hi, "permittivity mapped to 1"));

    t.push_back({{"model.kind", "dmrf | smrf | unet | encdec"},
                 [](RunConfig& c, const Assignment& a) {
                   try {
                     c.kind = dmrf::model_kind_from_string(a.value);
                   } catch (const Error&) {
                     bad_value(a, "dmrf, smrf, unet or encdec");
                   }
                 },
                 [](const RunConfig& c) { return std::string(dmrf::to_string(c.kind)); }});
    t.push_back(GPRINV_NUM("model.width_factor", width_factor,
                           "channel multiplier; stage widths 64 f 2^s"));
    t.push_back(GPRINV_NUM("model.alpha", alpha, "weight of the denoising loss"));
    t.push_back(GPRINV_NUM("model.beta", beta, "weight of the inversion loss"));
    t.push_back(GPRINV_BOOL("model.two_channel_input", two_channel_input,
                            "stage 2 sees the noisy and the denoised B-scan"));
    t.push_back(GPRINV_BOOL("model.end_to_end", end_to_end,
                            "false: train stage 1, freeze it, then train stage 2"));
    t.push_back(GPRINV_BOOL("model.auto_balance", auto_balance,
                            "set alpha from the first epoch's loss ratio"));

    t.push_back(GPRINV_INT("train.epochs", epochs, "training epochs"));
    t.push_back(GPRINV_NUM("train.lr", lr, "Adam learning rate"));
    t.push_back(GPRINV_INT("train.batch", batch, "minibatch size"));

    t.push_back(GPRINV_INT("finetune.epochs", finetune_epochs, "fine-tuning epochs"));
    t.push_back(GPRINV_NUM("finetune.lr", finetune_lr,
                           "initial rate; x0.99 after an epoch without loss drop"));

    t.push_back(GPRINV_NUM("fwi.t0", anneal.t0, "initial temperature; 0 = t0_factor x initial misfit"));
    t.push_back(GPRINV_NUM("fwi.t0_factor", anneal.t0_factor, "see fwi.t0"));
    t.push_back(GPRINV_NUM("fwi.gamma", anneal.gamma, "geometric cooling factor in (0, 1)"));
    t.push_back(GPRINV_NUM("fwi.proposal_fraction", anneal.proposal_fraction,
                           "proposal std as a fraction of each bound width"));
    t.push_back(GPRINV_BOOL("fwi.single_parameter", anneal.single_parameter,
                            "perturb one parameter per proposal"));
    t.push_back(GPRINV_INT("fwi.max_iters", anneal.max_iters, "iteration limit"));
    t.push_back(GPRINV_INT("fwi.stall_limit", anneal.stall_limit,
                           "stop after this many iterations without improvement"));
    t.push_back(GPRINV_NUM("fwi.target_objective", anneal.target_objective, "stop at this misfit"));
    t.push_back(GPRINV_BOOL("fwi.search_shapes", anneal.search_shapes, "also search shape codes"));
    t.push_back(GPRINV_NUM("fwi.shape_resample_prob", anneal.shape_resample_prob,
                           "per-proposal shape resampling probability"));
    t.push_back({{"fwi.soil_model", "homogeneous | true; soil assumed by the forward model"},
                 [](RunConfig& c, const Assignment& a) {
                   try {
                     c.fwi_soil = fwi::soil_model_from_string(a.value);
                   } catch (const Error&) {
                     bad_value(a, "homogeneous or true");
                   }
                 },
                 [](const RunConfig& c) { return std::string(fwi::to_string(c.fwi_soil)); }});
    t.push_back(GPRINV_NUM("fwi.start_eps", fwi_start_eps,
                           "default start: eps_r perturbed by up to this fraction"));
    t.push_back(GPRINV_NUM("fwi.start_offset", fwi_start_offset,
                           "default start: centers moved by up to this many m"));

    t.push_back({{"evaluate.split", "test | train"},
                 [](RunConfig& c, const Assignment& a) {
                   if (a.value != "test" && a.value != "train") bad_value(a, "test or train");
                   c.eval_split = a.value;
                 },
                 [](const RunConfig& c) { return c.eval_split; }});
    t.push_back({{"evaluate.groups", "comma list of groups; empty = all"},
                 [](RunConfig& c, const Assignment& a) { c.eval_groups = split_list(a.value); },
                 [](const RunConfig& c) {
                   std::string s;
                   for (const auto& g : c.eval_groups) s += (s.empty() ? "" : ", ") + g;
                   return s;
                 }});
    t.push_back(GPRINV_BOOL("evaluate.windowed", eval_windowed,
                            "11x11 Gaussian-window SSIM instead of global"));
    t.push_back(GPRINV_INT("evaluate.batch", eval_batch, "inference batch size"));
    return t;
  }();
  return table;
}

#undef GPRINV_NUM
#undef GPRINV_INT
#undef GPRINV_BOOL
#undef GPRINV_RANGE

const Entry* find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return &e;
  }
  return nullptr;
}

bool known_section(const std::string& s) {
  for (const auto& e : entries()) {
    if (e.key.name.compare(0, s.size() + 1, s + ".") == 0) return true;
  }
  return false;
}

}  // namespace

RunConfig RunConfig::defaults(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == "paper") {
    c.data = dataset::DatasetConfig::paper();
    c.finetune_epochs = 50;
    c.finetune_lr = 1e-4;
  } else if (profile == "desk") {
    c.data = dataset::DatasetConfig::desk();
    c.width_factor = 0.125;
    c.epochs = 30;
    c.lr = 3e-4;
    c.batch = 8;
    c.finetune_epochs = 5;
    c.finetune_lr = 1e-4;
    c.eval_batch = 8;
  } else {
    fail(ErrorCode::InvalidConfig, "unknown profile '" + profile + "' (desk, paper)");
  }
  return c;
}

dmrf::DMRFConfig RunConfig::model() const {
  dmrf::DMRFConfig m = dmrf::DMRFConfig::for_kind(kind, width_factor);
  m.alpha = alpha;
  m.beta = beta;
  m.two_channel_input = two_channel_input;
  if (m.has_stage1() && !two_channel_input) m.stage2.in_channels = 1;
  m.end_to_end = end_to_end;
  m.auto_balance = auto_balance;
  m.epochs = epochs;
  m.lr = lr;
  m.batch = batch;
  m.seed = seed;
  return m;
}

dataset::DatasetConfig RunConfig::dataset() const {
  dataset::DatasetConfig d = data;
  d.master_seed = seed;
  return d;
}

void RunConfig::validate() const {
  dataset().validate();
  model().validate();
  anneal.validate();
  if (!(width_factor > 0.0)) fail(ErrorCode::InvalidConfig, "model.width_factor must be > 0");
  if (!(finetune_lr > 0.0)) fail(ErrorCode::InvalidConfig, "finetune.lr must be > 0");
  if (eval_batch == 0) fail(ErrorCode::InvalidConfig, "evaluate.batch must be >= 1");
  if (!(fwi_start_eps >= 0.0) || !(fwi_start_offset >= 0.0)) {
    fail(ErrorCode::InvalidConfig, "fwi.start_eps and fwi.start_offset must be >= 0");
  }
}

std::string RunConfig::text() const {
  std::ostringstream o;
  std::string section;
  for (const auto& e : entries()) {
    const auto dot = e.key.name.find('.');
    const std::string s = e.key.name.substr(0, dot);
    if (s != section) {
      o << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    o << e.key.name.substr(dot + 1) << " = " << e.get(*this) << '\n';
  }
  return o.str();
}

std::string RunConfig::hash() const { return to_hex(fnv1a64(text())); }

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

std::string schema_help() {
  const RunConfig desk = RunConfig::defaults("desk");
  const RunConfig paper = RunConfig::defaults("paper");
  std::ostringstream o;
  o << "Config file: '[section]' headers, 'key = value' lines, '#' comments.\n"
       "Override any key with --set section.key=value. Unknown keys are errors.\n\n";
  for (const auto& e : entries()) {
    o << "  " << e.key.name << "  (desk: " << e.get(desk);
    const std::string p = e.get(paper);
    if (p != e.get(desk)) o << ", paper: " << p;
    o << ")\n      " << e.key.help << '\n';
  }
  return o.str();
}

std::vector<Assignment> parse_config_text(const std::string& text, const std::string& origin) {
  std::vector<Assignment> out;
  std::istringstream in(text);
  std::string line, section;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const std::string where = origin + ":" + std::to_string(n);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorCode::InvalidConfig, where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section)) fail(ErrorCode::InvalidConfig, where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::InvalidConfig, where + ": expected 'key = value'");
    if (section.empty()) fail(ErrorCode::InvalidConfig, where + ": key outside a [section]");
    const std::string key = trim(line.substr(0, eq));
    Assignment a{section + "." + key, trim(line.substr(eq + 1)), where};
    if (!find_entry(a.key)) fail(ErrorCode::InvalidConfig, where + ": unknown key '" + a.key + "'");
    out.push_back(std::move(a));
  }
  return out;
}

Assignment parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) {
    fail(ErrorCode::InvalidConfig, "--set " + text + ": expected section.key=value");
  }
  Assignment a{trim(text.substr(0, eq)), trim(text.substr(eq + 1)), "--set"};
  if (!find_entry(a.key)) fail(ErrorCode::InvalidConfig, "--set: unknown key '" + a.key + "'");
  return a;
}

void apply(RunConfig& cfg, const Assignment& a) {
  const Entry* e = find_entry(a.key);
  if (!e) fail(ErrorCode::InvalidConfig, a.origin + ": unknown key '" + a.key + "'");
  e->set(cfg, a);
}

std::string get(const RunConfig& cfg, const std::string& key) {
  const Entry* e = find_entry(key);
  if (!e) fail(ErrorCode::InvalidConfig, "unknown key '" + key + "'");
  return e->get(cfg);
}

RunConfig resolve(const std::vector<Assignment>& assignments) {
  std::string profile = "desk";
  for (const auto& a : assignments) {
    if (a.key == "run.profile") {
      RunConfig probe;
      apply(probe, a);
      profile = probe.profile;
    }
  }
  RunConfig c = RunConfig::defaults(profile);
  for (const auto& a : assignments) apply(c, a);
  return c;
}

std::size_t resolve_workers(std::size_t requested, std::size_t fallback) {
  std::size_t w = requested == 0 ? fallback : requested;
  if (const char* cap = std::getenv("GPRINV_MAX_WORKERS")) {
    std::size_t v = 0;
    const std::string s = cap;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || v == 0) {
      fail(ErrorCode::InvalidConfig, "GPRINV_MAX_WORKERS must be a positive integer");
    }
    w = std::min(w, v);
  }
  return std::max<std::size_t>(w, 1);
}

void set_total_samples(dataset::DatasetConfig& data, std::size_t total) {
  std::size_t* groups[] = {&data.zero_object, &data.one_object, &data.two_object, &data.three_object};
  std::size_t old = 0;
  for (auto* g : groups) old += *g;
  if (total == 0) fail(ErrorCode::InvalidConfig, "--samples must be >= 1");
  if (old == 0) fail(ErrorCode::InvalidConfig, "no object-count groups to scale");
  std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder, index)
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t share = *groups[i] * total;
    rem.emplace_back(share % old, i);
    *groups[i] = share / old;
    assigned += *groups[i];
  }
  // Largest remainders first; ties go to the earlier group.
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++*groups[rem[k].second];
}

}  // namespace gprinv::cli
