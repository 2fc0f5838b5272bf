#include <cstdio>
#include <fstream>
#include <sstream>

#include "gprinv/dataset.hpp"
#include "gprinv/error.hpp"

namespace gprinv::dataset {

namespace {

constexpr const char* kMagicLine = "#gprinv-dataset";

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

const char* to_string(Split s) noexcept { return s == Split::Train ? "train" : "test"; }

std::string manifest_line(const SampleRecord& s) {
  return "sample\t" + s.id + '\t' + to_string(s.split) + '\t' + s.group + '\t' + s.noisy_path +
         '\t' + s.denoised_path + '\t' + s.perm_path + '\t' + std::to_string(s.field_seed) + '\t' +
         scene::objects_to_string(s.objects);
}

const SampleRecord* DatasetManifest::find(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

std::vector<const SampleRecord*> DatasetManifest::split(Split s) const {
  std::vector<const SampleRecord*> out;
  for (const auto& rec : samples) {
    if (rec.split == s) out.push_back(&rec);
  }
  return out;
}

scene::Scenario DatasetManifest::scenario(const SampleRecord& rec) const {
  scene::Scenario sc;
  sc.soil = soil;
  sc.field_seed = rec.field_seed;
  sc.objects = rec.objects;
  sc.domain_width = domain_width;
  sc.domain_depth = domain_depth;
  sc.cell_size = cell_size;
  return sc;
}

void DatasetManifest::write(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << kMagicLine << '\t' << version << '\n';
  out << "master_seed\t" << master_seed << '\n';
  out << "config_hash\t" << config_hash << '\n';
  out << "normalization\t" << num(norm.bscan_lo) << '\t' << num(norm.bscan_hi) << '\t'
      << num(norm.perm_lo) << '\t' << num(norm.perm_hi) << '\n';
  out << "image_size\t" << image_rows << '\t' << image_cols << '\n';
  out << "soil\t" << scene::soil_to_string(soil) << '\n';
  out << "geometry\t" << num(domain_width) << '\t' << num(domain_depth) << '\t' << num(cell_size)
      << '\n';
  for (const auto& s : samples) out << manifest_line(s) << '\n';
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::Io, "cannot write " + tmp.string());
    f << out.str();
    if (!f) fail(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

DatasetManifest DatasetManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open manifest " + path.string());
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  const auto corrupt = [&](const std::string& why) {
    fail(ErrorCode::CorruptFile, path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  bool saw_magic = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    try {
      if (f[0] == kMagicLine) {
        if (f.size() != 2) corrupt("bad header");
        m.version = std::stoi(f[1]);
        if (m.version != 1) corrupt("unsupported manifest version");
        saw_magic = true;
      } else if (!saw_magic) {
        corrupt("missing manifest header");
      } else if (f[0] == "master_seed" && f.size() == 2) {
        m.master_seed = std::stoull(f[1]);
      } else if (f[0] == "config_hash" && f.size() == 2) {
        m.config_hash = f[1];
      } else if (f[0] == "normalization" && f.size() == 5) {
        m.norm = {std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])};
      } else if (f[0] == "image_size" && f.size() == 3) {
        m.image_rows = std::stoul(f[1]);
        m.image_cols = std::stoul(f[2]);
      } else if (f[0] == "soil" && f.size() == 2) {
        m.soil = scene::soil_from_string(f[1]);
      } else if (f[0] == "geometry" && f.size() == 4) {
        m.domain_width = std::stod(f[1]);
        m.domain_depth = std::stod(f[2]);
        m.cell_size = std::stod(f[3]);
      } else if (f[0] == "sample" && f.size() == 9) {
        SampleRecord s;
        s.id = f[1];
        if (f[2] == "train") {
          s.split = Split::Train;
        } else if (f[2] == "test") {
          s.split = Split::Test;
        } else {
          corrupt("bad split tag '" + f[2] + "'");
        }
        s.group = f[3];
        s.noisy_path = f[4];
        s.denoised_path = f[5];
        s.perm_path = f[6];
        s.field_seed = std::stoull(f[7]);
        s.objects = scene::objects_from_string(f[8]);
        if (m.find(s.id)) corrupt("duplicate id " + s.id);
        m.samples.push_back(std::move(s));
      } else {
        corrupt("unrecognized record '" + f[0] + "'");
      }
    } catch (const std::logic_error&) {
      corrupt("bad number");
    }
  }
  if (!saw_magic) fail(ErrorCode::CorruptFile, path.string() + ": empty manifest");
  return m;
}

SampleTriplet load_sample(const DatasetManifest& manifest, const std::filesystem::path& root,
                          const std::string& id) {
  const SampleRecord* rec = manifest.find(id);
  if (!rec) fail(ErrorCode::MissingId, "no sample '" + id + "' in manifest");
  auto load = [&](const std::string& rel) {
    const auto path = root / rel;
    const Tensor t = read_gprt(path);
    if (t.channels != 1 || t.rows != manifest.image_rows || t.cols != manifest.image_cols) {
      fail(ErrorCode::CorruptFile, path.string() + ": shape does not match the manifest");
    }
    for (float v : t.data) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        fail(ErrorCode::CorruptFile, path.string() + ": value outside [0, 1]");
      }
    }
    return t.channel(0);
  };
  SampleTriplet s;
  s.noisy = load(rec->noisy_path);
  s.denoised = load(rec->denoised_path);
  s.perm_map = load(rec->perm_path);
  s.meta = *rec;
  return s;
}

}  // namespace gprinv::dataset
