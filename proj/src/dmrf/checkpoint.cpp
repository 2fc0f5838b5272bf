#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "gprinv/dmrf.hpp"
#include "gprinv/error.hpp"
#include "gprinv/hash.hpp"

namespace gprinv::dmrf {

namespace {

constexpr char kMagic[4] = {'G', 'P', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kMetaPrefix = "ckpt.";

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Reader {
 public:
  Reader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

  [[noreturn]] void corrupt(const std::string& why) const {
    fail(ErrorCode::CorruptFile, path_.string() + ": " + why);
  }
  const char* take(std::size_t n) {
    if (buf_.size() - pos_ < n) corrupt("truncated");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
           std::uint32_t{p[3]} << 24;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | std::uint64_t{u32()} << 32;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ostringstream meta;
  meta << config.text();
  meta << kMetaPrefix << "best_test_loss = " << num(best_test_loss) << '\n';
  meta << kMetaPrefix << "epoch = " << epoch << '\n';
  meta << kMetaPrefix << "adam_step = " << adam_step << '\n';
  meta << kMetaPrefix << "rng_state = " << rng_state << '\n';
  meta << kMetaPrefix << "normalization = " << num(norm.bscan_lo) << ' ' << num(norm.bscan_hi)
       << ' ' << num(norm.perm_lo) << ' ' << num(norm.perm_hi) << '\n';
  meta << kMetaPrefix << "image_size = " << image_rows << ' ' << image_cols << '\n';
  meta << kMetaPrefix << "dataset_hash = " << dataset_hash << '\n';
  meta << kMetaPrefix << "master_seed = " << master_seed << '\n';
  const std::string text = meta.str();

  std::string buf(kMagic, kMagic + 4);
  put_u32(buf, kVersion);
  put_u64(buf, fnv1a64(text));
  put_u32(buf, static_cast<std::uint32_t>(text.size()));
  buf += text;
  put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    const nn::Shape4 s = p.value.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : p.value.storage()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf, path);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) r.corrupt("not a checkpoint (bad magic)");
  if (r.u32() != kVersion) r.corrupt("unsupported checkpoint version");
  const std::uint64_t digest = r.u64();
  const std::string text = r.str(r.u32());
  if (fnv1a64(text) != digest) r.corrupt("metadata hash mismatch");

  Checkpoint ck;
  std::string config_text;
  std::map<std::string, std::string> meta;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind(kMetaPrefix, 0) == 0) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) r.corrupt("bad metadata line");
      meta[line.substr(0, eq)] = line.substr(eq + 3);
    } else {
      config_text += line + '\n';
    }
  }
  auto field = [&](const std::string& key) {
    const auto it = meta.find(kMetaPrefix + key);
    if (it == meta.end()) r.corrupt("metadata lacks " + key);
    return it->second;
  };
  try {
    ck.config = DMRFConfig::parse(config_text);
    ck.best_test_loss = std::stod(field("best_test_loss"));
    ck.epoch = std::stoull(field("epoch"));
    ck.adam_step = std::stoull(field("adam_step"));
    ck.rng_state = field("rng_state");
    std::istringstream ns(field("normalization"));
    ns >> ck.norm.bscan_lo >> ck.norm.bscan_hi >> ck.norm.perm_lo >> ck.norm.perm_hi;
    std::istringstream is(field("image_size"));
    is >> ck.image_rows >> ck.image_cols;
    if (!ns || !is) r.corrupt("bad normalization or image size");
    ck.dataset_hash = field("dataset_hash");
    ck.master_seed = std::stoull(field("master_seed"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptFile) throw;
    r.corrupt(std::string("bad model config: ") + e.what());
  } catch (const std::logic_error&) {
    r.corrupt("bad number in metadata");
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    nn::Shape4 s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    if (ck.params.find(name) != nn::ParamStore<float>::npos) r.corrupt("duplicate tensor " + name);
    const std::size_t idx = ck.params.add(name, s, 0);
    const std::uint64_t n = s.size();
    if (n > buf.size()) r.corrupt("tensor " + name + " larger than the file");
    auto& v = ck.params[idx].value.storage();
    for (std::size_t k = 0; k < n; ++k) v[k] = std::bit_cast<float>(r.u32());
  }
  if (!r.done()) r.corrupt("trailing bytes");

  // The tensor list must be exactly what the config builds.
  const auto expect = build_params<float>(ck.config, 0);
  if (expect.size() != ck.params.size()) r.corrupt("tensor count does not match the model config");
  for (std::size_t i = 0; i < expect.size(); ++i) {
    if (expect[i].name != ck.params[i].name ||
        expect[i].value.shape() != ck.params[i].value.shape()) {
      r.corrupt("tensor " + ck.params[i].name + " does not match the model config");
    }
    ck.params[i].fan_in = expect[i].fan_in;
  }
  return ck;
}

}  // namespace gprinv::dmrf
