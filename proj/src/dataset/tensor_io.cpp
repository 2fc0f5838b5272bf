#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "gprinv/dataset.hpp"
#include "gprinv/error.hpp"

namespace gprinv::dataset {

namespace {

constexpr std::array<char, 4> kMagic{'G', 'P', 'R', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 20;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

}  // namespace

Image Tensor::channel(std::size_t c) const {
  if (c >= channels) fail(ErrorCode::ShapeMismatch, "tensor channel out of range");
  Image img(rows, cols);
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  for (std::size_t i = 0; i < plane; ++i) img.storage()[i] = data[c * plane + i];
  return img;
}

Tensor Tensor::from_image(const Image& img) {
  Tensor t;
  t.rows = static_cast<std::uint32_t>(img.rows());
  t.cols = static_cast<std::uint32_t>(img.cols());
  t.channels = 1;
  t.data.assign(img.storage().begin(), img.storage().end());
  return t;
}

void write_gprt(const std::filesystem::path& path, const Tensor& t) {
  const std::size_t n = static_cast<std::size_t>(t.rows) * t.cols * t.channels;
  if (t.data.size() != n) fail(ErrorCode::ShapeMismatch, "tensor data size does not match its shape");
  std::string buf(kMagic.begin(), kMagic.end());
  put_u32(buf, kVersion);
  put_u32(buf, t.rows);
  put_u32(buf, t.cols);
  put_u32(buf, t.channels);
  buf.reserve(kHeaderBytes + 4 * n);
  for (float f : t.data) put_u32(buf, std::bit_cast<std::uint32_t>(f));

  // Write-then-rename so an interrupted build never leaves a torn file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Tensor read_gprt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto corrupt = [&](const std::string& why) {
    fail(ErrorCode::CorruptFile, path.string() + ": " + why);
  };
  if (buf.size() < kHeaderBytes) corrupt("truncated header");
  if (std::memcmp(buf.data(), kMagic.data(), 4) != 0) corrupt("bad magic");
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (get_u32(p + 4) != kVersion) corrupt("unsupported version");
  Tensor t;
  t.rows = get_u32(p + 8);
  t.cols = get_u32(p + 12);
  t.channels = get_u32(p + 16);
  const std::uint64_t n = std::uint64_t{t.rows} * t.cols * t.channels;
  if (buf.size() - kHeaderBytes != 4 * n) corrupt("payload size does not match the header shape");
  t.data.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    t.data[i] = std::bit_cast<float>(get_u32(p + kHeaderBytes + 4 * i));
  }
  return t;
}

Image import_bscan(const std::filesystem::path& path, const NormalizationSpec& norm,
                   std::size_t rows, std::size_t cols) {
  const Tensor t = read_gprt(path);
  if (t.channels != 1) fail(ErrorCode::ShapeMismatch, "external B-scan must have one channel");
  const Image raw = t.channel(0);
  return resize_bilinear(normalize(mean_subtract(raw), norm.bscan_lo, norm.bscan_hi), rows, cols);
}

}  // namespace gprinv::dataset
