#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "gprinv/error.hpp"
#include "gprinv/metrics.hpp"

namespace gprinv::metrics {

namespace {

void check_pair(const Image& y, const Image& y_hat) {
  if (!y.same_shape(y_hat) || y.empty()) {
    fail(ErrorCode::ShapeMismatch, "metric inputs must be nonempty and equal-shaped, got " +
                                       std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                                       " and " + std::to_string(y_hat.rows()) + "x" +
                                       std::to_string(y_hat.cols()));
  }
}

struct Moments {
  double mx = 0, my = 0, vx = 0, vy = 0, cov = 0;
};

double ssim_from(const Moments& m, const MetricConfig& cfg) {
  const double c1 = cfg.c1(), c2 = cfg.c2();
  return ((2.0 * m.mx * m.my + c1) * (2.0 * m.cov + c2)) /
         ((m.mx * m.mx + m.my * m.my + c1) * (m.vx + m.vy + c2));
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

MetricConfig::MetricConfig(double dynamic_range) : r_(dynamic_range) {
  if (!(r_ > 0.0) || !std::isfinite(r_)) {
    fail(ErrorCode::InvalidConfig, "dynamic range must be positive and finite");
  }
}

MetricConfig MetricConfig::bscan(const dataset::NormalizationSpec& n) {
  return MetricConfig(n.bscan_hi - n.bscan_lo);
}

MetricConfig MetricConfig::permittivity(const dataset::NormalizationSpec& n) {
  return MetricConfig(n.perm_hi - n.perm_lo);
}

double ssim(const Image& y, const Image& y_hat, const MetricConfig& cfg) {
  check_pair(y, y_hat);
  const auto a = y.values();
  const auto b = y_hat.values();
  const double n = static_cast<double>(a.size());
  Moments m;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m.mx += a[i];
    m.my += b[i];
  }
  m.mx /= n;
  m.my /= n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dx = a[i] - m.mx, dy = b[i] - m.my;
    m.vx += dx * dx;
    m.vy += dy * dy;
    m.cov += dx * dy;
  }
  m.vx /= n;
  m.vy /= n;
  m.cov /= n;
  return ssim_from(m, cfg);
}

double ssim_windowed(const Image& y, const Image& y_hat, const MetricConfig& cfg) {
  check_pair(y, y_hat);
  constexpr std::size_t kWin = 11;
  constexpr double kSigma = 1.5;
  if (y.rows() < kWin || y.cols() < kWin) {
    fail(ErrorCode::ShapeMismatch, "windowed SSIM needs sides >= 11");
  }
  std::vector<double> w(kWin * kWin);
  double total = 0;
  for (std::size_t r = 0; r < kWin; ++r) {
    for (std::size_t c = 0; c < kWin; ++c) {
      const double dr = static_cast<double>(r) - 5.0, dc = static_cast<double>(c) - 5.0;
      w[r * kWin + c] = std::exp(-(dr * dr + dc * dc) / (2 * kSigma * kSigma));
      total += w[r * kWin + c];
    }
  }
  for (double& v : w) v /= total;

  double sum = 0;
  std::size_t count = 0;
  for (std::size_t r0 = 0; r0 + kWin <= y.rows(); ++r0) {
    for (std::size_t c0 = 0; c0 + kWin <= y.cols(); ++c0) {
      Moments m;
      for (std::size_t r = 0; r < kWin; ++r) {
        for (std::size_t c = 0; c < kWin; ++c) {
          const double k = w[r * kWin + c];
          m.mx += k * y(r0 + r, c0 + c);
          m.my += k * y_hat(r0 + r, c0 + c);
        }
      }
      for (std::size_t r = 0; r < kWin; ++r) {
        for (std::size_t c = 0; c < kWin; ++c) {
          const double k = w[r * kWin + c];
          const double dx = y(r0 + r, c0 + c) - m.mx, dy = y_hat(r0 + r, c0 + c) - m.my;
          m.vx += k * dx * dx;
          m.vy += k * dy * dy;
          m.cov += k * dx * dy;
        }
      }
      sum += ssim_from(m, cfg);
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

double mse(const Image& y, const Image& y_hat) {
  check_pair(y, y_hat);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y.storage()[i] - y_hat.storage()[i];
    s += d * d;
  }
  return s / static_cast<double>(y.size());
}

double mae(const Image& y, const Image& y_hat) {
  check_pair(y, y_hat);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y.storage()[i] - y_hat.storage()[i]);
  return s / static_cast<double>(y.size());
}

double mre(const Image& y, const Image& y_hat) {
  check_pair(y, y_hat);
  double peak = 0;
  for (double v : y.values()) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) fail(ErrorCode::ZeroDynamicRange, "MRE is undefined when max|y| = 0");
  return mae(y, y_hat) / peak * 100.0;
}

SampleMetrics compare(const std::string& id, const std::string& group, int stage, const Image& y,
                      const Image& y_hat, const MetricConfig& cfg, bool windowed) {
  SampleMetrics m;
  m.id = id;
  m.group = group;
  m.stage = stage;
  m.ssim = windowed ? ssim_windowed(y, y_hat, cfg) : ssim(y, y_hat, cfg);
  m.mse = mse(y, y_hat);
  m.mae = mae(y, y_hat);
  double peak = 0;
  for (double v : y.values()) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) m.mre_pct = m.mae / peak * 100.0;
  return m;
}

// ---- report ----------------------------------------------------------------

MetricMeans MetricsReport::means(int stage, const std::string& group) const {
  MetricMeans out;
  double mre_sum = 0;
  for (const auto& r : rows) {
    if (r.stage != stage || (!group.empty() && r.group != group)) continue;
    ++out.count;
    out.ssim += r.ssim;
    out.mse += r.mse;
    out.mae += r.mae;
    if (r.mre_pct) {
      ++out.mre_count;
      mre_sum += *r.mre_pct;
    }
  }
  if (out.count > 0) {
    const double n = static_cast<double>(out.count);
    out.ssim /= n;
    out.mse /= n;
    out.mae /= n;
  }
  if (out.mre_count > 0) out.mre_pct = mre_sum / static_cast<double>(out.mre_count);
  return out;
}

std::vector<int> MetricsReport::stages() const {
  std::set<int> s;
  for (const auto& r : rows) s.insert(r.stage);
  return {s.begin(), s.end()};
}

std::vector<std::string> MetricsReport::groups() const {
  std::set<std::string> s;
  for (const auto& r : rows) s.insert(r.group);
  return {s.begin(), s.end()};
}

std::string MetricsReport::summary() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %-16s %6s %10s %10s %10s %10s\n", "stage", "group", "n",
                "ssim", "mse", "mae", "mre_pct");
  out << line;
  auto row = [&](int stage, const std::string& group) {
    const MetricMeans m = means(stage, group);
    const std::string mre = m.mre_pct ? fixed(*m.mre_pct, 4) : "-";
    std::snprintf(line, sizeof line, "%-6s %-16s %6zu %10s %10s %10s %10s\n",
                  ("#" + std::to_string(stage)).c_str(), group.empty() ? "all" : group.c_str(),
                  m.count, fixed(m.ssim, 4).c_str(), fixed(m.mse, 4).c_str(),
                  fixed(m.mae, 4).c_str(), mre.c_str());
    out << line;
  };
  for (int st : stages()) {
    row(st, "");
    for (const auto& g : groups()) {
      if (means(st, g).count > 0) row(st, g);
    }
  }
  return out.str();
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.id << ',' << r.group << ',' << num(r.ssim) << ',' << num(r.mse) << ',' << num(r.mae)
        << ',' << (r.mre_pct ? num(*r.mre_pct) : "") << ',' << r.stage << '\n';
  }
  if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

MetricsReport MetricsReport::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != split_csv(kMetricsCsvHeader)) {
    fail(ErrorCode::CorruptFile, path.string() + ": bad metrics CSV header");
  }
  MetricsReport rep;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 7) {
      fail(ErrorCode::CorruptFile, path.string() + ":" + std::to_string(lineno) + ": expected 7 fields");
    }
    try {
      SampleMetrics m;
      m.id = f[0];
      m.group = f[1];
      m.ssim = std::stod(f[2]);
      m.mse = std::stod(f[3]);
      m.mae = std::stod(f[4]);
      if (!f[5].empty()) m.mre_pct = std::stod(f[5]);
      m.stage = std::stoi(f[6]);
      rep.rows.push_back(std::move(m));
    } catch (const std::logic_error&) {
      fail(ErrorCode::CorruptFile, path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return rep;
}

}  // namespace gprinv::metrics
