#pragma once

// Data ingestion: multi-member discharge series in CSV, weekly block maxima
// over climatological windows, member subsampling, synthetic Gaussian-copula
// data sets with known margins, and the key = value run configuration.
//
// Series CSV (UTF-8, comma separated, header required):
//   timestamp,member,<site 1>,...,<site d>
//   1980-01-01T00:00:00,m01,12.5,7.25
// timestamp is ISO-8601 (YYYY-MM-DD, optionally THH:MM[:SS] and a trailing Z,
// always UTC); NA marks a missing value. Timestamps must be strictly
// increasing within each member.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "spar/error.hpp"
#include "spar/gpd.hpp"
#include "spar/observation.hpp"
#include "spar/rng.hpp"
#include "spar/stats.hpp"
#include "spar/types.hpp"

namespace spar {

using TimePoint = std::chrono::sys_seconds;

// ---------------------------------------------------------------------------
// Timestamps

/// Parses YYYY-MM-DD[THH:MM[:SS]][Z]; nullopt on any deviation.
inline std::optional<TimePoint> parse_timestamp(std::string_view s) {
  if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    const auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return r.ec == std::errc{} && r.ptr == s.data() + pos + len;
  };
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-' || !num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d))
    return std::nullopt;
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || s[13] != ':' || !num(11, 2, h) || !num(14, 2, mi))
      return std::nullopt;
    if (s.size() == 19) {
      if (s[16] != ':' || !num(17, 2, se)) return std::nullopt;
    } else if (s.size() != 16) {
      return std::nullopt;
    }
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || se > 59) return std::nullopt;
  return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} + std::chrono::seconds{se};
}

inline std::string format_timestamp(TimePoint t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::year_month_day ymd{day};
  const std::chrono::hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", int(ymd.year()), unsigned(ymd.month()),
                unsigned(ymd.day()), int(hms.hours().count()), int(hms.minutes().count()),
                int(hms.seconds().count()));
  return buf;
}

inline TimePoint year_start(int year) {
  return std::chrono::sys_days{std::chrono::year{year} / std::chrono::January / 1};
}

// ---------------------------------------------------------------------------
// Series

struct SeriesRecord {
  TimePoint time;
  std::string member;
  std::vector<std::optional<double>> values;  // nullopt: missing (NA)
};

struct Series {
  std::vector<std::string> site_names;
  std::vector<SeriesRecord> records;  // file order

  /// Member ids in order of first appearance.
  [[nodiscard]] std::vector<std::string> members() const {
    std::vector<std::string> out;
    std::unordered_map<std::string, bool> seen;
    for (const auto& r : records)
      if (!seen[r.member]) {
        seen[r.member] = true;
        out.push_back(r.member);
      }
    return out;
  }
  [[nodiscard]] std::size_t missing_count() const {
    std::size_t c = 0;
    for (const auto& r : records)
      for (const auto& v : r.values) c += v ? 0 : 1;
    return c;
  }
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    f.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return f;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] inline void parse_fail(const std::string& source, std::size_t line, const std::string& msg) {
  std::ostringstream os;
  os << source << ":" << line << ": " << msg;
  throw ParseError(os.str());
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

inline Series parse_series_csv(std::istream& in, const std::string& source = "<input>") {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) detail::parse_fail(source, 1, "missing header");
  ++lineno;
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = detail::split_csv(detail::trim(line));
  if (header.size() < 3 || detail::trim(header[0]) != "timestamp" || detail::trim(header[1]) != "member")
    detail::parse_fail(source, lineno, "header must be 'timestamp,member,<site>,...' with at least one site");
  Series s;
  for (std::size_t k = 2; k < header.size(); ++k) {
    const auto name = detail::trim(header[k]);
    if (name.empty()) detail::parse_fail(source, lineno, "empty site name");
    s.site_names.emplace_back(name);
  }
  std::unordered_map<std::string, TimePoint> last;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto f = detail::split_csv(t);
    if (f.size() != header.size()) {
      std::ostringstream os;
      os << "expected " << header.size() << " fields, found " << f.size();
      detail::parse_fail(source, lineno, os.str());
    }
    SeriesRecord r;
    const auto ts = parse_timestamp(detail::trim(f[0]));
    if (!ts) detail::parse_fail(source, lineno, "invalid timestamp '" + std::string(f[0]) + "'");
    r.time = *ts;
    r.member = std::string(detail::trim(f[1]));
    if (r.member.empty()) detail::parse_fail(source, lineno, "empty member id");
    for (std::size_t k = 2; k < f.size(); ++k) {
      const auto v = detail::trim(f[k]);
      if (v == "NA") {
        r.values.emplace_back(std::nullopt);
        continue;
      }
      const auto x = detail::parse_double(v);
      if (!x || !std::isfinite(*x)) detail::parse_fail(source, lineno, "invalid number '" + std::string(v) + "'");
      r.values.emplace_back(*x);
    }
    const auto it = last.find(r.member);
    if (it != last.end() && !(r.time > it->second))
      detail::parse_fail(source, lineno, "timestamps of member '" + r.member + "' are not strictly increasing");
    last[r.member] = r.time;
    s.records.push_back(std::move(r));
  }
  return s;
}

inline Series read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open series file '" + path + "'");
  return parse_series_csv(in, path);
}

inline void write_series_csv(std::ostream& os, const Series& s) {
  os << "timestamp,member";
  for (const auto& n : s.site_names) os << ',' << n;
  os << '\n' << std::setprecision(17);
  for (const auto& r : s.records) {
    os << format_timestamp(r.time) << ',' << r.member;
    for (const auto& v : r.values) {
      os << ',';
      if (v) {
        os << *v;
      } else {
        os << "NA";
      }
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Windows and block maxima

struct TimeWindow {
  std::string label;
  TimePoint start;  // inclusive
  TimePoint end;    // exclusive

  /// Whole calendar years start_year..end_year inclusive.
  static TimeWindow years(int start_year, int end_year) {
    if (end_year < start_year) throw DomainError("TimeWindow: end year before start year");
    return {std::to_string(start_year) + "-" + std::to_string(end_year), year_start(start_year),
            year_start(end_year + 1)};
  }
  [[nodiscard]] std::int64_t days() const {
    return std::chrono::floor<std::chrono::days>(end - start).count();
  }
};

struct WindowSpec {
  std::vector<TimeWindow> windows;

  void validate() const {
    if (windows.empty()) throw DomainError("WindowSpec: no windows");
    for (std::size_t k = 0; k < windows.size(); ++k) {
      if (!(windows[k].end > windows[k].start)) throw DomainError("WindowSpec: empty window " + windows[k].label);
      if (k > 0 && windows[k].start < windows[k - 1].end)
        throw DomainError("WindowSpec: windows must be ordered and non-overlapping");
    }
  }
  [[nodiscard]] const TimeWindow& find(const std::string& label) const {
    for (const auto& w : windows)
      if (w.label == label) return w;
    throw DomainError("WindowSpec: unknown window '" + label + "'");
  }
};

/// 1980-2009, 2010-2039, 2040-2069, 2070-2099.
inline WindowSpec default_windows() {
  return {{TimeWindow::years(1980, 2009), TimeWindow::years(2010, 2039), TimeWindow::years(2040, 2069),
           TimeWindow::years(2070, 2099)}};
}

struct BlockLog {
  std::size_t kept = 0;
  std::size_t dropped = 0;                 // blocks under the coverage rule
  std::vector<std::string> dropped_blocks;  // "member@block_start"
};

inline constexpr double kMinBlockCoverage = 0.8;

/// Consecutive 7-day blocks anchored at the window start; per-site maxima;
/// members concatenated row-wise in order of first appearance; the trailing
/// partial block is dropped. A block is kept when every site has present
/// values for at least 80% of the member's nominal time steps in it.
inline ObservationMatrix weekly_maxima(const Series& s, const TimeWindow& window, BlockLog* log = nullptr) {
  using namespace std::chrono;
  const std::int64_t n_blocks = window.days() / 7;
  if (n_blocks < 1) throw DataError("weekly_maxima: window '" + window.label + "' is shorter than one block");
  const std::size_t d = s.site_names.size();
  const seconds block_len = days{7};

  std::map<std::string, std::vector<const SeriesRecord*>> by_member;
  for (const auto& r : s.records)
    if (r.time >= window.start && r.time < window.start + block_len * n_blocks) by_member[r.member].push_back(&r);

  std::vector<double> rows;
  std::vector<std::string> members;
  BlockLog local;
  for (const std::string& m : s.members()) {
    const auto it = by_member.find(m);
    if (it == by_member.end()) continue;
    auto& recs = it->second;
    std::stable_sort(recs.begin(), recs.end(), [](const SeriesRecord* a, const SeriesRecord* b) { return a->time < b->time; });
    // Nominal time step: median spacing of the member's records in the window.
    seconds step = days{1};
    if (recs.size() >= 2) {
      std::vector<std::int64_t> gaps;
      for (std::size_t k = 1; k < recs.size(); ++k) gaps.push_back((recs[k]->time - recs[k - 1]->time).count());
      std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2), gaps.end());
      step = seconds{std::max<std::int64_t>(gaps[gaps.size() / 2], 1)};
    }
    const double expected = static_cast<double>(block_len.count()) / static_cast<double>(step.count());
    std::size_t k = 0;
    for (std::int64_t b = 0; b < n_blocks; ++b) {
      const TimePoint lo = window.start + block_len * b, hi = lo + block_len;
      std::vector<double> mx(d, -std::numeric_limits<double>::infinity());
      std::vector<std::size_t> present(d, 0);
      for (; k < recs.size() && recs[k]->time < hi; ++k) {
        if (recs[k]->time < lo) continue;
        for (std::size_t j = 0; j < d; ++j)
          if (recs[k]->values[j]) {
            mx[j] = std::max(mx[j], *recs[k]->values[j]);
            ++present[j];
          }
      }
      bool ok = true;
      for (std::size_t j = 0; j < d; ++j)
        if (static_cast<double>(present[j]) < kMinBlockCoverage * expected - 1e-9) ok = false;
      if (!ok) {
        ++local.dropped;
        local.dropped_blocks.push_back(m + "@" + format_timestamp(lo));
        continue;
      }
      ++local.kept;
      rows.insert(rows.end(), mx.begin(), mx.end());
      members.push_back(m);
    }
  }
  if (log) *log = local;
  if (members.empty()) throw DataError("weekly_maxima: no complete blocks in window '" + window.label + "'");
  Matrix v(static_cast<Eigen::Index>(members.size()), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = rows[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
  return ObservationMatrix(std::move(v), s.site_names, window.label, std::move(members));
}

/// Rows of the first k member ids (order of first appearance).
inline ObservationMatrix subsample_members(const ObservationMatrix& data, std::size_t k) {
  const auto& ids = data.member_ids();
  if (ids.empty()) throw DomainError("subsample_members: data carries no member ids");
  std::vector<std::string> order;
  for (const auto& id : ids)
    if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);
  if (k < 1 || k > order.size()) {
    std::ostringstream os;
    os << "subsample_members: k = " << k << " outside 1.." << order.size();
    throw DomainError(os.str());
  }
  order.resize(k);
  std::vector<Eigen::Index> idx;
  for (std::size_t t = 0; t < ids.size(); ++t)
    if (std::find(order.begin(), order.end(), ids[t]) != order.end()) idx.push_back(static_cast<Eigen::Index>(t));
  return data.select_rows(idx);
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian-copula data

struct LognormalMargin {
  double mu = 0.0;
  double sigma = 1.0;
};

/// Lognormal body below its (1 - tail_prob) quantile t, GPD excesses above t.
struct GpdHybridMargin {
  double mu = 0.0;
  double sigma = 1.0;
  double tail_prob = 0.1;
  GpdParams tail{1.0, 0.1};
};

using MarginSpec = std::variant<LognormalMargin, GpdHybridMargin>;

inline double margin_quantile(const MarginSpec& m, double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("margin_quantile: p must lie in (0,1)");
  if (const auto* ln = std::get_if<LognormalMargin>(&m)) {
    if (!(ln->sigma > 0.0)) throw DomainError("lognormal margin: sigma must be positive");
    return std::exp(ln->mu + ln->sigma * stats::normal_quantile(p));
  }
  const auto& h = std::get<GpdHybridMargin>(m);
  if (!(h.sigma > 0.0) || !(h.tail_prob > 0.0 && h.tail_prob < 1.0))
    throw DomainError("hybrid margin: need sigma > 0 and tail_prob in (0,1)");
  const double t = std::exp(h.mu + h.sigma * stats::normal_quantile(1.0 - h.tail_prob));
  if (p <= 1.0 - h.tail_prob) return std::exp(h.mu + h.sigma * stats::normal_quantile(p));
  return t + gpd_quantile((p - (1.0 - h.tail_prob)) / h.tail_prob, h.tail);
}

inline double margin_cdf(const MarginSpec& m, double x) {
  if (!(x > 0.0)) return 0.0;
  if (const auto* ln = std::get_if<LognormalMargin>(&m)) return stats::normal_cdf((std::log(x) - ln->mu) / ln->sigma);
  const auto& h = std::get<GpdHybridMargin>(m);
  const double t = std::exp(h.mu + h.sigma * stats::normal_quantile(1.0 - h.tail_prob));
  if (x <= t) return stats::normal_cdf((std::log(x) - h.mu) / h.sigma);
  return 1.0 - h.tail_prob + h.tail_prob * gpd_cdf(x - t, h.tail);
}

/// Lower-triangular L with L L^T = corr, allowing a singular positive
/// semi-definite matrix (columns with zero pivot are left empty).
inline Matrix psd_cholesky(const Matrix& corr, double tol = 1e-10) {
  const Eigen::Index d = corr.rows();
  if (corr.cols() != d || d < 1) throw DomainError("correlation matrix must be square and nonempty");
  if (!corr.isApprox(corr.transpose(), 1e-12)) throw DomainError("correlation matrix must be symmetric");
  Matrix l = Matrix::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double diag = corr(j, j) - l.row(j).head(j).squaredNorm();
    if (diag < -tol) throw DomainError("correlation matrix is not positive semi-definite");
    const double pivot = diag > tol ? std::sqrt(diag) : 0.0;
    l(j, j) = pivot;
    for (Eigen::Index i = j + 1; i < d; ++i) {
      const double v = corr(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
      if (pivot == 0.0) {
        if (std::abs(v) > 1e-8) throw DomainError("correlation matrix is not positive semi-definite");
      } else {
        l(i, j) = v / pivot;
      }
    }
  }
  return l;
}

/// n rows of a Gaussian copula with the given correlation pushed through the margins.
inline ObservationMatrix synth_gaussian_copula(std::size_t n, const Matrix& corr, const std::vector<MarginSpec>& margins,
                                               std::uint64_t seed) {
  const Eigen::Index d = corr.rows();
  if (n == 0) throw DomainError("synth_gaussian_copula: n must be positive");
  if (static_cast<Eigen::Index>(margins.size()) != d) throw ShapeError("synth_gaussian_copula: one margin per column");
  for (Eigen::Index i = 0; i < d; ++i)
    if (std::abs(corr(i, i) - 1.0) > 1e-12) throw DomainError("correlation matrix must have unit diagonal");
  const Matrix l = psd_cholesky(corr);
  Rng rng(seed);
  Matrix v(static_cast<Eigen::Index>(n), d);
  Vector z(d);
  for (Eigen::Index t = 0; t < v.rows(); ++t) {
    for (Eigen::Index i = 0; i < d; ++i) z[i] = rng.normal();
    const Vector g = l * z;
    for (Eigen::Index i = 0; i < d; ++i) {
      // Keep the uniform strictly inside (0,1) for the quantile functions.
      const double u = std::clamp(stats::normal_cdf(g[i]), 1e-300, 1.0 - 1e-16);
      v(t, i) = margin_quantile(margins[static_cast<std::size_t>(i)], u);
    }
  }
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < d; ++i) names.push_back("site" + std::to_string(i + 1));
  return ObservationMatrix(std::move(v), std::move(names), "synthetic");
}

/// Equicorrelated d x d matrix.
inline Matrix equicorrelation(Eigen::Index d, double rho) {
  Matrix c = Matrix::Constant(d, d, rho);
  c.diagonal().setOnes();
  return c;
}

// ---------------------------------------------------------------------------
// key = value configuration

/// Text configuration: one `key = value` per line, '#' starts a comment,
/// keys are unique. Values are typed on access.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>") {
    KeyValueConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      const auto t = detail::trim(std::string_view(line).substr(0, hash));
      if (t.empty()) continue;
      const std::size_t eq = t.find('=');
      if (eq == std::string_view::npos) detail::parse_fail(source, lineno, "expected 'key = value'");
      const std::string key(detail::trim(t.substr(0, eq)));
      const std::string val(detail::trim(t.substr(eq + 1)));
      if (key.empty()) detail::parse_fail(source, lineno, "empty key");
      if (c.values_.count(key)) detail::parse_fail(source, lineno, "duplicate key '" + key + "'");
      c.values_[key] = val;
      c.lines_[key] = lineno;
    }
    c.source_ = source;
    return c;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  [[nodiscard]] double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto v = detail::parse_double(it->second);
    if (!v) fail(key, "expected a number");
    return *v;
  }

  [[nodiscard]] std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::int64_t v = 0;
    const auto& s = it->second;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) fail(key, "expected an integer");
    return v;
  }

  [[nodiscard]] std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const auto f : detail::split_csv(it->second)) {
      const auto v = detail::parse_double(detail::trim(f));
      if (!v) fail(key, "expected a comma-separated list of numbers");
      out.push_back(*v);
    }
    return out;
  }

  [[nodiscard]] std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    for (const auto f : detail::split_csv(it->second)) out.emplace_back(detail::trim(f));
    return out;
  }

  [[nodiscard]] std::vector<std::string> keys() const {
    std::vector<std::string> k;
    for (const auto& [key, v] : values_) k.push_back(key);
    return k;
  }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const auto it = lines_.find(key);
    detail::parse_fail(source_, it == lines_.end() ? 0 : it->second, key + ": " + msg);
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
  std::string source_ = "<config>";
};

/// Window list from "1980-2009, 2010-2039" style text.
inline WindowSpec parse_windows(const std::string& text) {
  WindowSpec spec;
  for (const auto f : detail::split_csv(text)) {
    const auto t = detail::trim(f);
    int a = 0, b = 0;
    const std::size_t dash = t.find('-');
    if (dash == std::string_view::npos) throw ParseError("windows: expected START-END, got '" + std::string(t) + "'");
    const auto s1 = t.substr(0, dash), s2 = t.substr(dash + 1);
    if (std::from_chars(s1.data(), s1.data() + s1.size(), a).ec != std::errc{} ||
        std::from_chars(s2.data(), s2.data() + s2.size(), b).ec != std::errc{})
      throw ParseError("windows: expected START-END, got '" + std::string(t) + "'");
    spec.windows.push_back(TimeWindow::years(a, b));
  }
  spec.validate();
  return spec;
}

}  // namespace spar
