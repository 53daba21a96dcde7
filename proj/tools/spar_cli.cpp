// spar: batch front end for fitting, diagnosing and querying SPAR models.
//
//   spar synth     --config run.cfg --out data/
//   spar fit       --config run.cfg --out runs/
//   spar diagnose  --config run.cfg --out runs/ [--model runs/model_1980-2009.json]
//   spar probs     --config run.cfg --out runs/
//   spar bootstrap --config run.cfg --out runs/ --bootstrap 50
//
// Every command computes all of its results before writing anything, and
// every file goes through a temporary sibling plus rename. Failures print a
// one-line JSON error on stderr and exit with a code tied to the error kind.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spar/spar.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spar;

namespace {

constexpr int kSchemaVersion = 1;

// Stream tags for the randomness each command draws from the master seed.
namespace stream {
constexpr std::uint64_t diagnose = 0x1000;
constexpr std::uint64_t probs = 0x2000;
constexpr std::uint64_t bootstrap_stats = 0x3000;
constexpr std::uint64_t synth = 0x4000;
}  // namespace stream

// ---------------------------------------------------------------------------
// Exit codes

int exit_code_for(const std::string& kind) {
  static const std::map<std::string, int> codes{
      {"usage", 2},
      {"parse", 3},
      {"file", 4},
      {"format", 5},
      {"data", 6},
      {"nonpositive_data", 6},
      {"insufficient_data", 6},
      {"degenerate_margin", 6},
      {"degenerate_point", 6},
      {"shape", 7},
      {"domain", 8},
      {"calibration", 9},
      {"initialization", 9},
      {"resolution", 10},
      {"infeasible_region", 11},
      {"bootstrap", 12},
      {"state", 13},
  };
  const auto it = codes.find(kind);
  return it == codes.end() ? 70 : it->second;
}

int report_error(const std::string& command, const std::string& kind, const std::string& message) {
  const int code = exit_code_for(kind);
  json e{{"error", {{"command", command}, {"kind", kind}, {"message", message}, {"exit_code", code}}}};
  std::cerr << e.dump() << '\n';
  return code;
}

// ---------------------------------------------------------------------------
// Configuration

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string window;
  std::optional<std::size_t> members;
  std::optional<std::size_t> bootstrap;
  std::optional<std::size_t> m_tail;
  std::optional<unsigned> workers;
  std::string data;
  std::string model;
};

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "data", "out", "seed", "windows", "window", "members", "workers", "alpha", "reparam", "threshold_hidden",
      "gpd_hidden", "max_epochs", "batch_size", "initial_lr", "min_lr", "patience", "validation_fraction",
      "min_points", "min_exceedances", "bootstrap", "m_tail", "return_period", "sum_upper", "sum_lower",
      "rl_periods", "chi_grid", "ci_level", "synth_n", "synth_d", "synth_rho", "synth_margin", "synth_mu",
      "synth_sigma", "synth_tail_prob", "synth_tail_sigma", "synth_tail_xi", "synth_members", "synth_start",
      "synth_output"};
  return keys;
}

struct Cell {
  std::string label;  // file-name stem
  TimeWindow window;
  std::size_t members = 0;  // 0: all
};

struct RunConfig {
  std::string data;
  fs::path out = ".";
  std::uint64_t seed = 0;
  WindowSpec windows = default_windows();
  std::string window;              // empty: every window
  std::vector<std::size_t> members;  // empty: all members only
  unsigned workers = 1;
  SparConfig fit;
  std::size_t bootstrap = 0;
  std::size_t m_tail = kDefaultTailSamples;
  double return_period = 10.0;
  double sum_upper = 1000.0;
  double sum_lower = 30.0;
  std::vector<double> rl_periods{1, 2, 5, 10, 20, 50, 100};
  std::vector<double> chi_grid = default_u_grid();
  double ci_level = 0.95;

  std::size_t synth_n = 1565;
  Eigen::Index synth_d = 2;
  double synth_rho = 0.6;
  std::string synth_margin = "lognormal";
  double synth_mu = 0.0, synth_sigma = 1.0, synth_tail_prob = 0.1, synth_tail_sigma = 1.0, synth_tail_xi = 0.1;
  std::size_t synth_members = 1;
  std::string synth_start = "1980-01-01";
  std::string synth_output = "synthetic.csv";

  [[nodiscard]] std::vector<Cell> cells() const {
    std::vector<const TimeWindow*> ws;
    for (const auto& w : windows.windows)
      if (window.empty() || w.label == window) ws.push_back(&w);
    if (ws.empty()) throw DomainError("unknown window '" + window + "'");
    std::vector<Cell> out;
    for (const auto* w : ws) {
      if (members.empty()) {
        out.push_back({w->label, *w, 0});
      } else {
        for (const std::size_t k : members) out.push_back({w->label + "_k" + std::to_string(k), *w, k});
      }
    }
    return out;
  }
};

std::size_t as_size(std::int64_t v, const std::string& key) {
  if (v < 0) throw DomainError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

RunConfig load_config(const Flags& f) {
  KeyValueConfig kv;
  if (!f.config.empty()) kv = KeyValueConfig::load(f.config);
  for (const auto& k : kv.keys())
    if (!known_keys().count(k)) throw ParseError((f.config.empty() ? "<config>" : f.config) + ": unknown key '" + k + "'");

  RunConfig c;
  c.data = kv.get_string("data", "");
  c.out = kv.get_string("out", ".");
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  if (kv.has("windows")) c.windows = parse_windows(kv.get_string("windows", ""));
  c.window = kv.get_string("window", "");
  for (const double k : kv.get_doubles("members", {})) {
    if (!(k >= 1.0) || k != std::floor(k)) throw DomainError("members: expected positive integers");
    c.members.push_back(static_cast<std::size_t>(k));
  }
  c.workers = static_cast<unsigned>(as_size(kv.get_int("workers", 1), "workers"));

  SparConfig& fit = c.fit;
  fit.alpha = kv.get_double("alpha", fit.alpha);
  fit.reparam = reparam_from_string(kv.get_string("reparam", std::string(to_string(fit.reparam))));
  auto hidden = [&](const std::string& key, std::vector<Eigen::Index>& dst) {
    if (!kv.has(key)) return;
    dst.clear();
    for (const double h : kv.get_doubles(key, {})) {
      if (!(h >= 1.0) || h != std::floor(h)) throw DomainError(key + ": layer widths must be positive integers");
      dst.push_back(static_cast<Eigen::Index>(h));
    }
  };
  hidden("threshold_hidden", fit.threshold_hidden);
  hidden("gpd_hidden", fit.gpd_hidden);
  for (TrainSchedule* s : {&fit.threshold_schedule, &fit.gpd_schedule}) {
    s->max_epochs = as_size(kv.get_int("max_epochs", static_cast<std::int64_t>(s->max_epochs)), "max_epochs");
    s->initial_lr = kv.get_double("initial_lr", s->initial_lr);
    s->min_lr = kv.get_double("min_lr", s->min_lr);
    s->patience = as_size(kv.get_int("patience", static_cast<std::int64_t>(s->patience)), "patience");
    s->validation_fraction = kv.get_double("validation_fraction", s->validation_fraction);
  }
  if (kv.has("batch_size")) fit.threshold_schedule.batch_size = as_size(kv.get_int("batch_size", 0), "batch_size");
  fit.min_points = as_size(kv.get_int("min_points", static_cast<std::int64_t>(fit.min_points)), "min_points");
  fit.min_exceedances =
      as_size(kv.get_int("min_exceedances", static_cast<std::int64_t>(fit.min_exceedances)), "min_exceedances");

  c.bootstrap = as_size(kv.get_int("bootstrap", 0), "bootstrap");
  c.m_tail = as_size(kv.get_int("m_tail", static_cast<std::int64_t>(c.m_tail)), "m_tail");
  c.return_period = kv.get_double("return_period", c.return_period);
  c.sum_upper = kv.get_double("sum_upper", c.sum_upper);
  c.sum_lower = kv.get_double("sum_lower", c.sum_lower);
  c.rl_periods = kv.get_doubles("rl_periods", c.rl_periods);
  c.chi_grid = kv.get_doubles("chi_grid", c.chi_grid);
  c.ci_level = kv.get_double("ci_level", c.ci_level);

  c.synth_n = as_size(kv.get_int("synth_n", static_cast<std::int64_t>(c.synth_n)), "synth_n");
  c.synth_d = static_cast<Eigen::Index>(as_size(kv.get_int("synth_d", c.synth_d), "synth_d"));
  c.synth_rho = kv.get_double("synth_rho", c.synth_rho);
  c.synth_margin = kv.get_string("synth_margin", c.synth_margin);
  c.synth_mu = kv.get_double("synth_mu", c.synth_mu);
  c.synth_sigma = kv.get_double("synth_sigma", c.synth_sigma);
  c.synth_tail_prob = kv.get_double("synth_tail_prob", c.synth_tail_prob);
  c.synth_tail_sigma = kv.get_double("synth_tail_sigma", c.synth_tail_sigma);
  c.synth_tail_xi = kv.get_double("synth_tail_xi", c.synth_tail_xi);
  c.synth_members = as_size(kv.get_int("synth_members", 1), "synth_members");
  c.synth_start = kv.get_string("synth_start", c.synth_start);
  c.synth_output = kv.get_string("synth_output", c.synth_output);

  // Flags override the file.
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out = f.out;
  if (!f.window.empty()) c.window = f.window;
  if (f.members) c.members = {*f.members};
  if (f.bootstrap) c.bootstrap = *f.bootstrap;
  if (f.m_tail) c.m_tail = *f.m_tail;
  if (f.workers) c.workers = *f.workers;
  if (!f.data.empty()) c.data = f.data;

  c.fit.seed = c.seed;
  c.fit.validate();
  if (c.m_tail == 0) throw DomainError("m_tail must be positive");
  if (!(c.return_period > 0.0)) throw DomainError("return_period must be positive");
  if (!(c.ci_level > 0.0 && c.ci_level < 1.0)) throw DomainError("ci_level must lie in (0,1)");
  if (c.rl_periods.empty() || !std::is_sorted(c.rl_periods.begin(), c.rl_periods.end()))
    throw DomainError("rl_periods must be a non-empty increasing list");
  if (c.members.size() > 1 && c.members.size() != std::set<std::size_t>(c.members.begin(), c.members.end()).size())
    throw DomainError("members: duplicate subsample sizes");
  return c;
}

// ---------------------------------------------------------------------------
// Output helpers

std::string meta_line(const std::string& schema, const RunConfig& c, const std::string& cell) {
  std::ostringstream os;
  os << "# schema=" << schema << "/" << kSchemaVersion << " seed=" << c.seed;
  if (!cell.empty()) os << " cell=" << cell;
  os << '\n';
  return os.str();
}

/// Files of one command, written together once everything has been computed.
class OutputSet {
 public:
  void add(fs::path p, std::string content) { files_.emplace_back(std::move(p), std::move(content)); }
  void commit() const {
    for (const auto& [p, content] : files_) atomic_write(p, content);
  }
  [[nodiscard]] std::size_t size() const { return files_.size(); }

 private:
  std::vector<std::pair<fs::path, std::string>> files_;
};

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json report_json(const TailProbabilityReport& r) {
  return {{"probability", r.probability},
          {"return_period_years", number_or_null(r.return_period_years)},
          {"standard_error", r.standard_error},
          {"tail_hits", r.tail_hits},
          {"body_fraction", r.body_fraction},
          {"sub_resolution", r.sub_resolution}};
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

// ---------------------------------------------------------------------------
// Data

struct CellData {
  ObservationMatrix obs;
  BlockLog log;
};

CellData load_cell_data(const Series& series, const Cell& cell) {
  CellData d;
  d.obs = weekly_maxima(series, cell.window, &d.log);
  if (cell.members > 0) d.obs = subsample_members(d.obs, cell.members);
  return d;
}

Series require_series(const RunConfig& c) {
  if (c.data.empty()) throw DomainError("no input data: set 'data' in the config or pass --data");
  return read_series_csv(c.data);
}

fs::path model_path(const RunConfig& c, const Cell& cell) { return c.out / ("model_" + cell.label + ".json"); }

SparModel load_cell_model(const RunConfig& c, const Cell& cell, const std::string& override_path) {
  return load_model(override_path.empty() ? model_path(c, cell) : fs::path(override_path));
}

void check_dimension(const SparModel& m, const ObservationMatrix& obs) {
  if (m.dim() != obs.dim()) {
    std::ostringstream os;
    os << "model dimension " << m.dim() << " does not match data dimension " << obs.dim();
    throw ShapeError(os.str());
  }
}

SimulationOptions sim_options(const RunConfig& c) {
  SimulationOptions s;
  s.workers = c.workers;
  return s;
}

// ---------------------------------------------------------------------------
// Probability quantities shared by probs and bootstrap

struct ProbQuantities {
  Vector upper_levels, lower_levels;
  TailProbabilityReport sum_upper, sum_lower, joint_upper, joint_lower;
};

ProbQuantities compute_probs(const SparModel& m, const RunConfig& c, Rng& rng) {
  const SimulationOptions sim = sim_options(c);
  ProbQuantities q;
  const CombinedSample cs = combined_sample(m, c.m_tail, rng, sim);
  q.upper_levels = return_levels_from_sample(cs, {c.return_period}, Side::upper).row(0).transpose();
  q.lower_levels = return_levels_from_sample(cs, {c.return_period}, Side::lower).row(0).transpose();
  const TailSample ts = make_tail_sample(m, c.m_tail, rng, sim);
  q.sum_upper = estimate_on_sample(m, RegionPredicate::sum_above(c.sum_upper), ts);
  q.sum_lower = estimate_on_sample(m, RegionPredicate::sum_below(c.sum_lower), ts);
  q.joint_upper = estimate_on_sample(m, RegionPredicate::joint_above(q.upper_levels), ts);
  q.joint_lower = estimate_on_sample(m, RegionPredicate::joint_below(q.lower_levels), ts);
  return q;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const RunConfig& c) {
  const Eigen::Index d = c.synth_d;
  if (d < 1) throw DomainError("synth_d must be at least 1");
  if (c.synth_n == 0 || c.synth_members == 0) throw DomainError("synth_n and synth_members must be positive");
  MarginSpec margin;
  if (c.synth_margin == "lognormal") {
    margin = LognormalMargin{c.synth_mu, c.synth_sigma};
  } else if (c.synth_margin == "hybrid") {
    margin = GpdHybridMargin{c.synth_mu, c.synth_sigma, c.synth_tail_prob, {c.synth_tail_sigma, c.synth_tail_xi}};
  } else {
    throw DomainError("synth_margin must be 'lognormal' or 'hybrid'");
  }
  const auto start = parse_timestamp(c.synth_start);
  if (!start) throw ParseError("synth_start: invalid timestamp '" + c.synth_start + "'");
  const std::vector<MarginSpec> margins(static_cast<std::size_t>(d), margin);
  const ObservationMatrix x = synth_gaussian_copula(c.synth_n * c.synth_members, equicorrelation(d, c.synth_rho), margins,
                                                    derive_seed(c.seed, stream::synth));
  // One weekly record per block, so weekly maxima reproduce the draws.
  Series s;
  s.site_names = x.site_names();
  for (std::size_t m = 0; m < c.synth_members; ++m)
    for (std::size_t b = 0; b < c.synth_n; ++b) {
      const auto row = static_cast<Eigen::Index>(m * c.synth_n + b);
      SeriesRecord r{*start + std::chrono::days{7 * static_cast<std::int64_t>(b)}, "m" + std::to_string(m + 1), {}};
      for (Eigen::Index j = 0; j < d; ++j) r.values.emplace_back(x.values()(row, j));
      s.records.push_back(std::move(r));
    }
  std::ostringstream os;
  write_series_csv(os, s);
  const fs::path path = c.out / c.synth_output;
  atomic_write(path, os.str());
  std::cerr << "synth: wrote " << s.records.size() << " records to " << path.string() << '\n';
  return 0;
}

int cmd_fit(const RunConfig& c) {
  const Series series = require_series(c);
  const std::vector<Cell> cells = c.cells();
  std::vector<CellData> data;
  for (const auto& cell : cells) data.push_back(load_cell_data(series, cell));

  std::vector<std::optional<SparModel>> models(cells.size());
  parallel_for(cells.size(), c.workers, [&](std::size_t k) { models[k] = spar_fit(data[k].obs, c.fit); });

  OutputSet out;
  json report{{"schema", "spar-fit-report"}, {"version", kSchemaVersion}, {"seed", c.seed}, {"alpha", c.fit.alpha}};
  json cells_json = json::array();
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const SparModel& m = *models[k];
    const FitSummary& s = m.summary();
    const fs::path path = model_path(c, cells[k]);
    out.add(path, serialize_model(m));
    cells_json.push_back({{"cell", cells[k].label},
                          {"window", cells[k].window.label},
                          {"members", cells[k].members},
                          {"model", path.filename().string()},
                          {"n", s.n},
                          {"blocks_dropped", data[k].log.dropped},
                          {"exceedances", s.exceedances},
                          {"exceedance_fraction", s.exceedance_fraction},
                          {"threshold_epochs", s.threshold.epochs},
                          {"threshold_best_val_loss", s.threshold.best_val_loss},
                          {"gpd_epochs", s.gpd.epochs},
                          {"gpd_best_val_loss", s.gpd.best_val_loss},
                          {"restarts", s.threshold.restarts + s.gpd.restarts}});
    std::cerr << "fit " << cells[k].label << ": n=" << s.n << " exceedance_fraction=" << s.exceedance_fraction
              << " epochs(threshold,gpd)=(" << s.threshold.epochs << "," << s.gpd.epochs << ")\n";
  }
  report["cells"] = std::move(cells_json);
  out.add(c.out / "fit_report.json", report.dump(1) + "\n");
  out.commit();
  return 0;
}

int cmd_diagnose(const RunConfig& c, const std::string& model_override) {
  const std::vector<Cell> cells = c.cells();
  if (!model_override.empty() && cells.size() != 1)
    throw DomainError("--model needs a single cell; select one with --window (and --members)");
  std::vector<SparModel> models;
  for (const auto& cell : cells) models.push_back(load_cell_model(c, cell, model_override));
  const Series series = require_series(c);

  OutputSet out;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const SparModel& m = models[k];
    const ObservationMatrix obs = load_cell_data(series, cells[k]).obs;
    check_dimension(m, obs);
    const auto& names = obs.site_names();
    const fs::path dir = c.out / "diagnostics" / cells[k].label;
    Rng rng(derive_seed(c.seed, stream::diagnose + k));
    const SimulationOptions sim = sim_options(c);

    std::ostringstream qq;
    qq << meta_line("spar-qq", c, cells[k].label);
    write_qq_csv(qq, gpd_qq(m, to_polar(m.transform().forward_rows(obs.values()))));
    out.add(dir / "gpd_qq.csv", qq.str());

    for (Eigen::Index i = 0; i < m.dim(); ++i) {
      std::ostringstream os;
      os << meta_line("spar-qq", c, cells[k].label);
      write_qq_csv(os, marginal_qq_tail(m, obs, i, c.m_tail, rng, sim));
      out.add(dir / ("marginal_qq_" + names[static_cast<std::size_t>(i)] + ".csv"), os.str());
    }
    for (Eigen::Index i = 0; i < m.dim(); ++i)
      for (Eigen::Index j = i + 1; j < m.dim(); ++j) {
        std::vector<ChiCurve> curves;
        for (const Side side : {Side::upper, Side::lower}) {
          ChiCurve cc = chi_pair(m, obs.values(), i, j, side, ChiMode::tail_region, c.chi_grid);
          cc.label_x = names[static_cast<std::size_t>(i)];
          cc.label_y = names[static_cast<std::size_t>(j)];
          curves.push_back(std::move(cc));
        }
        std::ostringstream os;
        os << meta_line("spar-chi", c, cells[k].label);
        write_chi_csv(os, curves);
        out.add(dir / ("chi_" + curves[0].label_x + "__" + curves[0].label_y + ".csv"), os.str());
      }
    std::vector<ReturnLevelCurve> rl;
    for (const Side side : {Side::upper, Side::lower}) {
      auto part = return_level_curve(m, obs, c.rl_periods, side, c.m_tail, rng, {}, sim);
      rl.insert(rl.end(), part.begin(), part.end());
    }
    std::ostringstream os;
    os << meta_line("spar-return-levels", c, cells[k].label);
    write_return_level_csv(os, rl);
    out.add(dir / "return_levels.csv", os.str());
  }
  out.commit();
  std::cerr << "diagnose: wrote " << out.size() << " files\n";
  return 0;
}

int cmd_probs(const RunConfig& c, const std::string& model_override) {
  const std::vector<Cell> cells = c.cells();
  if (!model_override.empty() && cells.size() != 1)
    throw DomainError("--model needs a single cell; select one with --window (and --members)");
  json report{{"schema", "spar-probs"},       {"version", kSchemaVersion}, {"seed", c.seed},
              {"m_tail", c.m_tail},           {"blocks_per_year", kBlocksPerYear},
              {"return_period_years", c.return_period}};
  json cells_json = json::array();
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const SparModel m = load_cell_model(c, cells[k], model_override);
    Rng rng(derive_seed(c.seed, stream::probs + k));
    const ProbQuantities q = compute_probs(m, c, rng);
    json sum_upper = report_json(q.sum_upper), sum_lower = report_json(q.sum_lower);
    json joint_upper = report_json(q.joint_upper), joint_lower = report_json(q.joint_lower);
    sum_upper["threshold"] = c.sum_upper;
    sum_lower["threshold"] = c.sum_lower;
    joint_upper["levels"] = to_std(q.upper_levels);
    joint_lower["levels"] = to_std(q.lower_levels);
    cells_json.push_back({{"cell", cells[k].label},
                          {"sum_upper", std::move(sum_upper)},
                          {"sum_lower", std::move(sum_lower)},
                          {"joint_upper", std::move(joint_upper)},
                          {"joint_lower", std::move(joint_lower)}});
  }
  report["cells"] = std::move(cells_json);
  atomic_write(c.out / "probs.json", report.dump(1) + "\n");
  return 0;
}

// One named statistic across the point fit and every replicate.
struct StatRow {
  std::string quantity, side, site, at;
  double point = 0.0;
  std::vector<double> replicates;
};

std::vector<StatRow> collect_stats(const SparModel& m, const ObservationMatrix& obs, const RunConfig& c, Rng& rng) {
  std::vector<StatRow> rows;
  auto add = [&](std::string q, std::string side, std::string site, std::string at, double v) {
    rows.push_back({std::move(q), std::move(side), std::move(site), std::move(at), v, {}});
  };
  auto fmt = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  const ProbQuantities q = compute_probs(m, c, rng);
  add("probability", "upper", "sum", fmt(c.sum_upper), q.sum_upper.probability);
  add("probability", "lower", "sum", fmt(c.sum_lower), q.sum_lower.probability);
  add("probability", "upper", "joint", fmt(c.return_period), q.joint_upper.probability);
  add("probability", "lower", "joint", fmt(c.return_period), q.joint_lower.probability);
  const auto& names = obs.site_names();
  const CombinedSample cs = combined_sample(m, c.m_tail, rng, sim_options(c));
  for (const Side side : {Side::upper, Side::lower}) {
    const Matrix lv = return_levels_from_sample(cs, c.rl_periods, side);
    for (Eigen::Index i = 0; i < m.dim(); ++i)
      for (std::size_t p = 0; p < c.rl_periods.size(); ++p)
        add("return_level", to_string(side), names[static_cast<std::size_t>(i)], fmt(c.rl_periods[p]),
            lv(static_cast<Eigen::Index>(p), i));
  }
  for (Eigen::Index i = 0; i < m.dim(); ++i)
    for (Eigen::Index j = i + 1; j < m.dim(); ++j)
      for (const Side side : {Side::upper, Side::lower}) {
        const ChiCurve cc = chi_pair(m, obs.values(), i, j, side, ChiMode::tail_region, c.chi_grid);
        for (std::size_t u = 0; u < cc.u_grid.size(); ++u)
          add("chi", to_string(side), names[static_cast<std::size_t>(i)] + ":" + names[static_cast<std::size_t>(j)],
              fmt(cc.u_grid[u]), cc.chi[u]);
      }
  return rows;
}

int cmd_bootstrap(const RunConfig& c) {
  if (c.bootstrap == 0) throw DomainError("bootstrap: set B with --bootstrap or the 'bootstrap' key");
  const Series series = require_series(c);
  const std::vector<Cell> cells = c.cells();
  OutputSet out;
  json report{{"schema", "spar-bootstrap-report"}, {"version", kSchemaVersion}, {"seed", c.seed}, {"B", c.bootstrap}};
  json cells_json = json::array();
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const ObservationMatrix obs = load_cell_data(series, cells[k]).obs;
    const SparModel point = spar_fit(obs, c.fit);
    BootstrapOptions bo;
    bo.workers = c.workers;
    const BootstrapEnsemble ens = bootstrap_fit(obs, c.fit, c.bootstrap, c.seed, bo);

    Rng rng(derive_seed(c.seed, stream::bootstrap_stats + k));
    std::vector<StatRow> rows = collect_stats(point, obs, c, rng);
    RunConfig serial = c;
    serial.workers = 1;
    const auto per_rep = ensemble_map(
        ens,
        [&](const SparModel& m, std::size_t r) {
          Rng rr(derive_seed(c.seed, stream::bootstrap_stats + 0x10000 * (k + 1) + ens.replicate_index[r]));
          return collect_stats(m, obs, serial, rr);
        },
        c.workers);
    for (const auto& rep : per_rep)
      for (std::size_t s = 0; s < rows.size(); ++s) rows[s].replicates.push_back(rep[s].point);

    const fs::path dir = c.out / "bootstrap" / cells[k].label;
    for (std::size_t r = 0; r < ens.models.size(); ++r)
      out.add(dir / ("replicate_" + std::to_string(ens.replicate_index[r]) + ".json"), serialize_model(ens.models[r]));

    std::ostringstream csv;
    csv << meta_line("spar-bootstrap-ci", c, cells[k].label);
    csv << "quantity,side,site,at,point,lo,hi,level,replicates,point_outside_ci\n" << std::setprecision(17);
    std::size_t outside = 0;
    std::ostringstream level;
    level << c.ci_level;
    for (const auto& row : rows) {
      std::vector<double> finite;
      for (const double v : row.replicates)
        if (std::isfinite(v)) finite.push_back(v);
      csv << row.quantity << ',' << row.side << ',' << row.site << ',' << row.at << ',';
      if (std::isfinite(row.point)) {
        csv << row.point;
      } else {
        csv << "NA";
      }
      if (finite.empty()) {
        csv << ",NA,NA," << level.str() << ",0,NA\n";
        continue;
      }
      const ConfidenceInterval ci = percentile_ci(finite, c.ci_level);
      const bool off = std::isfinite(row.point) && (row.point < ci.lo || row.point > ci.hi);
      outside += off ? 1 : 0;
      csv << ',' << ci.lo << ',' << ci.hi << ',' << level.str() << ',' << ci.B << ',' << int(off) << '\n';
    }
    out.add(dir / "ci.csv", csv.str());

    json failures = json::array();
    for (const auto& f : ens.failures)
      failures.push_back({{"replicate", f.replicate}, {"kind", f.kind}, {"message", f.message}});
    cells_json.push_back({{"cell", cells[k].label},
                          {"succeeded", ens.models.size()},
                          {"failed", ens.failures.size()},
                          {"failures", std::move(failures)},
                          {"statistics", rows.size()},
                          {"point_outside_ci", outside},
                          {"precision_warning", ens.models.size() < 20}});
    std::cerr << "bootstrap " << cells[k].label << ": " << ens.models.size() << "/" << c.bootstrap
              << " replicates; " << outside << " point estimates outside their interval\n";
  }
  report["cells"] = std::move(cells_json);
  out.add(c.out / "bootstrap_report.json", report.dump(1) + "\n");
  out.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-parametric angular-radial extreme-value modelling"};
  app.require_subcommand(1);
  Flags flags;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "master seed");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--window", flags.window, "restrict to one window label, e.g. 1980-2009");
    sub->add_option("--members", flags.members, "use the first K ensemble members");
    sub->add_option("--bootstrap", flags.bootstrap, "number of bootstrap replicates");
    sub->add_option("--m-tail", flags.m_tail, "simulated tail sample size");
    sub->add_option("--workers", flags.workers, "worker threads");
    sub->add_option("--data", flags.data, "series CSV (timestamp,member,site...)");
  };
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic Gaussian-copula series");
  CLI::App* fit = app.add_subcommand("fit", "fit one model per window/subsample cell");
  CLI::App* diagnose = app.add_subcommand("diagnose", "QQ, chi and return-level tables for fitted models");
  CLI::App* probs = app.add_subcommand("probs", "sum and joint tail probabilities with return periods");
  CLI::App* boot = app.add_subcommand("bootstrap", "bootstrap ensemble and percentile intervals");
  for (CLI::App* s : {synth, fit, diagnose, probs, boot}) common(s);
  for (CLI::App* s : {diagnose, probs}) s->add_option("--model", flags.model, "model file (single cell)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("", "usage", e.what());
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const RunConfig cfg = load_config(flags);
    if (command == "synth") return cmd_synth(cfg);
    if (command == "fit") return cmd_fit(cfg);
    if (command == "diagnose") return cmd_diagnose(cfg, flags.model);
    if (command == "probs") return cmd_probs(cfg, flags.model);
    return cmd_bootstrap(cfg);
  } catch (const Error& e) {
    return report_error(command, e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error(command, "internal", e.what());
  }
}
