#pragma once

// Versioned JSON serialization of SparModel. Doubles are written in
// shortest round-trip form, so save -> load reproduces every parameter
// bit for bit. Files are written to a temporary sibling and renamed into
// place, so a failed save never leaves a partial model behind.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "spar/error.hpp"
#include "spar/neural.hpp"
#include "spar/preprocess.hpp"
#include "spar/spar_fit.hpp"
#include "spar/types.hpp"

namespace spar {

inline constexpr const char* kModelFormat = "spar-model";
inline constexpr int kModelFormatVersion = 1;

namespace detail {

using nlohmann::json;

inline json vector_to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// {"rows": r, "cols": c, "data": [row-major]}
inline json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (r < 0 || c < 0 || static_cast<std::size_t>(r * c) != data.size()) throw FormatError("model file: matrix size mismatch");
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[static_cast<std::size_t>(i * c + k)];
  return m;
}

inline json mlp_to_json(const MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers) layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}});
  json heads = json::array();
  for (const Head h : p.heads) heads.push_back(std::string(to_string(h)));
  return {{"layers", std::move(layers)}, {"heads", std::move(heads)}};
}

inline MlpParams mlp_from_json(const json& j) {
  MlpParams p;
  for (const auto& l : j.at("layers")) p.layers.push_back({matrix_from_json(l.at("weight")), vector_from_json(l.at("bias"))});
  for (const auto& h : j.at("heads")) p.heads.push_back(head_from_string(h.get<std::string>()));
  p.validate();
  return p;
}

inline json stage_to_json(const StageSummary& s) {
  json hist = json::array();
  for (const auto& e : s.history)
    hist.push_back({{"epoch", e.epoch}, {"stage", e.stage}, {"lr", e.lr}, {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss}, {"improved", e.improved}});
  return {{"epochs", s.epochs}, {"restarts", s.restarts}, {"stages", s.stages}, {"best_val_loss", s.best_val_loss},
          {"history", std::move(hist)}};
}

inline StageSummary stage_from_json(const json& j) {
  StageSummary s;
  s.epochs = j.at("epochs").get<std::size_t>();
  s.restarts = j.at("restarts").get<std::size_t>();
  s.stages = j.at("stages").get<std::size_t>();
  s.best_val_loss = j.at("best_val_loss").get<double>();
  for (const auto& e : j.at("history"))
    s.history.push_back({e.at("epoch").get<std::size_t>(), e.at("stage").get<std::size_t>(), e.at("lr").get<double>(),
                         e.at("train_loss").get<double>(), e.at("val_loss").get<double>(), e.at("improved").get<bool>()});
  return s;
}

}  // namespace detail

inline nlohmann::json model_to_json(const SparModel& m) {
  using detail::json;
  const FitSummary& s = m.summary();
  return json{
      {"format", kModelFormat},
      {"version", kModelFormatVersion},
      {"seed", m.seed()},
      {"alpha", m.alpha()},
      {"reparam", std::string(to_string(m.reparam()))},
      {"transform", {{"nu", detail::vector_to_json(m.transform().nu())},
                     {"star_centre", detail::vector_to_json(m.transform().star_centre())}}},
      {"threshold_net", detail::mlp_to_json(m.threshold_net())},
      {"gpd_net", detail::mlp_to_json(m.gpd_net())},
      {"exceedance_angles", detail::matrix_to_json(m.exceedance_angles())},
      {"body_points", detail::matrix_to_json(m.body_points())},
      {"summary", {{"n", s.n}, {"exceedances", s.exceedances}, {"exceedance_fraction", s.exceedance_fraction},
                   {"threshold", detail::stage_to_json(s.threshold)}, {"gpd", detail::stage_to_json(s.gpd)}}},
  };
}

inline SparModel model_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || j.value("format", std::string{}) != kModelFormat) throw FormatError("not a SPAR model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      std::ostringstream os;
      os << "unsupported model format version " << version << " (expected " << kModelFormatVersion << ")";
      throw FormatError(os.str());
    }
    MarginalTransform tf(detail::vector_from_json(j.at("transform").at("nu")),
                         detail::vector_from_json(j.at("transform").at("star_centre")));
    SparModel m(std::move(tf), detail::mlp_from_json(j.at("threshold_net")), detail::mlp_from_json(j.at("gpd_net")),
                j.at("alpha").get<double>(), reparam_from_string(j.at("reparam").get<std::string>()),
                detail::matrix_from_json(j.at("exceedance_angles")), detail::matrix_from_json(j.at("body_points")));
    m.set_seed(j.at("seed").get<std::uint64_t>());
    const auto& s = j.at("summary");
    FitSummary fs;
    fs.n = s.at("n").get<std::size_t>();
    fs.exceedances = s.at("exceedances").get<std::size_t>();
    fs.exceedance_fraction = s.at("exceedance_fraction").get<double>();
    fs.threshold = detail::stage_from_json(s.at("threshold"));
    fs.gpd = detail::stage_from_json(s.at("gpd"));
    m.set_summary(std::move(fs));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
}

/// Writes `content` to `path` through a temporary file in the same directory.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp, ec);
      throw FileError("write failed for '" + tmp.string() + "'");
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw FileError("cannot move model into place at '" + path.string() + "'");
  }
}

inline std::string serialize_model(const SparModel& m) { return model_to_json(m).dump(1) + "\n"; }

inline void save_model(const SparModel& m, const std::filesystem::path& path) { atomic_write(path, serialize_model(m)); }

inline SparModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open model file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

}  // namespace spar
