#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "spar/model_io.hpp"
#include "test_support.hpp"

using namespace spar;
namespace fs = std::filesystem;

namespace {

const SparModel& fitted() {
  static const SparModel m = [] {
    Rng rng(3);
    Matrix v(3000, 3);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const double z = rng.normal();
      for (Eigen::Index j = 0; j < 3; ++j) v(i, j) = std::exp(0.5 * z + 0.5 * rng.normal() + 0.1 * j);
    }
    return spar_fit(ObservationMatrix(v), spar::testing::quick_config(12));
  }();
  return m;
}

fs::path scratch_dir() {
  const fs::path p = fs::temp_directory_path() / ("spar_model_io_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(ModelIo, RoundTripIsBitExact) {
  const SparModel& m = fitted();
  const SparModel back = model_from_json(nlohmann::json::parse(serialize_model(m)));
  EXPECT_TRUE(back.threshold_net() == m.threshold_net());
  EXPECT_TRUE(back.gpd_net() == m.gpd_net());
  EXPECT_TRUE(back.exceedance_angles() == m.exceedance_angles());
  EXPECT_TRUE(back.body_points() == m.body_points());
  EXPECT_TRUE(back.transform().nu() == m.transform().nu());
  EXPECT_TRUE(back.transform().star_centre() == m.transform().star_centre());
  EXPECT_EQ(back.alpha(), m.alpha());
  EXPECT_EQ(back.reparam(), m.reparam());
  EXPECT_EQ(back.seed(), 12u);
  EXPECT_EQ(back.summary().n, m.summary().n);
  EXPECT_EQ(back.summary().threshold.history.size(), m.summary().threshold.history.size());
  EXPECT_EQ(back.summary().gpd.best_val_loss, m.summary().gpd.best_val_loss);
  // Serialising twice gives identical text.
  EXPECT_EQ(serialize_model(back), serialize_model(m));
}

TEST(ModelIo, PredictionsSurviveSaveAndLoad) {
  const fs::path path = scratch_dir() / "model.json";
  save_model(fitted(), path);
  const SparModel back = load_model(path);
  const Matrix w = spar::testing::sphere_directions(200, 3, 8);
  EXPECT_TRUE(back.thresholds(w) == fitted().thresholds(w));
  const auto a = back.gpd_params(w), b = fitted().gpd_params(w);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]);
  EXPECT_FALSE(fs::exists(path.parent_path() / ".model.json.tmp"));
  fs::remove_all(path.parent_path());
}

TEST(ModelIo, RejectsForeignAndFutureFiles) {
  nlohmann::json j = model_to_json(fitted());
  j["version"] = 2;
  try {
    (void)model_from_json(j);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  EXPECT_THROW(model_from_json(nlohmann::json{{"format", "other"}}), FormatError);
  nlohmann::json missing = model_to_json(fitted());
  missing.erase("gpd_net");
  EXPECT_THROW(model_from_json(missing), FormatError);
  nlohmann::json bad = model_to_json(fitted());
  bad["body_points"]["rows"] = 1;
  EXPECT_THROW(model_from_json(bad), FormatError);
}

TEST(ModelIo, FileErrors) {
  const fs::path dir = scratch_dir();
  EXPECT_THROW(load_model(dir / "absent.json"), FileError);
  {
    std::ofstream(dir / "junk.json") << "{not json";
  }
  EXPECT_THROW(load_model(dir / "junk.json"), FormatError);
  fs::remove_all(dir);
}

TEST(ModelIo, FailedWriteLeavesExistingFileIntact) {
  const fs::path dir = scratch_dir();
  const fs::path target = dir / "out.json";
  atomic_write(target, "old");
  // A directory squatting on the temporary name makes the write fail.
  fs::create_directories(dir / ".out.json.tmp");
  EXPECT_THROW(atomic_write(target, "new"), FileError);
  std::ifstream in(target);
  std::string content;
  std::getline(in, content);
  EXPECT_EQ(content, "old");
  fs::remove_all(dir);
}
