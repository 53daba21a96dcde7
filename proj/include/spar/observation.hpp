#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spar/error.hpp"
#include "spar/types.hpp"

namespace spar {

/// n x d block-maxima observations for one time window. Values are strictly
/// positive (discharge, m^3/s). Rows carry the ensemble member they came from.
class ObservationMatrix {
 public:
  ObservationMatrix() = default;

  ObservationMatrix(Matrix values, std::vector<std::string> site_names, std::string window = {},
                    std::vector<std::string> member_ids = {})
      : values_(std::move(values)),
        site_names_(std::move(site_names)),
        window_(std::move(window)),
        member_ids_(std::move(member_ids)) {
    validate();
  }

  /// Convenience: default site names site1..sited, no members.
  explicit ObservationMatrix(Matrix values) : values_(std::move(values)) {
    for (Eigen::Index j = 0; j < values_.cols(); ++j) site_names_.push_back("site" + std::to_string(j + 1));
    validate();
  }

  [[nodiscard]] const Matrix& values() const noexcept { return values_; }
  [[nodiscard]] Eigen::Index rows() const noexcept { return values_.rows(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return values_.cols(); }
  [[nodiscard]] const std::vector<std::string>& site_names() const noexcept { return site_names_; }
  [[nodiscard]] const std::string& window() const noexcept { return window_; }
  [[nodiscard]] const std::vector<std::string>& member_ids() const noexcept { return member_ids_; }

  /// Rows selected by index, preserving metadata.
  [[nodiscard]] ObservationMatrix select_rows(const std::vector<Eigen::Index>& idx) const {
    Matrix v(static_cast<Eigen::Index>(idx.size()), dim());
    std::vector<std::string> members;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      v.row(static_cast<Eigen::Index>(i)) = values_.row(idx[i]);
      if (!member_ids_.empty()) members.push_back(member_ids_[static_cast<std::size_t>(idx[i])]);
    }
    return ObservationMatrix(std::move(v), site_names_, window_, std::move(members));
  }

 private:
  void validate() const {
    if (values_.rows() < 1 || values_.cols() < 1) throw DataError("ObservationMatrix: empty matrix");
    if (static_cast<Eigen::Index>(site_names_.size()) != values_.cols())
      throw ShapeError("ObservationMatrix: site name count does not match column count");
    if (!member_ids_.empty() && static_cast<Eigen::Index>(member_ids_.size()) != values_.rows())
      throw ShapeError("ObservationMatrix: member id count does not match row count");
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index j = 0; j < values_.cols(); ++j) {
        const double x = values_(i, j);
        if (!std::isfinite(x) || x <= 0.0) {
          std::ostringstream os;
          os << "ObservationMatrix: value at row " << i << ", column " << j << " is not strictly positive (" << x
             << ")";
          throw NonPositiveDataError(os.str());
        }
      }
  }

  Matrix values_;
  std::vector<std::string> site_names_;
  std::string window_;
  std::vector<std::string> member_ids_;
};

}  // namespace spar
