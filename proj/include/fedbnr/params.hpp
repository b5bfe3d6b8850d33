#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fedbnr/linalg.hpp"

namespace fedbnr {

struct ParamSpec {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
  bool operator==(const ParamSpec&) const = default;
};

/// Partition of a flat parameter vector into named matrix segments. Offsets
/// are cumulative, so every index belongs to exactly one segment.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(std::vector<ParamSpec> segments);

  Eigen::Index total_size() const { return total_; }
  std::size_t num_segments() const { return segments_.size(); }
  const ParamSpec& spec(std::size_t i) const { return segments_[i]; }
  Eigen::Index offset(std::size_t i) const { return offsets_[i]; }
  /// Index of a named segment, or -1.
  int find(const std::string& name) const;

  bool operator==(const ParamLayout& other) const {
    return segments_ == other.segments_;
  }

 private:
  std::vector<ParamSpec> segments_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index total_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

/// Flat trainable parameters plus the layout that maps segments to matrices.
/// Positive hyperparameters are stored in log-space ("log_sigma",
/// "log_lambda" segments), so any value of the flat vector is feasible.
struct ParamVector {
  LayoutPtr layout;
  Vector data;

  static ParamVector zeros(LayoutPtr layout);

  Matrix segment(std::size_t i) const;
  Matrix segment(const std::string& name) const;
  void set_segment(std::size_t i, const Matrix& value);
  void set_segment(const std::string& name, const Matrix& value);

  double scalar(const std::string& name) const;
  void set_scalar(const std::string& name, double value);

  bool same_layout(const ParamVector& other) const;
};

/// Elementwise mean across updates (optionally weighted). Accumulates in
/// extended precision so that averaging k identical vectors reproduces them
/// bit for bit.
ParamVector mean_params(const std::vector<ParamVector>& items,
                        const std::vector<double>* weights = nullptr);

}  // namespace fedbnr
