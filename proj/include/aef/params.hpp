#pragma once

#include "aef/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace aef {

/// A named window into the flat parameter vector, viewed as a rows x cols
/// matrix (column-major, matching Eigen::Map).
struct ParamSlice {
  Index offset = 0;
  Index rows = 0;
  Index cols = 1;
  Index size() const { return rows * cols; }
};

// Flat storage for all learnable parameters of a model plus the matching
// gradient accumulator. Optimizers, gradient clipping, checkpoints and
// finite-difference checks all operate on the flat vectors; modules hold
// slices and read/write through Eigen maps.
class ParameterStore {
 public:
  ParamSlice allocate(std::string name, Index rows, Index cols = 1) {
    ParamSlice s{size_, rows, cols};
    size_ += s.size();
    theta_.conservativeResize(size_);
    theta_.segment(s.offset, s.size()).setZero();
    grad_.conservativeResize(size_);
    grad_.segment(s.offset, s.size()).setZero();
    entries_.emplace_back(std::move(name), s);
    return s;
  }

  Index size() const { return size_; }

  Eigen::Map<Matrix> view(const ParamSlice& s) {
    return {theta_.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const Matrix> view(const ParamSlice& s) const {
    return {theta_.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<Matrix> grad_view(const ParamSlice& s) {
    return {grad_.data() + s.offset, s.rows, s.cols};
  }

  Vector& theta() { return theta_; }
  const Vector& theta() const { return theta_; }
  Vector& grad() { return grad_; }
  const Vector& grad() const { return grad_; }

  void zero_grad() { grad_.setZero(); }

  const std::vector<std::pair<std::string, ParamSlice>>& entries() const {
    return entries_;
  }

  ParamSlice find(const std::string& name) const {
    for (const auto& [n, s] : entries_)
      if (n == name) return s;
    throw DomainError("ParameterStore: no parameter named '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& [n, s] : entries_)
      if (n == name) return true;
    return false;
  }

 private:
  Vector theta_{0};
  Vector grad_{0};
  Index size_ = 0;
  std::vector<std::pair<std::string, ParamSlice>> entries_;
};

}  // namespace aef
