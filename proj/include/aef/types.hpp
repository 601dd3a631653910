#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace aef {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using ArrayXd = Eigen::ArrayXd;

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
inline constexpr double kLn2 = 0.6931471805599453094;

/// Thrown when a value violates an operation's domain or a config is invalid.
using DomainError = std::invalid_argument;
/// Thrown on numeric/runtime failures (non-finite activations, scale underflow).
using NumericError = std::runtime_error;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DomainError(msg);
}

}  // namespace aef
