#ifndef PREMAP_COMMON_HPP
#define PREMAP_COMMON_HPP

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace premap {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A network file failed to parse or violated a structural invariant.
class LoadError : public Error {
 public:
  explicit LoadError(const std::string& what) : Error(what) {}
};

/// Operation received arguments of incompatible dimension.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what) {}
};

/// The input set of a quantitative property has no volume on the
/// verification sample set.
class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what) : Error(what) {}
};

enum class ApproxMode { Under, Over };

inline const char* to_string(ApproxMode mode) {
  return mode == ApproxMode::Under ? "under" : "over";
}

}  // namespace premap

#endif  // PREMAP_COMMON_HPP
