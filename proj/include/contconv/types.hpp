#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace contconv {

// Row-major so that one point's feature vector is contiguous.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

// Error hierarchy. Every failure surfaced by the library derives from Error so
// that the CLI can map it onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public IoError {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : IoError(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

/// x - x is 0 for finite x and NaN otherwise, so the sum is 0 exactly when
/// every entry is finite. Vectorizes, unlike Eigen's allFinite.
template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  return m.size() == 0 || (m.array() - m.array()).sum() == S(0);
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!all_finite(m)) throw NumericError(std::string("non-finite values in ") + what);
}

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Flat, ordered view over the learnable tensors of a module. Gradient objects
// have the same type as the module they differentiate, so collecting both with
// the same function yields aligned lists.
template <typename Scalar>
struct ParamList {
  std::vector<std::string> names;
  std::vector<MatrixX<Scalar>*> values;

  void add(std::string name, MatrixX<Scalar>& m) {
    names.push_back(std::move(name));
    values.push_back(&m);
  }
  std::size_t size() const { return values.size(); }
  Index numel() const {
    Index n = 0;
    for (const auto* v : values) n += v->size();
    return n;
  }
};

}  // namespace contconv
