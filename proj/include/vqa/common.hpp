#pragma once

#include <Eigen/Dense>

#include <cmath>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace vqa {

/// Row-major dense matrix, the layout used by every on-disk and in-memory token block.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = RowMatrix<float>;
using MatrixD = RowMatrix<double>;
using VectorF = Vector<float>;
using VectorD = Vector<double>;

// Error hierarchy. The CLI maps the three families onto exit codes
// (config 2, data 3, numeric 4).

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Raised on incompatible operand shapes; message names both shapes.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

/// FNV-1a over raw bytes. Used for frozen-boundary audits.
std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

template <typename Derived>
std::uint64_t checksum(const Eigen::DenseBase<Derived>& m, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto& e = m.derived().eval();
  const auto* p = reinterpret_cast<const std::byte*>(e.data());
  return fnv1a({p, static_cast<std::size_t>(e.size()) * sizeof(typename Derived::Scalar)}, seed);
}

std::string shape_string(long rows, long cols);

/// Keeps large tape buffers on the heap instead of fresh mmaps per allocation.
void tune_allocator();

/// x * 0 is NaN exactly for non-finite x, so one vectorized sum decides.
template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  using S = typename Derived::Scalar;
  return !std::isnan((m.derived().array() * S(0)).sum());
}

}  // namespace vqa
