#pragma once

#include "vqa/common.hpp"
#include "vqa/feature_store.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace vqa::adapter {

using features::EncoderGeometry;
using features::GeometryKind;

class AdapterError : public DataError {
 public:
  using DataError::DataError;
};

/// Total scalar budget B on N_v * d, and the object bound K.
struct MemoryRegime {
  int budget = 100;
  int k = 10;

  void validate() const {
    if (budget < k || k <= 0) throw ConfigError("memory regime needs budget >= K > 0");
  }
};

/// Per-encoder settings: native geometry and, for grids, the pooled side length.
struct EncoderProfile {
  std::string name;
  EncoderGeometry native;
  int pooled_grid = 0;        // g, grids only
  bool grid_positions = true;  // add learned grid positional embeddings
};

/// Built-in profiles. Grid backbones pool to 4x4, raw pixels to 3x3, object
/// encoders keep their native slot count.
const std::vector<EncoderProfile>& default_profiles();
const EncoderProfile& find_profile(std::string_view name);

enum class DimensionMode { compress, pad, identity };
std::string_view mode_name(DimensionMode mode);

struct AdapterPlan {
  EncoderGeometry native;
  int pooled_grid = 0;  // 0 for object geometries
  int tokens = 0;       // adapted N_v
  int dim = 0;          // adapted d = floor(B / N_v)
  DimensionMode mode = DimensionMode::identity;

  int budget_used() const { return tokens * dim; }
  bool operator==(const AdapterPlan&) const = default;
};

/// Throws AdapterError when d would be zero and ConfigError when the profile
/// does not describe this geometry kind.
AdapterPlan plan_adaptation(const EncoderGeometry& geometry, const MemoryRegime& regime, const EncoderProfile& profile);

// ---------------------------------------------------------------------------
// Adaptive average pooling
// ---------------------------------------------------------------------------

struct GridCoord {
  int row = 0;
  int col = 0;
  bool operator==(const GridCoord&) const = default;
};

template <typename Scalar>
struct PooledGrid {
  RowMatrix<Scalar> tokens;  // (g*g) x d, row index = i*g + j
  std::vector<GridCoord> coords;
};

/// Input rows are grid cells in row-major order (row index = r*w + c).
/// Output cell (i, j) averages input rows [floor(i*h/g), floor((i+1)*h/g)) and
/// columns [floor(j*w/g), floor((j+1)*w/g)).
template <typename Scalar>
PooledGrid<Scalar> adaptive_avg_pool(const Eigen::Ref<const RowMatrix<Scalar>>& tokens, int h, int w, int g) {
  if (g <= 0 || g > h || g > w)
    throw AdapterError("cannot pool a " + shape_string(h, w) + " grid to " + shape_string(g, g));
  if (tokens.rows() != static_cast<Eigen::Index>(h) * w)
    throw ShapeError("grid " + shape_string(h, w) + " expects " + std::to_string(h * w) + " tokens, got " +
                     std::to_string(tokens.rows()));
  PooledGrid<Scalar> out;
  out.tokens.resize(static_cast<Eigen::Index>(g) * g, tokens.cols());
  out.coords.reserve(static_cast<std::size_t>(g) * g);
  for (int i = 0; i < g; ++i) {
    const int r0 = i * h / g;
    const int r1 = (i + 1) * h / g;
    for (int j = 0; j < g; ++j) {
      const int c0 = j * w / g;
      const int c1 = (j + 1) * w / g;
      auto dst = out.tokens.row(static_cast<Eigen::Index>(i) * g + j);
      dst.setZero();
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) dst += tokens.row(static_cast<Eigen::Index>(r) * w + c);
      dst /= static_cast<Scalar>((r1 - r0) * (c1 - c0));
      out.coords.push_back({i, j});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

template <typename Scalar>
struct PCAModel {
  Vector<Scalar> mean;                  // d_v
  RowMatrix<Scalar> components;         // d_out x d_v, rows orthonormal, descending variance
  Vector<Scalar> explained_variance;    // d_out, non-increasing
  int rank = 0;                         // components backed by non-zero variance
  bool rank_deficient = false;          // true when completion rows were added

  int input_dim() const { return static_cast<int>(mean.size()); }
  int output_dim() const { return static_cast<int>(components.rows()); }

  RowMatrix<Scalar> project(const Eigen::Ref<const RowMatrix<Scalar>>& x) const {
    return (x.rowwise() - mean.transpose()) * components.transpose();
  }
  RowMatrix<Scalar> reconstruct(const Eigen::Ref<const RowMatrix<Scalar>>& y) const {
    return (y * components).rowwise() + mean.transpose();
  }
};

/// Streaming first/second moments. Samples are shifted by the first row seen
/// to keep the scatter matrix well-conditioned.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(int dim) : dim_(dim), shift_(VectorD::Zero(dim)), sum_(VectorD::Zero(dim)),
                                            scatter_(MatrixD::Zero(dim, dim)) {}

  template <typename Derived>
  void add(const Eigen::MatrixBase<Derived>& rows) {
    if (rows.cols() != dim_) throw ShapeError("accumulator expects " + std::to_string(dim_) + " columns, got " +
                                              std::to_string(rows.cols()));
    if (rows.rows() == 0) return;
    MatrixD x = rows.template cast<double>();
    if (count_ == 0) shift_ = x.row(0).transpose();
    x.rowwise() -= shift_.transpose();
    sum_ += x.colwise().sum().transpose();
    scatter_.template selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    count_ += x.rows();
  }

  long count() const { return count_; }
  int dim() const { return dim_; }
  VectorD mean() const { return shift_ + sum_ / static_cast<double>(count_); }
  /// Unbiased (n - 1) covariance.
  MatrixD covariance() const {
    const VectorD m = sum_ / static_cast<double>(count_);
    MatrixD s = scatter_.selfadjointView<Eigen::Lower>();
    s -= static_cast<double>(count_) * m * m.transpose();
    return s / static_cast<double>(count_ - 1);
  }

 private:
  int dim_;
  long count_ = 0;
  VectorD shift_;
  VectorD sum_;
  MatrixD scatter_;
};

namespace detail {

template <typename Scalar>
void apply_sign_convention(RowMatrix<Scalar>& components) {
  for (Eigen::Index r = 0; r < components.rows(); ++r) {
    Eigen::Index best = 0;
    Scalar best_abs = -1;
    for (Eigen::Index c = 0; c < components.cols(); ++c) {
      const Scalar a = std::abs(components(r, c));
      if (a > best_abs) {
        best_abs = a;
        best = c;
      }
    }
    if (components(r, best) < 0) components.row(r) *= Scalar(-1);
  }
}

}  // namespace detail

/// PCA from a covariance matrix. Eigenvectors of the covariance are the right
/// singular directions of the centered sample matrix.
template <typename Scalar>
PCAModel<Scalar> pca_from_covariance(const Vector<Scalar>& mean, const RowMatrix<Scalar>& covariance, int d_out) {
  const int d_v = static_cast<int>(covariance.rows());
  if (d_out <= 0 || d_out > d_v)
    throw AdapterError("PCA output dimension " + std::to_string(d_out) + " outside [1, " + std::to_string(d_v) + "]");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> solver(covariance);
  if (solver.info() != Eigen::Success) throw NumericError("PCA eigendecomposition did not converge");
  const auto& values = solver.eigenvalues();   // ascending
  const auto& vectors = solver.eigenvectors();

  const Scalar top = std::max(values(d_v - 1), Scalar(0));
  const Scalar tol = std::max(top, std::numeric_limits<Scalar>::min()) * static_cast<Scalar>(d_v) *
                     std::numeric_limits<Scalar>::epsilon() * Scalar(10);

  PCAModel<Scalar> model;
  model.mean = mean;
  model.components.resize(d_out, d_v);
  model.explained_variance.resize(d_out);
  for (int k = 0; k < d_out; ++k) {
    const int src = d_v - 1 - k;
    model.components.row(k) = vectors.col(src).transpose();
    const Scalar v = values(src);
    if (v > tol) {
      model.explained_variance(k) = v;
      ++model.rank;
    } else {
      model.explained_variance(k) = Scalar(0);
    }
  }
  model.rank_deficient = model.rank < d_out;
  detail::apply_sign_convention(model.components);
  return model;
}

/// Fits PCA on n x d_v samples. Requires n > d_out and d_out <= d_v.
template <typename Scalar>
PCAModel<Scalar> fit_pca(const Eigen::Ref<const RowMatrix<Scalar>>& samples, int d_out) {
  const auto n = samples.rows();
  const auto d_v = samples.cols();
  if (d_out <= 0 || d_out > d_v)
    throw AdapterError("PCA output dimension " + std::to_string(d_out) + " outside [1, " + std::to_string(d_v) + "]");
  if (n <= d_out) throw AdapterError("PCA needs more samples (" + std::to_string(n) + ") than components (" +
                                     std::to_string(d_out) + ")");
  const Vector<Scalar> mean = samples.colwise().mean().transpose();
  const RowMatrix<Scalar> centered = samples.rowwise() - mean.transpose();
  RowMatrix<Scalar> cov = RowMatrix<Scalar>::Zero(d_v, d_v);
  cov.template selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  cov = cov.template selfadjointView<Eigen::Lower>();
  cov /= static_cast<Scalar>(n - 1);
  return pca_from_covariance<Scalar>(mean, cov, d_out);
}

inline PCAModel<double> fit_pca(const CovarianceAccumulator& acc, int d_out) {
  if (acc.count() <= d_out)
    throw AdapterError("PCA needs more samples (" + std::to_string(acc.count()) + ") than components (" +
                       std::to_string(d_out) + ")");
  return pca_from_covariance<double>(acc.mean(), acc.covariance(), d_out);
}

/// Versioned binary ("VQPC", little-endian float64 payload).
void save_pca(const PCAModel<double>& model, const std::filesystem::path& path);
PCAModel<double> load_pca(const std::filesystem::path& path);
std::uint64_t pca_checksum(const PCAModel<double>& model);

// ---------------------------------------------------------------------------
// Adapted token sequences
// ---------------------------------------------------------------------------

enum class Modality : int { text = 0, visual = 1 };

/// N x d tokens plus optional grid coordinates and a validity mask.
struct TokenSequence {
  MatrixF tokens;
  Modality modality = Modality::visual;
  std::vector<GridCoord> coords;     // empty for object/text geometries
  std::vector<std::uint8_t> valid;   // empty = all valid

  bool is_valid(Eigen::Index row) const { return valid.empty() || valid[static_cast<std::size_t>(row)] != 0; }
};

/// Pools (grids), then compresses with `pca` or zero-pads to the plan's dim.
/// `valid` is carried through for object geometries.
TokenSequence apply_adapter(const AdapterPlan& plan, const PCAModel<double>* pca, const MatrixF& native,
                            std::vector<std::uint8_t> valid = {});

/// Pooling stage only (identity for object geometries); used to collect PCA fit inputs.
MatrixF pool_native(const AdapterPlan& plan, const MatrixF& native);

}  // namespace vqa::adapter
