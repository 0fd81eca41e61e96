#pragma once

#include "vqa/common.hpp"

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

/// Reverse-mode differentiation over row-major float matrices.
///
/// Every tensor is rank <= 2 (scalars are 1x1). Operations record a node on a
/// Tape; backward() walks the tape in reverse exactly once. Parameters are
/// long-lived leaves whose gradients accumulate across a tape until zeroed.
/// Reductions (sums, norms, softmax denominators, losses) accumulate in double.
namespace vqa::ad {

using Matrix = MatrixF;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::function<void(Node&)> backward;
  std::string name;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad) return;
    if (!has_grad) {
      grad = g;
      has_grad = true;
    } else {
      grad += g;
    }
  }
  void accumulate(Matrix&& g) {
    if (!requires_grad) return;
    if (!has_grad) {
      grad = std::move(g);
      has_grad = true;
    } else {
      grad += g;
    }
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Free-standing leaf (parameter or constant input).
  static Tensor leaf(Matrix value, bool requires_grad, std::string name = {});

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Zero-filled when no gradient has reached this tensor.
  Matrix grad() const;
  bool has_grad() const { return node_->has_grad; }
  void zero_grad() {
    node_->has_grad = false;
    node_->grad.resize(0, 0);
  }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::vector<int> shape() const { return {static_cast<int>(rows()), static_cast<int>(cols())}; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  float item() const { return node_->value(0, 0); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

class SingleUseError : public Error {
 public:
  using Error::Error;
};

struct BackwardStats {
  std::size_t nodes_visited = 0;
};

/// Ordered record of operations. Single use: backward() consumes it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant input (no gradient).
  Tensor constant(Matrix value);

  /// Records an op output. `backward` receives the output node (whose grad is set).
  Tensor record(Matrix value, const std::vector<const Tensor*>& inputs, std::function<void(Node&)> backward);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend BackwardStats backward(Tape& tape, const Tensor& loss);
  std::vector<std::shared_ptr<Node>> nodes_;
  bool consumed_ = false;
};

/// Seeds d(loss)/d(loss) = 1 and propagates. Loss must be a 1x1 tensor on this tape.
BackwardStats backward(Tape& tape, const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitives. Shape errors name both operand shapes.
// ---------------------------------------------------------------------------

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
/// Elementwise sum; `b` may also be a 1 x n row broadcast over a's rows.
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, float s);
/// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(Tape& t, const std::vector<Tensor>& parts, int axis);
Tensor slice(Tape& t, const Tensor& a, Eigen::Index row_begin, Eigen::Index row_count, Eigen::Index col_begin = 0,
             Eigen::Index col_count = -1);
Tensor transpose(Tape& t, const Tensor& a);
/// Gathers table rows; id -1 yields a zero row and contributes no gradient.
Tensor embedding_lookup(Tape& t, const Tensor& table, const std::vector<int>& ids);
Tensor relu(Tape& t, const Tensor& a);
/// Row-wise normalization followed by gamma/beta (both 1 x n).
Tensor layer_norm(Tape& t, const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
/// Row-wise softmax of x + mask; -inf mask entries get exactly zero weight.
/// A row with every entry masked yields all zeros.
Tensor softmax(Tape& t, const Tensor& x, const Matrix* additive_mask = nullptr);
Tensor sum(Tape& t, const Tensor& a);
/// Inverted dropout. Identity when rate == 0.
Tensor dropout(Tape& t, const Tensor& a, float rate, std::mt19937_64& rng);

/// softmax(q k^T / sqrt(d_head) + mask) v, split over `heads` column groups.
/// `mask` is Lq x Lk additive (0 or -inf), or empty for no masking.
Tensor scaled_dot_attention(Tape& t, const Tensor& q, const Tensor& k, const Tensor& v, const Matrix& mask,
                            int heads = 1);

/// Attention over independent (query block, key block) pairs packed into the
/// same matrices, one pair per batch sample.
struct AttentionSegment {
  Eigen::Index q_begin = 0;
  Eigen::Index q_len = 0;
  Eigen::Index k_begin = 0;
  Eigen::Index k_len = 0;
};
struct AttentionLayout {
  int heads = 1;
  std::vector<AttentionSegment> segments;
  /// One flag per key row; empty = every key valid. Invalid keys get -inf.
  std::vector<std::uint8_t> key_valid;
};
Tensor scaled_dot_attention(Tape& t, const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout);

/// Sum over rows with target >= 0 of -log softmax(logits)[target]. Rows with
/// target -1 contribute exactly 0 and receive zero gradient.
Tensor cross_entropy(Tape& t, const Tensor& logits, const std::vector<int>& targets);
/// Sum over rows with target in {0, 1} of the logistic loss on the single logit column.
Tensor bce_with_logits(Tape& t, const Tensor& logits, const std::vector<int>& targets);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Named, ordered parameter leaves.
class ParameterSet {
 public:
  Tensor& create(const std::string& name, Matrix init);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Tensor& operator[](std::size_t i) { return params_[i]; }
  const Tensor& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  /// Parameters no gradient reached since the last zero_grad (their gradient is zero).
  std::size_t count_disconnected() const;
  std::size_t scalar_count() const;
  std::uint64_t checksum() const;

 private:
  std::vector<Tensor> params_;
};

}  // namespace vqa::ad
