#include "vqa/autodiff.hpp"

#include <cassert>

namespace vqa::ad {

Tensor Tensor::leaf(Matrix value, bool requires_grad, std::string name) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->name = std::move(name);
  return Tensor(std::move(node));
}

Matrix Tensor::grad() const {
  if (node_->has_grad) return node_->grad;
  return Matrix::Zero(node_->value.rows(), node_->value.cols());
}

Tensor Tape::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  nodes_.push_back(node);
  return Tensor(std::move(node));
}

Tensor Tape::record(Matrix value, const std::vector<const Tensor*>& inputs, std::function<void(Node&)> backward) {
  if (consumed_) throw SingleUseError("tape already consumed by backward()");
  assert(all_finite(value) && "non-finite forward value");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Tensor* in : inputs) node->requires_grad = node->requires_grad || in->requires_grad();
  if (node->requires_grad) node->backward = std::move(backward);
  nodes_.push_back(node);
  return Tensor(std::move(node));
}

BackwardStats backward(Tape& tape, const Tensor& loss) {
  if (tape.consumed_) throw SingleUseError("backward() called twice on the same tape");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ShapeError("loss must be scalar, got " + shape_string(loss.rows(), loss.cols()));
  bool on_tape = false;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it)
    if (it->get() == loss.node()) {
      on_tape = true;
      break;
    }
  if (!on_tape) throw Error("loss tensor was not recorded on this tape");

  BackwardStats stats;
  tape.consumed_ = true;
  Node* root = loss.node();
  if (root->requires_grad) {
    root->grad = Matrix::Ones(1, 1);
    root->has_grad = true;
    for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
      Node& n = **it;
      if (!n.has_grad || !n.backward) continue;
      n.backward(n);
      n.backward = nullptr;
      ++stats.nodes_visited;
    }
  }
  tape.nodes_.clear();
  return stats;
}

Tensor& ParameterSet::create(const std::string& name, Matrix init) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  params_.push_back(Tensor::leaf(std::move(init), true, name));
  return params_.back();
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name() == name) return true;
  return false;
}

Tensor& ParameterSet::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name() == name) return p;
  throw ConfigError("unknown parameter '" + name + "'");
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name() == name) return p;
  throw ConfigError("unknown parameter '" + name + "'");
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParameterSet::count_disconnected() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (!p.has_grad()) ++n;
  return n;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value().size());
  return n;
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) h = vqa::checksum(p.value(), h);
  return h;
}

}  // namespace vqa::ad
