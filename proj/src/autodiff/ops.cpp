#include "vqa/autodiff.hpp"

#include <cmath>
#include <limits>

namespace vqa::ad {

namespace {

using Shared = std::shared_ptr<Node>;
using MatrixD = vqa::MatrixD;

std::string shapes(const Tensor& a, const Tensor& b) {
  return shape_string(a.rows(), a.cols()) + " and " + shape_string(b.rows(), b.cols());
}

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

// Row-wise softmax of `s` in place; rows with every entry at -inf become zero.
void softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const float mx = row.maxCoeff();
    if (mx == kNegInf) {
      row.setZero();
      continue;
    }
    double total = 0.0;
    for (Eigen::Index c = 0; c < row.size(); ++c) {
      const float e = std::exp(row(c) - mx);
      row(c) = e;
      total += e;
    }
    row *= static_cast<float>(1.0 / total);
  }
}

// d softmax: y * (g - rowsum(g * y)), rowsum in double.
Matrix softmax_backward(const Matrix& y, const Matrix& g) {
  Matrix out(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    double dot = 0.0;
    for (Eigen::Index c = 0; c < y.cols(); ++c) dot += static_cast<double>(g(r, c)) * y(r, c);
    out.row(r) = y.row(r).array() * (g.row(r).array() - static_cast<float>(dot));
  }
  return out;
}

// Column sums of a row-major matrix, accumulated in double.
Matrix column_sums(const Matrix& g) {
  VectorD acc = VectorD::Zero(g.cols());
  for (Eigen::Index r = 0; r < g.rows(); ++r) acc += g.row(r).transpose().cast<double>();
  return acc.transpose().cast<float>();
}

}  // namespace

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: incompatible shapes " + shapes(a, b));
  Matrix out;
  out.noalias() = a.value() * b.value();
  Shared an = a.shared(), bn = b.shared();
  return t.record(std::move(out), {&a, &b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      Matrix ga;
      ga.noalias() = self.grad * bn->value.transpose();
      an->accumulate(std::move(ga));
    }
    if (bn->requires_grad) {
      Matrix gb;
      gb.noalias() = an->value.transpose() * self.grad;
      bn->accumulate(std::move(gb));
    }
  });
}

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  Shared an = a.shared(), bn = b.shared();
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return t.record(a.value() + b.value(), {&a, &b}, [an, bn](Node& self) {
      an->accumulate(self.grad);
      bn->accumulate(self.grad);
    });
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    Matrix out = a.value().rowwise() + b.value().row(0);
    return t.record(std::move(out), {&a, &b}, [an, bn](Node& self) {
      an->accumulate(self.grad);
      if (bn->requires_grad) bn->accumulate(column_sums(self.grad));
    });
  }
  throw ShapeError("add: incompatible shapes " + shapes(a, b));
}

Tensor scale(Tape& t, const Tensor& a, float s) {
  Shared an = a.shared();
  return t.record(a.value() * s, {&a}, [an, s](Node& self) { an->accumulate(self.grad * s); });
}

Tensor concat(Tape& t, const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  Eigen::Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (p.cols() != parts[0].cols()) throw ShapeError("concat rows: incompatible shapes " + shapes(parts[0], p));
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts[0].rows()) throw ShapeError("concat cols: incompatible shapes " + shapes(parts[0], p));
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<Shared> nodes;
  std::vector<const Tensor*> inputs;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      out.middleRows(off, p.rows()) = p.value();
      off += p.rows();
    } else {
      out.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
    nodes.push_back(p.shared());
    inputs.push_back(&p);
  }
  return t.record(std::move(out), inputs, [nodes, axis](Node& self) {
    Eigen::Index o = 0;
    for (const auto& n : nodes) {
      if (axis == 0) {
        if (n->requires_grad) n->accumulate(self.grad.middleRows(o, n->value.rows()));
        o += n->value.rows();
      } else {
        if (n->requires_grad) n->accumulate(self.grad.middleCols(o, n->value.cols()));
        o += n->value.cols();
      }
    }
  });
}

Tensor slice(Tape& t, const Tensor& a, Eigen::Index row_begin, Eigen::Index row_count, Eigen::Index col_begin,
             Eigen::Index col_count) {
  if (col_count < 0) col_count = a.cols() - col_begin;
  if (row_begin < 0 || row_count < 0 || row_begin + row_count > a.rows() || col_begin < 0 ||
      col_begin + col_count > a.cols())
    throw ShapeError("slice: block " + shape_string(row_count, col_count) + " at (" + std::to_string(row_begin) + ", " +
                     std::to_string(col_begin) + ") outside " + shape_string(a.rows(), a.cols()));
  Shared an = a.shared();
  Matrix out = a.value().block(row_begin, col_begin, row_count, col_count);
  return t.record(std::move(out), {&a}, [an, row_begin, col_begin](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    g.block(row_begin, col_begin, self.grad.rows(), self.grad.cols()) = self.grad;
    an->accumulate(std::move(g));
  });
}

Tensor transpose(Tape& t, const Tensor& a) {
  Shared an = a.shared();
  return t.record(a.value().transpose(), {&a}, [an](Node& self) { an->accumulate(self.grad.transpose()); });
}

Tensor embedding_lookup(Tape& t, const Tensor& table, const std::vector<int>& ids) {
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  Matrix out(n, table.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id == -1) {
      out.row(i).setZero();
      continue;
    }
    if (id < 0 || id >= table.rows())
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    out.row(i) = table.value().row(id);
  }
  Shared tn = table.shared();
  return t.record(std::move(out), {&table}, [tn, ids](Node& self) {
    if (!tn->has_grad) {
      tn->grad = Matrix::Zero(tn->value.rows(), tn->value.cols());
      tn->has_grad = true;
    }
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] >= 0) tn->grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Tensor relu(Tape& t, const Tensor& a) {
  Shared an = a.shared();
  return t.record(a.value().cwiseMax(0.0f), {&a}, [an](Node& self) {
    Matrix g = self.grad;
    const float* v = an->value.data();
    float* d = g.data();
    for (Eigen::Index i = 0; i < g.size(); ++i)
      if (!(v[i] > 0.0f)) d[i] = 0.0f;
    an->accumulate(std::move(g));
  });
}

Tensor layer_norm(Tape& t, const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const Eigen::Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
    throw ShapeError("layer_norm: affine parameters " + shapes(gamma, beta) + " do not match width " +
                     std::to_string(n));
  auto xhat = std::make_shared<Matrix>(x.rows(), n);
  auto inv_std = std::make_shared<VectorF>(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) mean += x.value()(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const double d = x.value()(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = static_cast<float>(is);
    for (Eigen::Index c = 0; c < n; ++c) (*xhat)(r, c) = static_cast<float>((x.value()(r, c) - mean) * is);
  }
  Matrix out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  Shared xn = x.shared(), gn = gamma.shared(), bn = beta.shared();
  return t.record(std::move(out), {&x, &gamma, &beta}, [xn, gn, bn, xhat, inv_std, n](Node& self) {
    const Matrix& g = self.grad;
    if (gn->requires_grad)
      gn->accumulate(column_sums(Matrix(g.cwiseProduct(*xhat))));
    if (bn->requires_grad) bn->accumulate(column_sums(g));
    if (!xn->requires_grad) return;
    Matrix gx(g.rows(), n);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      double m1 = 0.0, m2 = 0.0;
      for (Eigen::Index c = 0; c < n; ++c) {
        const double gh = static_cast<double>(g(r, c)) * gn->value(0, c);
        m1 += gh;
        m2 += gh * (*xhat)(r, c);
      }
      m1 /= static_cast<double>(n);
      m2 /= static_cast<double>(n);
      for (Eigen::Index c = 0; c < n; ++c) {
        const double gh = static_cast<double>(g(r, c)) * gn->value(0, c);
        gx(r, c) = static_cast<float>((*inv_std)(r) * (gh - m1 - (*xhat)(r, c) * m2));
      }
    }
    xn->accumulate(std::move(gx));
  });
}

Tensor softmax(Tape& t, const Tensor& x, const Matrix* additive_mask) {
  Matrix y = x.value();
  if (additive_mask) {
    if (additive_mask->rows() != y.rows() || additive_mask->cols() != y.cols())
      throw ShapeError("softmax: mask " + shape_string(additive_mask->rows(), additive_mask->cols()) +
                       " does not match input " + shape_string(y.rows(), y.cols()));
    y += *additive_mask;
  }
  softmax_rows(y);
  Shared xn = x.shared();
  auto saved = std::make_shared<Matrix>(y);
  return t.record(std::move(y), {&x}, [xn, saved](Node& self) { xn->accumulate(softmax_backward(*saved, self.grad)); });
}

Tensor sum(Tape& t, const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = static_cast<float>(a.value().cast<double>().sum());
  Shared an = a.shared();
  return t.record(std::move(out), {&a}, [an](Node& self) {
    an->accumulate(Matrix(Matrix::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0))));
  });
}

Tensor dropout(Tape& t, const Tensor& a, float rate, std::mt19937_64& rng) {
  if (rate <= 0.0f) return a;
  if (rate >= 1.0f) throw ConfigError("dropout rate must be below 1");
  // One draw from the caller's generator seeds a splitmix64 stream; each
  // 64-bit word yields two 32-bit uniforms.
  std::uint64_t state = rng();
  auto next = [&state] {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  const auto threshold = static_cast<std::uint32_t>(static_cast<double>(rate) * 4294967296.0);
  const float s = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<Matrix>(a.rows(), a.cols());
  float* m = mask->data();
  const Eigen::Index n = mask->size();
  for (Eigen::Index i = 0; i < n; i += 2) {
    const std::uint64_t w = next();
    m[i] = static_cast<std::uint32_t>(w) >= threshold ? s : 0.0f;
    if (i + 1 < n) m[i + 1] = static_cast<std::uint32_t>(w >> 32) >= threshold ? s : 0.0f;
  }
  Shared an = a.shared();
  return t.record(a.value().cwiseProduct(*mask), {&a}, [an, mask](Node& self) {
    an->accumulate(Matrix(self.grad.cwiseProduct(*mask)));
  });
}

namespace {

struct AttentionSaved {
  std::vector<Matrix> probs;  // one per (segment, head)
};

Tensor attention_impl(Tape& t, const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout,
                      const Matrix* single_mask) {
  const int heads = layout.heads;
  if (q.cols() != k.cols()) throw ShapeError("attention: query/key widths differ " + shapes(q, k));
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value lengths differ " + shapes(k, v));
  if (heads <= 0 || q.cols() % heads != 0 || v.cols() % heads != 0)
    throw ShapeError("attention: width " + std::to_string(q.cols()) + " not divisible by " + std::to_string(heads) +
                     " heads");
  if (!layout.key_valid.empty() && static_cast<Eigen::Index>(layout.key_valid.size()) != k.rows())
    throw ShapeError("attention: key mask length " + std::to_string(layout.key_valid.size()) + " != key count " +
                     std::to_string(k.rows()));
  const Eigen::Index dh = q.cols() / heads;
  const Eigen::Index dv = v.cols() / heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

  Matrix out = Matrix::Zero(q.rows(), v.cols());
  auto saved = std::make_shared<AttentionSaved>();
  saved->probs.reserve(layout.segments.size() * static_cast<std::size_t>(heads));
  for (const auto& seg : layout.segments) {
    if (seg.q_begin + seg.q_len > q.rows() || seg.k_begin + seg.k_len > k.rows())
      throw ShapeError("attention: segment exceeds input bounds");
    for (int h = 0; h < heads; ++h) {
      Matrix s;
      s.noalias() = q.value().block(seg.q_begin, h * dh, seg.q_len, dh) *
                    k.value().block(seg.k_begin, h * dh, seg.k_len, dh).transpose();
      s *= inv_sqrt;
      if (single_mask) s += *single_mask;
      if (!layout.key_valid.empty())
        for (Eigen::Index j = 0; j < seg.k_len; ++j)
          if (!layout.key_valid[static_cast<std::size_t>(seg.k_begin + j)]) s.col(j).setConstant(kNegInf);
      softmax_rows(s);
      out.block(seg.q_begin, h * dv, seg.q_len, dv).noalias() = s * v.value().block(seg.k_begin, h * dv, seg.k_len, dv);
      saved->probs.push_back(std::move(s));
    }
  }

  Shared qn = q.shared(), kn = k.shared(), vn = v.shared();
  auto segments = layout.segments;
  return t.record(std::move(out), {&q, &k, &v}, [qn, kn, vn, saved, segments, heads, dh, dv, inv_sqrt](Node& self) {
    Matrix gq = Matrix::Zero(qn->value.rows(), qn->value.cols());
    Matrix gk = Matrix::Zero(kn->value.rows(), kn->value.cols());
    Matrix gv = Matrix::Zero(vn->value.rows(), vn->value.cols());
    std::size_t idx = 0;
    for (const auto& seg : segments) {
      for (int h = 0; h < heads; ++h, ++idx) {
        const Matrix& p = saved->probs[idx];
        const auto go = self.grad.block(seg.q_begin, h * dv, seg.q_len, dv);
        gv.block(seg.k_begin, h * dv, seg.k_len, dv).noalias() += p.transpose() * go;
        Matrix gp;
        gp.noalias() = go * vn->value.block(seg.k_begin, h * dv, seg.k_len, dv).transpose();
        Matrix gs = softmax_backward(p, gp) * inv_sqrt;
        gq.block(seg.q_begin, h * dh, seg.q_len, dh).noalias() +=
            gs * kn->value.block(seg.k_begin, h * dh, seg.k_len, dh);
        gk.block(seg.k_begin, h * dh, seg.k_len, dh).noalias() +=
            gs.transpose() * qn->value.block(seg.q_begin, h * dh, seg.q_len, dh);
      }
    }
    qn->accumulate(std::move(gq));
    kn->accumulate(std::move(gk));
    vn->accumulate(std::move(gv));
  });
}

}  // namespace

Tensor scaled_dot_attention(Tape& t, const Tensor& q, const Tensor& k, const Tensor& v, const Matrix& mask, int heads) {
  if (mask.size() != 0 && (mask.rows() != q.rows() || mask.cols() != k.rows()))
    throw ShapeError("attention: mask " + shape_string(mask.rows(), mask.cols()) + " does not match " +
                     shape_string(q.rows(), k.rows()) + " scores");
  AttentionLayout layout;
  layout.heads = heads;
  layout.segments.push_back({0, q.rows(), 0, k.rows()});
  return attention_impl(t, q, k, v, layout, mask.size() ? &mask : nullptr);
}

Tensor scaled_dot_attention(Tape& t, const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout) {
  return attention_impl(t, q, k, v, layout, nullptr);
}

Tensor cross_entropy(Tape& t, const Tensor& logits, const std::vector<int>& targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " rows");
  const Matrix& z = logits.value();
  auto probs = std::make_shared<Matrix>(Matrix::Zero(z.rows(), z.cols()));
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    if (y >= z.cols())
      throw ShapeError("cross_entropy: class " + std::to_string(y) + " outside " + std::to_string(z.cols()) + " logits");
    const double mx = z.row(r).maxCoeff();
    double s = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) s += std::exp(static_cast<double>(z(r, c)) - mx);
    const double lse = mx + std::log(s);
    total += lse - z(r, y);
    for (Eigen::Index c = 0; c < z.cols(); ++c) (*probs)(r, c) = static_cast<float>(std::exp(z(r, c) - lse));
  }
  Matrix out(1, 1);
  out(0, 0) = static_cast<float>(total);
  Shared ln = logits.shared();
  return t.record(std::move(out), {&logits}, [ln, probs, targets](Node& self) {
    Matrix g = *probs;
    for (std::size_t r = 0; r < targets.size(); ++r)
      if (targets[r] >= 0) g(static_cast<Eigen::Index>(r), targets[r]) -= 1.0f;
    ln->accumulate(g * self.grad(0, 0));
  });
}

Tensor bce_with_logits(Tape& t, const Tensor& logits, const std::vector<int>& targets) {
  if (logits.cols() != 1 || static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw ShapeError("bce_with_logits: expects an N x 1 logit column for " + std::to_string(targets.size()) +
                     " targets, got " + shape_string(logits.rows(), logits.cols()));
  const Matrix& z = logits.value();
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    if (y > 1) throw ShapeError("bce_with_logits: target must be 0 or 1");
    const double x = z(r, 0);
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Matrix out(1, 1);
  out(0, 0) = static_cast<float>(total);
  Shared ln = logits.shared();
  return t.record(std::move(out), {&logits}, [ln, targets](Node& self) {
    Matrix g = Matrix::Zero(ln->value.rows(), 1);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      if (targets[r] < 0) continue;
      const double x = ln->value(static_cast<Eigen::Index>(r), 0);
      const double sig = 1.0 / (1.0 + std::exp(-x));
      g(static_cast<Eigen::Index>(r), 0) = static_cast<float>((sig - targets[r]) * self.grad(0, 0));
    }
    ln->accumulate(std::move(g));
  });
}

}  // namespace vqa::ad
