#include "oracles.hpp"

#include <cmath>
#include <limits>

namespace vqa::oracle {

using ad::Tape;
using ad::Tensor;

double relative_error(const MatD& a, const MatD& b) {
  const double den = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / den;
}

namespace {

MatD to_double(const MatrixF& m) { return m.cast<double>(); }

// sum(W .* x) as a custom tape node.
Tensor weighted_sum(Tape& t, const Tensor& x, const MatrixF& w) {
  MatrixF out(1, 1);
  out(0, 0) = static_cast<float>((x.value().cast<double>().array() * w.cast<double>().array()).sum());
  auto xn = x.shared();
  return t.record(std::move(out), {&x}, [xn, w](ad::Node& self) { xn->accumulate(MatrixF(w * self.grad(0, 0))); });
}

MatD random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  // Work at exactly representable float points so both sides see the same input.
  return m.cast<float>().cast<double>();
}

// ---- double-precision reference forward ops ----

MatD ref_softmax_rows(MatD s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    if (!std::isfinite(mx)) {
      s.row(r).setZero();
      continue;
    }
    double z = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) z += (s(r, c) = std::exp(s(r, c) - mx));
    s.row(r) /= z;
  }
  return s;
}

MatD ref_layer_norm(const MatD& x, const MatD& g, const MatD& b, double eps) {
  MatD out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) / std::sqrt(var + eps) * g(0, c) + b(0, c);
  }
  return out;
}

MatD ref_attention(const MatD& q, const MatD& k, const MatD& v, const MatD& mask, int heads) {
  const Eigen::Index dh = q.cols() / heads, dv = v.cols() / heads;
  MatD out = MatD::Zero(q.rows(), v.cols());
  for (int h = 0; h < heads; ++h) {
    MatD s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() / std::sqrt(static_cast<double>(dh));
    if (mask.size()) s += mask;
    out.middleCols(h * dv, dv) = ref_softmax_rows(s) * v.middleCols(h * dv, dv);
  }
  return out;
}

MatD scalar(double v) {
  MatD m(1, 1);
  m(0, 0) = v;
  return m;
}

// ---- case builders ----

using Inputs = std::vector<Tensor>;
using RefInputs = std::vector<MatD>;

GradCase make_case(std::string name, std::vector<MatD> inputs, std::function<Tensor(Tape&, const Inputs&)> op,
                   std::function<MatD(const RefInputs&)> ref, std::vector<bool> diff = {}) {
  if (diff.empty()) diff.assign(inputs.size(), true);
  return {std::move(name), std::move(inputs), std::move(diff), std::move(op), std::move(ref)};
}

std::vector<GradCase> instances_of(const std::string& which, std::mt19937_64& rng, int n) {
  std::vector<GradCase> out;
  std::uniform_int_distribution<int> dim(2, 6);
  for (int i = 0; i < n; ++i) {
    const int r = dim(rng), c = dim(rng), k = dim(rng);
    if (which == "matmul") {
      out.push_back(make_case(which, {random_matrix(rng, r, k), random_matrix(rng, k, c)},
                              [](Tape& t, const Inputs& x) { return ad::matmul(t, x[0], x[1]); },
                              [](const RefInputs& x) -> MatD { return x[0] * x[1]; }));
    } else if (which == "add") {
      out.push_back(make_case(which, {random_matrix(rng, r, c), random_matrix(rng, r, c)},
                              [](Tape& t, const Inputs& x) { return ad::add(t, x[0], x[1]); },
                              [](const RefInputs& x) -> MatD { return x[0] + x[1]; }));
    } else if (which == "add_broadcast") {
      out.push_back(make_case(which, {random_matrix(rng, r, c), random_matrix(rng, 1, c)},
                              [](Tape& t, const Inputs& x) { return ad::add(t, x[0], x[1]); },
                              [](const RefInputs& x) -> MatD { return x[0].rowwise() + x[1].row(0); }));
    } else if (which == "scale") {
      const float s = std::uniform_real_distribution<float>(-2.0f, 2.0f)(rng);
      out.push_back(make_case(which, {random_matrix(rng, r, c)},
                              [s](Tape& t, const Inputs& x) { return ad::scale(t, x[0], s); },
                              [s](const RefInputs& x) -> MatD { return x[0] * static_cast<double>(s); }));
    } else if (which == "concat_rows") {
      out.push_back(make_case(
          which, {random_matrix(rng, r, c), random_matrix(rng, k, c), random_matrix(rng, 1, c)},
          [](Tape& t, const Inputs& x) { return ad::concat(t, {x[0], x[1], x[2]}, 0); },
          [](const RefInputs& x) -> MatD {
            MatD m(x[0].rows() + x[1].rows() + x[2].rows(), x[0].cols());
            m << x[0], x[1], x[2];
            return m;
          }));
    } else if (which == "concat_cols") {
      out.push_back(make_case(which, {random_matrix(rng, r, c), random_matrix(rng, r, k)},
                              [](Tape& t, const Inputs& x) { return ad::concat(t, {x[0], x[1]}, 1); },
                              [](const RefInputs& x) -> MatD {
                                MatD m(x[0].rows(), x[0].cols() + x[1].cols());
                                m << x[0], x[1];
                                return m;
                              }));
    } else if (which == "slice") {
      const int rb = std::uniform_int_distribution<int>(0, r - 1)(rng);
      const int rc = std::uniform_int_distribution<int>(1, r - rb)(rng);
      const int cb = std::uniform_int_distribution<int>(0, c - 1)(rng);
      const int cc = std::uniform_int_distribution<int>(1, c - cb)(rng);
      out.push_back(make_case(which, {random_matrix(rng, r, c)},
                              [=](Tape& t, const Inputs& x) { return ad::slice(t, x[0], rb, rc, cb, cc); },
                              [=](const RefInputs& x) -> MatD { return x[0].block(rb, cb, rc, cc); }));
    } else if (which == "transpose") {
      out.push_back(make_case(which, {random_matrix(rng, r, c)},
                              [](Tape& t, const Inputs& x) { return ad::transpose(t, x[0]); },
                              [](const RefInputs& x) -> MatD { return x[0].transpose(); }));
    } else if (which == "embedding_lookup") {
      std::vector<int> ids(static_cast<std::size_t>(k + 2));
      std::uniform_int_distribution<int> id(-1, r - 1);
      for (auto& v : ids) v = id(rng);
      ids[0] = 0;  // repeated ids accumulate
      ids[1] = 0;
      out.push_back(make_case(which, {random_matrix(rng, r, c)},
                              [ids](Tape& t, const Inputs& x) { return ad::embedding_lookup(t, x[0], ids); },
                              [ids](const RefInputs& x) -> MatD {
                                MatD m = MatD::Zero(static_cast<Eigen::Index>(ids.size()), x[0].cols());
                                for (std::size_t i = 0; i < ids.size(); ++i)
                                  if (ids[i] >= 0) m.row(static_cast<Eigen::Index>(i)) = x[0].row(ids[i]);
                                return m;
                              }));
    } else if (which == "relu") {
      // Keep entries away from the kink.
      MatD x = random_matrix(rng, r, c);
      for (Eigen::Index j = 0; j < x.size(); ++j)
        x.data()[j] = static_cast<float>(x.data()[j] + (x.data()[j] >= 0 ? 0.05 : -0.05));
      out.push_back(make_case(which, {x}, [](Tape& t, const Inputs& in) { return ad::relu(t, in[0]); },
                              [](const RefInputs& in) -> MatD { return in[0].cwiseMax(0.0); }));
    } else if (which == "layer_norm") {
      out.push_back(make_case(
          which, {random_matrix(rng, r, c + 1, -2.0, 2.0), random_matrix(rng, 1, c + 1), random_matrix(rng, 1, c + 1)},
          [](Tape& t, const Inputs& x) { return ad::layer_norm(t, x[0], x[1], x[2]); },
          [](const RefInputs& x) { return ref_layer_norm(x[0], x[1], x[2], static_cast<double>(1e-5f)); }));
    } else if (which == "softmax") {
      MatrixF mask = MatrixF::Zero(r, c);
      for (int row = 0; row < r; ++row)
        for (int col = 1; col < c; ++col)
          if (std::bernoulli_distribution(0.3)(rng)) mask(row, col) = -std::numeric_limits<float>::infinity();
      out.push_back(make_case(which, {random_matrix(rng, r, c, -3.0, 3.0)},
                              [mask](Tape& t, const Inputs& x) { return ad::softmax(t, x[0], &mask); },
                              [mask](const RefInputs& x) -> MatD { return ref_softmax_rows(x[0] + to_double(mask)); }));
    } else if (which == "sum") {
      out.push_back(make_case(which, {random_matrix(rng, r, c)}, [](Tape& t, const Inputs& x) { return ad::sum(t, x[0]); },
                              [](const RefInputs& x) { return scalar(x[0].sum()); }));
    } else if (which == "dropout") {
      const float rate = std::uniform_real_distribution<float>(0.1f, 0.6f)(rng);
      const std::uint64_t seed = rng();
      // The reference replays the same mask by running the op on a ones matrix.
      std::mt19937_64 probe(seed);
      Tape pt;
      const MatrixF mask = ad::dropout(pt, pt.constant(MatrixF::Ones(r, c)), rate, probe).value();
      out.push_back(make_case(which, {random_matrix(rng, r, c)},
                              [rate, seed](Tape& t, const Inputs& x) {
                                std::mt19937_64 g(seed);
                                return ad::dropout(t, x[0], rate, g);
                              },
                              [mask](const RefInputs& x) -> MatD { return x[0].cwiseProduct(to_double(mask)); }));
    } else if (which == "attention") {
      const int heads = 1 + i % 2;
      const int lq = r, lk = k, dh = 2 * heads, dv = 2 * heads;
      MatrixF mask = MatrixF::Zero(lq, lk);
      for (int a = 0; a < lq; ++a)
        for (int b = 1; b < lk; ++b)
          if (std::bernoulli_distribution(0.25)(rng)) mask(a, b) = -std::numeric_limits<float>::infinity();
      out.push_back(make_case(
          which, {random_matrix(rng, lq, dh), random_matrix(rng, lk, dh), random_matrix(rng, lk, dv)},
          [mask, heads](Tape& t, const Inputs& x) { return ad::scaled_dot_attention(t, x[0], x[1], x[2], mask, heads); },
          [mask, heads](const RefInputs& x) { return ref_attention(x[0], x[1], x[2], to_double(mask), heads); }));
    } else if (which == "attention_segments") {
      // Two packed samples with invalid keys in the second.
      const int heads = 2, d = 4;
      const int q1 = 2, q2 = 3, k1 = 3, k2 = 4;
      ad::AttentionLayout layout;
      layout.heads = heads;
      layout.segments = {{0, q1, 0, k1}, {q1, q2, k1, k2}};
      layout.key_valid = {1, 1, 1, 1, 0, 1, static_cast<std::uint8_t>(i % 2)};
      out.push_back(make_case(
          which, {random_matrix(rng, q1 + q2, d), random_matrix(rng, k1 + k2, d), random_matrix(rng, k1 + k2, d)},
          [layout](Tape& t, const Inputs& x) { return ad::scaled_dot_attention(t, x[0], x[1], x[2], layout); },
          [layout, heads](const RefInputs& x) -> MatD {
            MatD o = MatD::Zero(x[0].rows(), x[2].cols());
            for (const auto& s : layout.segments) {
              MatD mask = MatD::Zero(s.q_len, s.k_len);
              for (Eigen::Index j = 0; j < s.k_len; ++j)
                if (!layout.key_valid[static_cast<std::size_t>(s.k_begin + j)])
                  mask.col(j).setConstant(-std::numeric_limits<double>::infinity());
              o.middleRows(s.q_begin, s.q_len) =
                  ref_attention(x[0].middleRows(s.q_begin, s.q_len), x[1].middleRows(s.k_begin, s.k_len),
                                x[2].middleRows(s.k_begin, s.k_len), mask, heads);
            }
            return o;
          }));
    } else if (which == "cross_entropy") {
      std::vector<int> targets(static_cast<std::size_t>(r));
      for (auto& y : targets) y = std::uniform_int_distribution<int>(-1, c - 1)(rng);
      targets[0] = c - 1;
      out.push_back(make_case(which, {random_matrix(rng, r, c, -3.0, 3.0)},
                              [targets](Tape& t, const Inputs& x) { return ad::cross_entropy(t, x[0], targets); },
                              [targets](const RefInputs& x) {
                                double total = 0.0;
                                for (std::size_t row = 0; row < targets.size(); ++row) {
                                  if (targets[row] < 0) continue;
                                  const auto z = x[0].row(static_cast<Eigen::Index>(row));
                                  total += std::log(z.array().exp().sum()) - z(targets[row]);
                                }
                                return scalar(total);
                              }));
    } else if (which == "bce_with_logits") {
      std::vector<int> targets(static_cast<std::size_t>(r));
      for (auto& y : targets) y = std::uniform_int_distribution<int>(-1, 1)(rng);
      targets[0] = 1;
      out.push_back(make_case(which, {random_matrix(rng, r, 1, -4.0, 4.0)},
                              [targets](Tape& t, const Inputs& x) { return ad::bce_with_logits(t, x[0], targets); },
                              [targets](const RefInputs& x) {
                                double total = 0.0;
                                for (std::size_t row = 0; row < targets.size(); ++row) {
                                  if (targets[row] < 0) continue;
                                  const double z = x[0](static_cast<Eigen::Index>(row), 0);
                                  const double p = 1.0 / (1.0 + std::exp(-z));
                                  total -= targets[row] ? std::log(p) : std::log(1.0 - p);
                                }
                                return scalar(total);
                              }));
    }
  }
  return out;
}

}  // namespace

GradResult check_gradient(const GradCase& c, std::mt19937_64& rng) {
  GradResult res;
  res.name = c.name;
  res.instances = 1;
  Tape tape;
  std::vector<Tensor> leaves;
  for (std::size_t i = 0; i < c.inputs.size(); ++i)
    leaves.push_back(Tensor::leaf(c.inputs[i].cast<float>(), c.differentiable[i]));
  Tensor y = c.op(tape, leaves);
  const MatD ref_y = c.reference(c.inputs);
  res.max_forward_error = relative_error(to_double(y.value()), ref_y);

  const MatD w = random_matrix(rng, ref_y.rows(), ref_y.cols());
  Tensor loss = weighted_sum(tape, y, w.cast<float>());
  ad::backward(tape, loss);

  auto objective = [&](const std::vector<MatD>& x) { return (c.reference(x).array() * w.array()).sum(); };
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    if (!c.differentiable[i]) continue;
    std::vector<MatD> x = c.inputs;
    MatD numeric(x[i].rows(), x[i].cols());
    for (Eigen::Index j = 0; j < x[i].size(); ++j) {
      const double x0 = x[i].data()[j];
      const double h = 1e-6 * std::max(1.0, std::abs(x0));
      x[i].data()[j] = x0 + h;
      const double fp = objective(x);
      x[i].data()[j] = x0 - h;
      const double fm = objective(x);
      x[i].data()[j] = x0;
      numeric.data()[j] = (fp - fm) / (2.0 * h);
    }
    res.max_gradient_error = std::max(res.max_gradient_error, relative_error(to_double(leaves[i].grad()), numeric));
  }
  return res;
}

std::vector<std::vector<GradCase>> gradient_suite(std::uint64_t seed, int instances) {
  static const char* kPrimitives[] = {"matmul",    "add",           "add_broadcast",   "scale",     "concat_rows",
                                      "concat_cols", "slice",       "transpose",       "embedding_lookup",
                                      "relu",      "layer_norm",    "softmax",         "sum",       "dropout",
                                      "attention", "attention_segments", "cross_entropy", "bce_with_logits"};
  std::mt19937_64 rng(seed);
  std::vector<std::vector<GradCase>> out;
  for (const char* p : kPrimitives) out.push_back(instances_of(p, rng, instances));
  return out;
}

std::vector<GradResult> run_gradient_suite(std::uint64_t seed, int instances) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<GradResult> out;
  for (const auto& group : gradient_suite(seed, instances)) {
    GradResult agg;
    agg.name = group.front().name;
    for (const auto& c : group) {
      const auto r = check_gradient(c, rng);
      ++agg.instances;
      agg.max_forward_error = std::max(agg.max_forward_error, r.max_forward_error);
      agg.max_gradient_error = std::max(agg.max_gradient_error, r.max_gradient_error);
    }
    out.push_back(agg);
  }
  return out;
}

}  // namespace vqa::oracle
