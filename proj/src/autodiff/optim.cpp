#include "vqa/optim.hpp"

#include "vqa/binary_io.hpp"

#include <cmath>
#include <fstream>

namespace vqa::ad {

AdamWState AdamWState::for_parameters(const ParameterSet& params) {
  AdamWState s;
  for (const auto& p : params) {
    s.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    s.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

void adamw_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long step, float lr, float weight_decay,
                  float beta1, float beta2, float epsilon) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols() || m.rows() != param.rows() ||
      m.cols() != param.cols() || v.rows() != param.rows() || v.cols() != param.cols())
    throw ShapeError("adamw: parameter " + shape_string(param.rows(), param.cols()) + " and gradient " +
                     shape_string(grad.rows(), grad.cols()) + " or moments are misaligned");
  param *= 1.0f - lr * weight_decay;
  m = beta1 * m + (1.0f - beta1) * grad;
  v = beta2 * v + (1.0f - beta2) * grad.cwiseAbs2();
  const float c1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(beta1), static_cast<double>(step)));
  const float c2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(beta2), static_cast<double>(step)));
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon);
}

void adamw_step(ParameterSet& params, AdamWState& state, float lr, float weight_decay) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw ShapeError("adamw: optimizer state holds " + std::to_string(state.first_moment.size()) + " moments for " +
                     std::to_string(params.size()) + " parameters");
  for (const auto& p : params)
    if (p.has_grad() && !all_finite(p.grad()))
      throw NumericError("non-finite gradient for parameter '" + p.name() + "'");
  const long step = state.step + 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Matrix g = p.grad();
    adamw_update(p.mutable_value(), g, state.first_moment[i], state.second_moment[i], step, lr, weight_decay,
                 state.beta1, state.beta2, state.epsilon);
  }
  state.step = step;
}

double lr_at(const LrSchedule& s, long iteration, int epoch) {
  double lr = s.base_lr;
  if (s.warmup_iterations > 0 && iteration < s.warmup_iterations)
    lr *= static_cast<double>(iteration) / static_cast<double>(s.warmup_iterations);
  for (int milestone : s.decay_epochs)
    if (epoch >= milestone) lr *= s.decay_factor;
  return lr;
}

Checkpoint make_checkpoint(const ParameterSet& params, const AdamWState& state, long iteration, int epoch,
                           std::string rng_state, std::string metadata) {
  Checkpoint c;
  for (const auto& p : params) {
    c.names.push_back(p.name());
    c.values.push_back(p.value());
  }
  c.optimizer = state;
  c.iteration = iteration;
  c.epoch = epoch;
  c.rng_state = std::move(rng_state);
  c.metadata = std::move(metadata);
  return c;
}

namespace {

void write_matrix(std::ostream& out, const Matrix& m) {
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) io::write_le<float>(out, m.data()[i]);
}

Matrix read_matrix(std::istream& in) {
  std::uint32_t r = 0, c = 0;
  if (!io::read_le(in, r) || !io::read_le(in, c)) throw DataError("truncated checkpoint tensor header");
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (!io::read_le(in, m.data()[i])) throw DataError("truncated checkpoint tensor payload");
  return m;
}

constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    out.write("VQCK", 4);
    io::write_le<std::uint16_t>(out, kCheckpointVersion);
    io::write_string(out, c.metadata);
    io::write_le<std::int64_t>(out, c.iteration);
    io::write_le<std::int32_t>(out, c.epoch);
    io::write_string(out, c.rng_state);
    io::write_le<std::int64_t>(out, c.optimizer.step);
    io::write_le<float>(out, c.optimizer.beta1);
    io::write_le<float>(out, c.optimizer.beta2);
    io::write_le<float>(out, c.optimizer.epsilon);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.names.size()));
    const bool has_moments = c.optimizer.first_moment.size() == c.names.size();
    io::write_le<std::uint8_t>(out, has_moments ? 1 : 0);
    for (std::size_t i = 0; i < c.names.size(); ++i) {
      io::write_string(out, c.names[i]);
      write_matrix(out, c.values[i]);
      if (has_moments) {
        write_matrix(out, c.optimizer.first_moment[i]);
        write_matrix(out, c.optimizer.second_moment[i]);
      }
    }
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "VQCK")
    throw DataError("'" + path.string() + "' is not a checkpoint");
  std::uint16_t version = 0;
  if (!io::read_le(in, version) || version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  std::int64_t iteration = 0, step = 0;
  std::int32_t epoch = 0;
  std::uint32_t count = 0;
  std::uint8_t has_moments = 0;
  if (!io::read_string(in, c.metadata) || !io::read_le(in, iteration) || !io::read_le(in, epoch) ||
      !io::read_string(in, c.rng_state) || !io::read_le(in, step) || !io::read_le(in, c.optimizer.beta1) ||
      !io::read_le(in, c.optimizer.beta2) || !io::read_le(in, c.optimizer.epsilon) || !io::read_le(in, count) ||
      !io::read_le(in, has_moments))
    throw DataError("truncated checkpoint header");
  c.iteration = iteration;
  c.epoch = epoch;
  c.optimizer.step = step;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    if (!io::read_string(in, name)) throw DataError("truncated checkpoint parameter name");
    c.names.push_back(std::move(name));
    c.values.push_back(read_matrix(in));
    if (has_moments) {
      c.optimizer.first_moment.push_back(read_matrix(in));
      c.optimizer.second_moment.push_back(read_matrix(in));
    }
  }
  return c;
}

void restore_parameters(ParameterSet& params, const Checkpoint& ckpt) {
  if (ckpt.names.size() != params.size())
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.names.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    Tensor& p = params.get(ckpt.names[i]);
    if (p.rows() != ckpt.values[i].rows() || p.cols() != ckpt.values[i].cols())
      throw ShapeError("checkpoint parameter '" + ckpt.names[i] + "' has shape " +
                       shape_string(ckpt.values[i].rows(), ckpt.values[i].cols()) + ", model expects " +
                       shape_string(p.rows(), p.cols()));
    p.mutable_value() = ckpt.values[i];
  }
}

}  // namespace vqa::ad
