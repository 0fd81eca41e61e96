#pragma once

#include "vqa/autodiff.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vqa::ad {

struct AdamWState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  long step = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;

  /// Allocates zero moments matching `params`.
  static AdamWState for_parameters(const ParameterSet& params);
};

/// One decoupled-weight-decay Adam update of a single tensor. `step` is the
/// 1-based step count used for bias correction.
void adamw_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long step, float lr, float weight_decay,
                  float beta1, float beta2, float epsilon);

/// Updates every parameter from its accumulated gradient (zero when none
/// reached it) and increments the step counter. Throws NumericError naming the
/// first parameter with a non-finite gradient; nothing is modified in that case.
void adamw_step(ParameterSet& params, AdamWState& state, float lr, float weight_decay);

/// Linear warmup from 0 to base_lr over warmup_iterations, then step decay by
/// decay_factor at each listed epoch (applied once epoch >= milestone).
struct LrSchedule {
  double base_lr = 1e-4;
  long warmup_iterations = 10000;
  std::vector<int> decay_epochs{30, 35};
  double decay_factor = 0.1;
  long iterations_per_epoch = 1;
};

double lr_at(const LrSchedule& schedule, long iteration, int epoch);

/// Everything needed to resume a serial run bit-exactly.
struct Checkpoint {
  std::vector<std::string> names;
  std::vector<Matrix> values;
  AdamWState optimizer;
  long iteration = 0;
  int epoch = 0;
  std::string rng_state;
  std::string metadata;  // free-form JSON (config, adapter plan)
};

Checkpoint make_checkpoint(const ParameterSet& params, const AdamWState& state, long iteration, int epoch,
                           std::string rng_state, std::string metadata);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint values into `params` by name; throws ShapeError/ConfigError on mismatch.
void restore_parameters(ParameterSet& params, const Checkpoint& ckpt);

}  // namespace vqa::ad
