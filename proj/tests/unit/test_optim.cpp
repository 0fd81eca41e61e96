#include "vqa/optim.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <limits>

using namespace vqa;
using namespace vqa::ad;

TEST(AdamW, FirstStepMovesByLearningRate) {
  Matrix p = Matrix::Ones(1, 1), g = Matrix::Ones(1, 1), m = Matrix::Zero(1, 1), v = Matrix::Zero(1, 1);
  adamw_update(p, g, m, v, 1, 0.1f, 0.0f, 0.9f, 0.999f, 1e-8f);
  EXPECT_NEAR(p(0, 0), 0.9f, 1e-6f);
  EXPECT_NEAR(m(0, 0), 0.1f, 1e-7f);
  EXPECT_NEAR(v(0, 0), 0.001f, 1e-7f);
}

TEST(AdamW, DecayIsDecoupled) {
  Matrix p = Matrix::Ones(1, 1), g = Matrix::Ones(1, 1), m = Matrix::Zero(1, 1), v = Matrix::Zero(1, 1);
  adamw_update(p, g, m, v, 1, 0.1f, 0.01f, 0.9f, 0.999f, 1e-8f);
  EXPECT_NEAR(p(0, 0), 0.999f - 0.1f, 1e-6f);
  // Zero gradient: only the decay acts.
  Matrix q = Matrix::Constant(1, 1, 2.0f), z = Matrix::Zero(1, 1), m2 = Matrix::Zero(1, 1), v2 = Matrix::Zero(1, 1);
  adamw_update(q, z, m2, v2, 1, 0.1f, 0.5f, 0.9f, 0.999f, 1e-8f);
  EXPECT_FLOAT_EQ(q(0, 0), 2.0f * 0.95f);
}

TEST(AdamW, NonFiniteGradientNamesParameterAndLeavesStateAlone) {
  ParameterSet ps;
  ps.create("encoder.w", Matrix::Ones(2, 2));
  ps.create("head.b", Matrix::Ones(1, 2));
  auto state = AdamWState::for_parameters(ps);
  Tape t;
  Matrix bad = Matrix::Ones(1, 2);
  bad(0, 1) = std::numeric_limits<float>::infinity();
  ps.get("head.b").node()->accumulate(bad);
  ps.get("head.b").node()->requires_grad = true;
  try {
    adamw_step(ps, state, 0.1f, 0.0f);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head.b"), std::string::npos);
  }
  EXPECT_EQ(state.step, 0);
  EXPECT_EQ(ps.get("encoder.w").value(), Matrix::Ones(2, 2));
}

TEST(AdamW, StepUpdatesOnlyReachedParameters) {
  ParameterSet ps;
  ps.create("a", Matrix::Ones(1, 3));
  ps.create("b", Matrix::Ones(1, 3));
  auto state = AdamWState::for_parameters(ps);
  Tape t;
  backward(t, sum(t, ps.get("a")));
  adamw_step(ps, state, 0.01f, 0.0f);
  EXPECT_EQ(state.step, 1);
  EXPECT_TRUE(ps.get("a").value().isApprox(Matrix::Constant(1, 3, 0.99f)));
  EXPECT_EQ(ps.get("b").value(), Matrix::Ones(1, 3));
}

TEST(Schedule, WarmupAndMilestones) {
  LrSchedule s;
  EXPECT_DOUBLE_EQ(lr_at(s, 0, 0), 0.0);
  EXPECT_NEAR(lr_at(s, 5000, 10), 5e-5, 1e-15);
  EXPECT_NEAR(lr_at(s, 20000, 29), 1e-4, 1e-15);
  EXPECT_NEAR(lr_at(s, 20000, 30), 1e-5, 1e-15);
  EXPECT_NEAR(lr_at(s, 20000, 31), 1e-5, 1e-15);
  EXPECT_NEAR(lr_at(s, 20000, 36), 1e-6, 1e-15);
  s.warmup_iterations = 0;
  EXPECT_DOUBLE_EQ(lr_at(s, 0, 0), 1e-4);
}

TEST(Checkpoint, RoundTripRestoresEverything) {
  ParameterSet ps;
  ps.create("w", Matrix::Random(3, 4));
  ps.create("b", Matrix::Random(1, 4));
  auto state = AdamWState::for_parameters(ps);
  Tape t;
  backward(t, sum(t, matmul(t, t.constant(Matrix::Ones(2, 3)), ps.get("w"))));
  adamw_step(ps, state, 0.01f, 1e-4f);
  const auto ckpt = make_checkpoint(ps, state, 17, 2, "rng-state", R"({"k": 1})");
  const auto path = std::filesystem::temp_directory_path() / "vqa_ckpt_roundtrip.ckpt";
  save_checkpoint(ckpt, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.names, ckpt.names);
  EXPECT_EQ(back.iteration, 17);
  EXPECT_EQ(back.epoch, 2);
  EXPECT_EQ(back.rng_state, "rng-state");
  EXPECT_EQ(back.metadata, R"({"k": 1})");
  EXPECT_EQ(back.optimizer.step, 1);
  ASSERT_EQ(back.optimizer.first_moment.size(), 2u);
  EXPECT_EQ(back.optimizer.second_moment[0], state.second_moment[0]);

  ParameterSet fresh;
  fresh.create("w", Matrix::Zero(3, 4));
  fresh.create("b", Matrix::Zero(1, 4));
  restore_parameters(fresh, back);
  EXPECT_EQ(fresh.checksum(), ps.checksum());

  ParameterSet wrong;
  wrong.create("w", Matrix::Zero(4, 4));
  wrong.create("b", Matrix::Zero(1, 4));
  EXPECT_THROW(restore_parameters(wrong, back), ShapeError);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
}
