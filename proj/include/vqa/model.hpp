#pragma once

#include "vqa/adapter.hpp"
#include "vqa/autodiff.hpp"
#include "vqa/question.hpp"

#include <nlohmann/json.hpp>

#include <random>
#include <string>
#include <vector>

namespace vqa::model {

using ad::Tape;
using ad::Tensor;
using question::Answer;
using question::AnswerType;

inline constexpr int kTypeClasses = question::kAnswerTypeCount;
inline constexpr int kCountClasses = question::kCountClasses;
inline constexpr int kAttributeClasses = scene::AttributeVocabulary::kAnswerCount;

struct ReasoningConfig {
  int d_model = 128;
  int encoder_layers = 3;
  int decoder_layers = 3;
  int heads = 4;
  int ffn_dim = 512;
  int queries = 1;
  float dropout = 0.1f;
  std::string activation = "relu";
  /// Index-based positional embeddings on object tokens (off: OBJ tokens carry none).
  bool object_positions = false;
  int max_text_len = 64;
  /// Side of the largest grid the positional table covers.
  int max_grid = 16;

  /// Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const ReasoningConfig& c);
void from_json(const nlohmann::json& j, ReasoningConfig& c);

/// One (question, image) pair as seen by the model.
struct SampleView {
  const MatrixF* text = nullptr;              // N_q x d_text
  const adapter::TokenSequence* visual = nullptr;  // N_v x d
};

/// Samples packed row-wise so a batch runs as a few large matrix products.
struct Batch {
  MatrixF text;    // sum N_q x d_text
  MatrixF visual;  // sum N_v x d
  std::vector<int> text_len;
  std::vector<int> visual_len;
  std::vector<adapter::GridCoord> visual_coords;  // one per visual row; {-1,-1} when none
  std::vector<std::uint8_t> visual_valid;         // one per visual row

  int size() const { return static_cast<int>(text_len.size()); }
};

Batch make_batch(const std::vector<SampleView>& samples);

/// Fused [Q; V] sequence for every sample, rows contiguous per sample.
struct FusedInput {
  Tensor tokens;
  std::vector<std::uint8_t> key_valid;
  std::vector<ad::AttentionSegment> segments;  // q == k range per sample
};

struct ForwardOutput {
  Tensor type;       // B x 3
  Tensor binary;     // B x 1
  Tensor count;      // B x 11
  Tensor attribute;  // B x 15
  std::vector<Tensor> encoder_states;  // after projection, then after each layer
};

/// Head outputs as plain values.
struct PredictionBundle {
  MatrixF type;
  MatrixF binary;
  MatrixF count;
  MatrixF attribute;

  int size() const { return static_cast<int>(type.rows()); }
};

struct LossBundle {
  Tensor type;
  Tensor binary;
  Tensor count;
  Tensor attribute;
  Tensor total;  // (L_t + L_b + L_cnt + L_attr) / B
};

class ReasoningModel {
 public:
  ReasoningModel(const ReasoningConfig& config, int d_text, int d_visual, std::uint64_t seed);

  const ReasoningConfig& config() const { return config_; }
  int d_text() const { return d_text_; }
  int d_visual() const { return d_visual_; }
  ad::ParameterSet& parameters() { return params_; }
  const ad::ParameterSet& parameters() const { return params_; }

  /// Projection, segment and positional embeddings; throws ShapeError on width mismatch.
  FusedInput project_inputs(Tape& tape, const Batch& batch) const;
  /// `rng` drives dropout and is required when `training` is true.
  ForwardOutput forward(Tape& tape, const Batch& batch, bool training, std::mt19937_64* rng) const;
  /// Inference (no dropout, no gradients kept).
  PredictionBundle predict(const Batch& batch) const;

 private:
  Tensor param(const std::string& name) const { return params_.get(name); }
  Tensor linear(Tape& t, const Tensor& x, const std::string& prefix) const;
  Tensor attention_block(Tape& t, const Tensor& xq, const Tensor& xkv, const std::string& prefix,
                         const ad::AttentionLayout& layout) const;
  Tensor feed_forward(Tape& t, const Tensor& x, const std::string& prefix, bool training,
                      std::mt19937_64* rng) const;
  Tensor maybe_dropout(Tape& t, const Tensor& x, bool training, std::mt19937_64* rng) const;

  ReasoningConfig config_;
  int d_text_;
  int d_visual_;
  ad::ParameterSet params_;
};

/// Per-sample active-head masking; throws DataError if an answer is out of range.
LossBundle compute_loss(Tape& tape, const ForwardOutput& out, const std::vector<Answer>& truth);

/// argmax(type) with smallest-index ties, then the matching head; binary uses logit > 0.
Answer predict_answer(const PredictionBundle& bundle, int row);

PredictionBundle to_bundle(const ForwardOutput& out);

}  // namespace vqa::model
