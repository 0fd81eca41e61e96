#pragma once

#include "vqa/adapter.hpp"
#include "vqa/model.hpp"
#include "vqa/question.hpp"
#include "vqa/scene.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace vqa::harness {

// ---------------------------------------------------------------------------
// Experiment configuration (JSON)
// ---------------------------------------------------------------------------

struct DatasetConfig {
  int train_scenes = 2000;
  int val_scenes = 500;
  int questions_per_scene = 10;
  std::uint64_t seed = 0;
  int min_objects = 3;
  int max_objects = scene::kMaxObjects;
  /// Optional ingestion of official-format files instead of generation.
  std::string scenes_path;
  std::string questions_path;
};

struct EncoderConfig {
  std::string profile = "gt";
  /// VQFS store keyed by scene id; empty = built-in encoder for the profile.
  std::string store;
  int raster_size = 96;
};

struct TextConfig {
  int dim = 64;
  std::uint64_t seed = 1234;
  /// VQFS store of precomputed question embeddings keyed by question id.
  std::string store;
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  long warmup_iterations = 10000;
  std::vector<int> decay_epochs{30, 35};
  double decay_factor = 0.1;
  int log_interval = 100;
  /// Fraction of training scenes kept, in (0, 1].
  double fraction = 1.0;
  /// Validation pass every n epochs (the last epoch is always evaluated).
  int eval_every = 1;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig data;
  EncoderConfig encoder;
  TextConfig text;
  adapter::MemoryRegime regime;
  model::ReasoningConfig model;
  TrainConfig train;
  std::vector<double> sweep_fractions{0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
  /// Model init, shuffling and dropout.
  std::uint64_t seed = 0;
  bool serial = false;
  std::string out = "runs/experiment";

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Worker count from VQA_THREADS (default 1); always 1 in serial mode.
int thread_count(bool serial);
/// Runs fn(i) for i in [0, n) on `threads` workers. Results must not depend on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Built-in encoders
// ---------------------------------------------------------------------------

/// Native tokens for a built-in profile ("gt", "raw", "raw192"), plus validity.
struct NativeFeatures {
  MatrixF tokens;
  std::vector<std::uint8_t> valid;
};
NativeFeatures encode_builtin(const std::string& profile, const scene::Scene& scene, int raster_size = 96);
bool is_builtin(const std::string& profile);

/// Cuts an H x W x 3 image into a g x g grid of flattened (y, x, c) patches.
MatrixF image_patches(const scene::Image& image, int grid);

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct FrozenChecksums {
  std::uint64_t visual = 0;
  std::uint64_t text = 0;
  std::uint64_t pca = 0;
  bool operator==(const FrozenChecksums&) const = default;
};

struct Dataset {
  std::vector<scene::Scene> scenes;
  std::vector<question::Question> questions;
  std::vector<std::size_t> question_scene;     // question -> scene slot
  std::vector<adapter::TokenSequence> visual;  // adapted, one per scene slot
  std::vector<MatrixF> text;                   // one per question
  MatrixF text_table;                          // frozen embedding table (empty with a text store)

  std::vector<std::int64_t> train_scene_ids;  // kept after the fraction cut
  std::vector<std::int64_t> all_train_scene_ids;
  std::vector<std::int64_t> val_scene_ids;
  std::vector<std::int64_t> pca_fit_scene_ids;
  std::vector<std::size_t> train_examples;  // question indices
  std::vector<std::size_t> val_examples;

  adapter::AdapterPlan plan;
  std::optional<adapter::PCAModel<double>> pca;

  FrozenChecksums checksums() const;
  int d_text() const { return text.empty() ? 0 : static_cast<int>(text.front().cols()); }
  int d_visual() const { return plan.dim; }
};

/// Scenes (generated or loaded), seeded split, fraction cut, PCA fit on kept train scenes only.
Dataset build_dataset(const ExperimentConfig& config);

/// Scenes + questions exactly as build_dataset would create them (no features).
struct RawData {
  std::vector<scene::Scene> scenes;
  std::vector<question::Question> questions;
  std::vector<std::int64_t> train_scene_ids;
  std::vector<std::int64_t> val_scene_ids;
};
RawData build_raw_data(const DatasetConfig& data, const adapter::MemoryRegime& regime);

/// Number of scenes kept for fraction f: round(f * n).
int kept_scene_count(double fraction, int n);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Tally {
  long correct = 0;
  long total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  bool operator==(const Tally&) const = default;
};

struct CurvePoint {
  long iteration = 0;
  int epoch = 0;
  double train_loss = 0.0;
  /// NaN when no validation pass happened at this point.
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct MetricsReport {
  Tally overall;
  std::array<Tally, question::kFamilyCount> families{};
  Tally answer_type;
  std::vector<CurvePoint> curve;

  double family_accuracy(question::QuestionFamily f) const { return families[static_cast<std::size_t>(f)].accuracy(); }
  /// Question-weighted mean of the family accuracies.
  double weighted_family_mean() const;
};

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::vector<question::Answer> predict(const Dataset& data, const std::vector<std::size_t>& questions) const = 0;
};

/// Returns the stored ground-truth answers.
class OraclePredictor : public Predictor {
 public:
  std::vector<question::Answer> predict(const Dataset& data, const std::vector<std::size_t>& questions) const override;
};

class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const model::ReasoningModel& model, int batch_size, int threads)
      : model_(model), batch_size_(batch_size), threads_(threads) {}
  std::vector<question::Answer> predict(const Dataset& data, const std::vector<std::size_t>& questions) const override;
  /// Mean total loss (no dropout) over the given questions.
  double mean_loss(const Dataset& data, const std::vector<std::size_t>& questions) const;

 private:
  const model::ReasoningModel& model_;
  int batch_size_;
  int threads_;
};

MetricsReport evaluate(const Predictor& predictor, const Dataset& data, const std::vector<std::size_t>& questions);

model::Batch make_batch(const Dataset& data, const std::vector<std::size_t>& questions, std::size_t begin,
                        std::size_t end);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  MetricsReport report;  // final weights on the validation split
  FrozenChecksums before;
  FrozenChecksums after;
  int best_epoch = -1;
  double best_accuracy = 0.0;
  long iterations = 0;
  std::size_t disconnected_parameters = 0;
};

/// Progress lines go to `log` when set.
using LogFn = std::function<void(const std::string&)>;

/// Trains `model` on data.train_examples. Writes best.ckpt / final.ckpt into
/// `out_dir` when it is non-empty. Throws NumericError on a non-finite loss.
TrainResult train(const ExperimentConfig& config, const Dataset& data, model::ReasoningModel& model,
                  const std::filesystem::path& out_dir = {}, const LogFn& log = {});

/// build_dataset + fresh model + train; writes config.json, metrics.json,
/// curve.csv and the checkpoints into config.out.
TrainResult run_experiment(const ExperimentConfig& config, const LogFn& log = {});

struct SweepPoint {
  double fraction = 0.0;
  int train_scenes = 0;
  MetricsReport report;
};

/// One independent run per fraction under <out>/fraction_<f>; writes <out>/sweep.json.
std::vector<SweepPoint> fewshot_sweep(const ExperimentConfig& config, const std::vector<double>& fractions,
                                      const LogFn& log = {});

nlohmann::json sweep_to_json(const std::vector<SweepPoint>& points);
std::vector<SweepPoint> sweep_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct TableRow {
  std::string label;
  MetricsReport metrics;
};

std::string table_csv(const std::vector<TableRow>& rows);
/// Parses table_csv output back into per-row tallies (curves are not part of the table).
std::vector<TableRow> parse_table_csv(const std::string& csv);
std::string table_text(const std::vector<TableRow>& rows);
std::string curve_csv(const std::vector<CurvePoint>& curve);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

/// Emits table.csv, table.txt, curve.csv, loss.svg (runs) or fewshot.csv,
/// fewshot.svg (sweeps) into `dir`. Returns the files written.
std::vector<std::filesystem::path> report(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace vqa::harness
