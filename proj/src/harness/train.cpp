#include "vqa/harness.hpp"
#include "vqa/optim.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace vqa::harness {

using ad::Matrix;
using question::Answer;
using nlohmann::json;

model::Batch make_batch(const Dataset& data, const std::vector<std::size_t>& questions, std::size_t begin,
                        std::size_t end) {
  std::vector<model::SampleView> views;
  views.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t q = questions[i];
    views.push_back({&data.text[q], &data.visual[data.question_scene[q]]});
  }
  return model::make_batch(views);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

double MetricsReport::weighted_family_mean() const {
  double num = 0.0;
  long den = 0;
  for (const auto& f : families) {
    num += f.accuracy() * static_cast<double>(f.total);
    den += f.total;
  }
  return den == 0 ? 0.0 : num / static_cast<double>(den);
}

std::vector<Answer> OraclePredictor::predict(const Dataset& data, const std::vector<std::size_t>& questions) const {
  std::vector<Answer> out;
  out.reserve(questions.size());
  for (std::size_t q : questions) out.push_back(data.questions[q].answer);
  return out;
}

namespace {

template <typename Fn>
void for_each_chunk(std::size_t n, int batch, int threads, Fn&& fn) {
  const std::size_t chunks = (n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t b = c * static_cast<std::size_t>(batch);
    fn(c, b, std::min(n, b + static_cast<std::size_t>(batch)));
  });
}

}  // namespace

std::vector<Answer> ModelPredictor::predict(const Dataset& data, const std::vector<std::size_t>& questions) const {
  std::vector<Answer> out(questions.size());
  for_each_chunk(questions.size(), batch_size_, threads_, [&](std::size_t, std::size_t b, std::size_t e) {
    const auto bundle = model_.predict(make_batch(data, questions, b, e));
    for (std::size_t i = b; i < e; ++i) out[i] = model::predict_answer(bundle, static_cast<int>(i - b));
  });
  return out;
}

double ModelPredictor::mean_loss(const Dataset& data, const std::vector<std::size_t>& questions) const {
  if (questions.empty()) return 0.0;
  const std::size_t chunks = (questions.size() + static_cast<std::size_t>(batch_size_) - 1) / batch_size_;
  std::vector<double> sums(chunks, 0.0);
  for_each_chunk(questions.size(), batch_size_, threads_, [&](std::size_t c, std::size_t b, std::size_t e) {
    ad::Tape t;
    auto out = model_.forward(t, make_batch(data, questions, b, e), false, nullptr);
    std::vector<Answer> truth;
    for (std::size_t i = b; i < e; ++i) truth.push_back(data.questions[questions[i]].answer);
    sums[c] = static_cast<double>(model::compute_loss(t, out, truth).total.item()) * static_cast<double>(e - b);
  });
  // Fixed summation order keeps the value independent of the thread count.
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(questions.size());
}

MetricsReport evaluate(const Predictor& predictor, const Dataset& data, const std::vector<std::size_t>& questions) {
  MetricsReport m;
  const auto predicted = predictor.predict(data, questions);
  if (predicted.size() != questions.size()) throw Error("predictor returned the wrong number of answers");
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = data.questions[questions[i]];
    const bool ok = predicted[i] == q.answer;
    auto& fam = m.families[static_cast<std::size_t>(q.family)];
    fam.total += 1;
    fam.correct += ok ? 1 : 0;
    m.overall.total += 1;
    m.overall.correct += ok ? 1 : 0;
    m.answer_type.total += 1;
    m.answer_type.correct += predicted[i].type == q.answer.type ? 1 : 0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

}  // namespace

TrainResult train(const ExperimentConfig& config, const Dataset& data, model::ReasoningModel& model,
                  const std::filesystem::path& out_dir, const LogFn& log) {
  const auto& tc = config.train;
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  TrainResult result;
  result.before = data.checksums();
  const int threads = thread_count(config.serial);
  ModelPredictor predictor(model, 256, threads);

  auto& params = model.parameters();
  ad::AdamWState opt = ad::AdamWState::for_parameters(params);
  std::mt19937_64 rng(question::derive_seed(config.seed, 0x7a11));
  const std::size_t n = data.train_examples.size();
  const long per_epoch = static_cast<long>((n + tc.batch_size - 1) / tc.batch_size);
  ad::LrSchedule schedule{tc.lr, tc.warmup_iterations, tc.decay_epochs, tc.decay_factor, per_epoch};

  json meta = {{"config", to_json(config)},
               {"plan", {{"tokens", data.plan.tokens}, {"dim", data.plan.dim}, {"pooled_grid", data.plan.pooled_grid},
                         {"native_tokens", data.plan.native.tokens}, {"native_dim", data.plan.native.dim}}}};
  std::vector<Matrix> best_values;
  auto snapshot = [&] {
    std::vector<Matrix> v;
    for (const auto& p : params) v.push_back(p.value());
    return v;
  };

  std::vector<std::size_t> order(data.train_examples);
  long iteration = 0;
  double window_loss = 0.0;
  long window_count = 0;
  result.best_accuracy = -1.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t e = std::min(n, b + static_cast<std::size_t>(tc.batch_size));
      ad::Tape tape;
      auto out = model.forward(tape, make_batch(data, order, b, e), true, &rng);
      std::vector<Answer> truth;
      for (std::size_t i = b; i < e; ++i) truth.push_back(data.questions[order[i]].answer);
      auto loss = model::compute_loss(tape, out, truth);
      const double value = loss.total.item();
      if (!std::isfinite(value))
        throw NumericError("non-finite loss at iteration " + std::to_string(iteration) + " (epoch " +
                           std::to_string(epoch) + ")");
      params.zero_grad();
      ad::backward(tape, loss.total);
      if (iteration == 0) result.disconnected_parameters = params.count_disconnected();
      const double lr = ad::lr_at(schedule, iteration, epoch);
      ad::adamw_step(params, opt, static_cast<float>(lr), static_cast<float>(tc.weight_decay));
      ++iteration;
      window_loss += value;
      ++window_count;
      if (iteration % tc.log_interval == 0) {
        const double avg = window_loss / static_cast<double>(window_count);
        result.report.curve.push_back({iteration, epoch, avg, std::numeric_limits<double>::quiet_NaN(),
                                       std::numeric_limits<double>::quiet_NaN()});
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        say("iter " + std::to_string(iteration) + " epoch " + std::to_string(epoch) + " lr " + fmt(lr * 1e4, 3) +
            "e-4 train_loss " + fmt(avg) + " elapsed " + fmt(secs, 1) + "s");
        window_loss = 0.0;
        window_count = 0;
      }
    }
    const bool last = epoch + 1 == tc.epochs;
    if (last || (epoch + 1) % tc.eval_every == 0) {
      const MetricsReport val = evaluate(predictor, data, data.val_examples);
      const double vloss = predictor.mean_loss(data, data.val_examples);
      const double tl = window_count > 0 ? window_loss / static_cast<double>(window_count)
                                         : (result.report.curve.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                                        : result.report.curve.back().train_loss);
      result.report.curve.push_back({iteration, epoch, tl, vloss, val.overall.accuracy()});
      std::string fams;
      for (auto f : question::kFamilies)
        fams += " " + std::string(question::family_name(f)) + "=" + fmt(val.family_accuracy(f), 3);
      say("epoch " + std::to_string(epoch) + " val_loss " + fmt(vloss) + " val_acc " + fmt(val.overall.accuracy()) +
          fams);
      if (val.overall.accuracy() > result.best_accuracy) {
        result.best_accuracy = val.overall.accuracy();
        result.best_epoch = epoch;
        if (!out_dir.empty()) best_values = snapshot();
      }
    }
  }
  result.iterations = iteration;

  const MetricsReport final_metrics = evaluate(predictor, data, data.val_examples);
  auto curve = std::move(result.report.curve);
  result.report = final_metrics;
  result.report.curve = std::move(curve);
  if (tc.epochs == 0) {
    result.best_accuracy = final_metrics.overall.accuracy();
    result.report.curve.push_back({0, 0, std::numeric_limits<double>::quiet_NaN(),
                                   predictor.mean_loss(data, data.val_examples), final_metrics.overall.accuracy()});
  }
  result.after = data.checksums();
  if (!(result.after == result.before)) throw Error("frozen-boundary audit failed: inputs changed during training");

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::string state = rng_state(rng);
    ad::save_checkpoint(ad::make_checkpoint(params, opt, iteration, tc.epochs, state, meta.dump()),
                        out_dir / "final.ckpt");
    if (!best_values.empty()) {
      auto ckpt = ad::make_checkpoint(params, opt, iteration, result.best_epoch, state, meta.dump());
      ckpt.values = best_values;
      ckpt.optimizer.first_moment.clear();
      ckpt.optimizer.second_moment.clear();
      ad::save_checkpoint(ckpt, out_dir / "best.ckpt");
    }
  }
  return result;
}

namespace {

json run_summary(const ExperimentConfig& config, const Dataset& data, const TrainResult& r) {
  auto hex = [](std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
  };
  json j = to_json(r.report);
  j["name"] = config.name;
  j["encoder"] = config.encoder.profile;
  j["budget"] = config.regime.budget;
  j["fraction"] = config.train.fraction;
  j["train_scenes"] = data.train_scene_ids.size();
  j["val_scenes"] = data.val_scene_ids.size();
  j["train_questions"] = data.train_examples.size();
  j["iterations"] = r.iterations;
  j["best_epoch"] = r.best_epoch;
  j["best_accuracy"] = r.best_accuracy;
  j["disconnected_parameters"] = r.disconnected_parameters;
  j["plan"] = std::to_string(data.plan.tokens) + "x" + std::to_string(data.plan.dim);
  j["frozen"] = {{"visual_before", hex(r.before.visual)}, {"visual_after", hex(r.after.visual)},
                 {"text_before", hex(r.before.text)},     {"text_after", hex(r.after.text)},
                 {"pca_before", hex(r.before.pca)},       {"pca_after", hex(r.after.pca)}};
  return j;
}

}  // namespace

TrainResult run_experiment(const ExperimentConfig& config, const LogFn& log) {
  const std::filesystem::path out = config.out;
  std::filesystem::create_directories(out);
  write_text(out / "config.json", to_json(config).dump(2) + "\n");
  Dataset data = build_dataset(config);
  if (log)
    log("dataset: " + std::to_string(data.train_examples.size()) + " train / " +
        std::to_string(data.val_examples.size()) + " val questions, plan " + std::to_string(data.plan.tokens) + "x" +
        std::to_string(data.plan.dim));
  model::ReasoningModel model(config.model, data.d_text(), data.d_visual(), config.seed);
  TrainResult r = train(config, data, model, out, log);
  write_text(out / "metrics.json", run_summary(config, data, r).dump(2) + "\n");
  write_text(out / "curve.csv", curve_csv(r.report.curve));
  return r;
}

std::vector<SweepPoint> fewshot_sweep(const ExperimentConfig& config, const std::vector<double>& fractions,
                                      const LogFn& log) {
  if (fractions.empty()) throw ConfigError("few-shot sweep needs at least one fraction");
  std::vector<SweepPoint> points;
  for (double f : fractions) {
    ExperimentConfig c = config;
    c.train.fraction = f;
    std::ostringstream name;
    name << "fraction_" << f;
    c.out = (std::filesystem::path(config.out) / name.str()).string();
    c.validate();
    if (log) log("sweep: fraction " + name.str().substr(9));
    TrainResult r = run_experiment(c, log);
    const int n = kept_scene_count(f, config.data.train_scenes);
    points.push_back({f, n, r.report});
  }
  write_text(std::filesystem::path(config.out) / "sweep.json", sweep_to_json(points).dump(2) + "\n");
  return points;
}

}  // namespace vqa::harness
