#include "vqa/feature_store.hpp"
#include "vqa/harness.hpp"
#include "vqa/optim.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace vqa;
using harness::ExperimentConfig;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool serial = false;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool need_out = false) {
  app->add_option("--config", c.config, "experiment file (JSON)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "override the experiment seed");
  app->add_flag("--serial", c.serial, "single-threaded, bit-reproducible execution");
  auto* o = app->add_option("--out", c.out, "output path");
  if (need_out) o->required();
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : harness::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.serial) cfg.serial = true;
  if (!c.out.empty()) cfg.out = c.out;
  cfg.validate();
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

void print_metrics(const harness::MetricsReport& m) {
  std::cout << "overall " << m.overall.accuracy() << " (" << m.overall.correct << "/" << m.overall.total << ")\n";
  for (auto f : question::kFamilies) std::cout << question::family_name(f) << " " << m.family_accuracy(f) << "\n";
}

int gen_data(const Common& c) {
  const auto cfg = resolve(c);
  const auto raw = harness::build_raw_data(cfg.data, cfg.regime);
  const std::filesystem::path out = cfg.out;
  std::filesystem::create_directories(out);
  scene::save_scenes(raw.scenes, out / "scenes.json");
  question::save_questions(raw.questions, out / "questions.json");
  harness::write_text(out / "split.json",
                      json{{"train", raw.train_scene_ids}, {"val", raw.val_scene_ids}}.dump(1) + "\n");
  std::cout << raw.scenes.size() << " scenes, " << raw.questions.size() << " questions -> " << out << "\n";
  return 0;
}

int encode(const Common& c, const std::string& what) {
  const auto cfg = resolve(c);
  const auto raw = harness::build_raw_data(cfg.data, cfg.regime);
  std::vector<features::StoreRecord> records;
  features::EncoderGeometry geometry;
  features::StoreInfo info;
  if (what == "visual") {
    if (!harness::is_builtin(cfg.encoder.profile))
      throw ConfigError("encode: profile '" + cfg.encoder.profile + "' has no built-in encoder");
    geometry = adapter::find_profile(cfg.encoder.profile).native;
    info.encoder = cfg.encoder.profile;
    records.resize(raw.scenes.size());
    harness::parallel_for(raw.scenes.size(), harness::thread_count(cfg.serial), [&](std::size_t i) {
      records[i] = {raw.scenes[i].id,
                    harness::encode_builtin(cfg.encoder.profile, raw.scenes[i], cfg.encoder.raster_size).tokens};
    });
  } else {
    const auto vocab = question::TextVocabulary::builtin();
    const MatrixF table = question::embedding_table(vocab, cfg.text.seed, cfg.text.dim);
    int longest = 0;
    for (const auto& q : raw.questions) {
      const auto ids = question::encode_text(q.text, vocab);
      MatrixF m(static_cast<Eigen::Index>(ids.size()), table.cols());
      for (std::size_t r = 0; r < ids.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = table.row(ids[r]);
      longest = std::max(longest, static_cast<int>(m.rows()));
      records.push_back({q.id, std::move(m)});
    }
    // Text records have a fixed geometry on disk; shorter questions are zero-padded.
    for (auto& r : records) {
      MatrixF padded = MatrixF::Zero(longest, table.cols());
      padded.topRows(r.tokens.rows()) = r.tokens;
      r.tokens = std::move(padded);
    }
    geometry = features::EncoderGeometry::text(longest, static_cast<int>(table.cols()));
    info.encoder = "text";
  }
  features::write_store(cfg.out, records, geometry, info);
  std::cout << records.size() << " records -> " << cfg.out << "\n";
  return 0;
}

int fit_adapter(const Common& c) {
  auto cfg = resolve(c);
  cfg.out = c.out.empty() ? "pca.bin" : c.out;
  const auto data = harness::build_dataset(cfg);
  if (!data.pca) throw ConfigError("regime keeps the native width for this encoder; no PCA to fit");
  adapter::save_pca(*data.pca, cfg.out);
  std::cout << "PCA " << data.pca->components.cols() << " -> " << data.pca->components.rows() << " fitted on "
            << data.pca_fit_scene_ids.size() << " scenes -> " << cfg.out << "\n";
  return 0;
}

int train(const Common& c) {
  const auto cfg = resolve(c);
  const auto r = harness::run_experiment(cfg, log_line);
  print_metrics(r.report);
  harness::report(cfg.out);
  return 0;
}

int eval(const Common& c, const std::string& checkpoint) {
  const auto cfg = resolve(c);
  const auto ckpt = ad::load_checkpoint(checkpoint);
  const auto data = harness::build_dataset(cfg);
  json meta;
  try {
    meta = json::parse(ckpt.metadata);
  } catch (const json::exception&) {
    throw DataError("checkpoint '" + checkpoint + "' carries unreadable metadata");
  }
  const ExperimentConfig trained = harness::parse_config(meta.at("config"));
  if (meta.at("plan").at("tokens").get<int>() != data.plan.tokens || meta.at("plan").at("dim").get<int>() != data.plan.dim)
    throw ConfigError("checkpoint was trained on " + std::to_string(meta["plan"]["tokens"].get<int>()) + "x" +
                      std::to_string(meta["plan"]["dim"].get<int>()) + " tokens, config gives " +
                      std::to_string(data.plan.tokens) + "x" + std::to_string(data.plan.dim));
  model::ReasoningModel model(trained.model, data.d_text(), data.d_visual(), trained.seed);
  ad::restore_parameters(model.parameters(), ckpt);
  harness::ModelPredictor predictor(model, 256, harness::thread_count(cfg.serial));
  const auto m = harness::evaluate(predictor, data, data.val_examples);
  print_metrics(m);
  if (!c.out.empty()) {
    json j = harness::to_json(m);
    j["checkpoint"] = checkpoint;
    harness::write_text(std::filesystem::path(c.out) / "eval.json", j.dump(2) + "\n");
  }
  return 0;
}

int sweep(const Common& c, const std::vector<double>& fractions) {
  const auto cfg = resolve(c);
  const auto points = harness::fewshot_sweep(cfg, fractions.empty() ? cfg.sweep_fractions : fractions, log_line);
  for (const auto& p : points) std::cout << "fraction " << p.fraction << " overall " << p.report.overall.accuracy() << "\n";
  harness::report(cfg.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Visual question answering reasoning harness"};
  app.require_subcommand(1);
  Common common;
  std::string what = "visual", checkpoint, report_dir;
  std::vector<double> fractions;

  auto* gen = app.add_subcommand("gen-data", "generate scenes and questions as JSON");
  add_common(gen, common);
  auto* enc = app.add_subcommand("encode", "run a built-in encoder and write a VQFS store");
  add_common(enc, common, true);
  enc->add_option("--what", what, "visual or text")->check(CLI::IsMember({"visual", "text"}));
  auto* fit = app.add_subcommand("fit-adapter", "fit the PCA adapter on training scenes");
  add_common(fit, common);
  auto* tr = app.add_subcommand("train", "train the reasoning module");
  add_common(tr, common);
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  auto* sw = app.add_subcommand("sweep", "few-shot sweep over training fractions");
  add_common(sw, common);
  sw->add_option("--fractions", fractions, "override sweep.fractions");
  auto* rep = app.add_subcommand("report", "tables and plots for a run or sweep directory");
  rep->add_option("dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return gen_data(common);
    if (*enc) return encode(common, what);
    if (*fit) return fit_adapter(common);
    if (*tr) return train(common);
    if (*ev) return eval(common, checkpoint);
    if (*sw) return sweep(common, fractions);
    if (*rep) {
      for (const auto& p : harness::report(report_dir)) std::cout << p.string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
