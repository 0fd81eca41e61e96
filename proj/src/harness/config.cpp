#include "vqa/harness.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace vqa::harness {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.contains(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("field '" + (where.empty() ? std::string(key) : where + "." + key) + "': " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data.train_scenes <= 0) throw ConfigError("data.train_scenes must be positive");
  if (data.val_scenes < 0) throw ConfigError("data.val_scenes must be >= 0");
  if (data.questions_per_scene <= 0) throw ConfigError("data.questions_per_scene must be positive");
  if (data.min_objects < 0 || data.max_objects > regime.k || data.min_objects > data.max_objects)
    throw ConfigError("data object range [" + std::to_string(data.min_objects) + ", " +
                      std::to_string(data.max_objects) + "] must lie within [0, " + std::to_string(regime.k) + "]");
  if (data.scenes_path.empty() != data.questions_path.empty())
    throw ConfigError("data.scenes_path and data.questions_path must be given together");
  if (encoder.store.empty() && !is_builtin(encoder.profile))
    throw ConfigError("encoder.profile '" + encoder.profile + "' has no built-in encoder; set encoder.store");
  adapter::find_profile(encoder.profile);
  if (encoder.raster_size < 32) throw ConfigError("encoder.raster_size must be >= 32");
  if (text.store.empty() && text.dim < 8) throw ConfigError("text.dim must be >= 8");
  regime.validate();
  model.validate();
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (train.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (train.warmup_iterations < 0) throw ConfigError("train.warmup_iterations must be >= 0");
  if (train.log_interval <= 0) throw ConfigError("train.log_interval must be positive");
  if (train.eval_every <= 0) throw ConfigError("train.eval_every must be positive");
  if (!(train.fraction > 0.0 && train.fraction <= 1.0)) throw ConfigError("train.fraction must lie in (0, 1]");
  for (double f : sweep_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep.fractions entries must lie in (0, 1]");
}

json to_json(const ExperimentConfig& c) {
  json model_json = c.model;
  return {
      {"name", c.name},
      {"seed", c.seed},
      {"serial", c.serial},
      {"out", c.out},
      {"data",
       {{"train_scenes", c.data.train_scenes},
        {"val_scenes", c.data.val_scenes},
        {"questions_per_scene", c.data.questions_per_scene},
        {"seed", c.data.seed},
        {"min_objects", c.data.min_objects},
        {"max_objects", c.data.max_objects},
        {"scenes_path", c.data.scenes_path},
        {"questions_path", c.data.questions_path}}},
      {"encoder", {{"profile", c.encoder.profile}, {"store", c.encoder.store}, {"raster_size", c.encoder.raster_size}}},
      {"text", {{"dim", c.text.dim}, {"seed", c.text.seed}, {"store", c.text.store}}},
      {"regime", {{"budget", c.regime.budget}, {"k", c.regime.k}}},
      {"model", model_json},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"warmup_iterations", c.train.warmup_iterations},
        {"decay_epochs", c.train.decay_epochs},
        {"decay_factor", c.train.decay_factor},
        {"log_interval", c.train.log_interval},
        {"fraction", c.train.fraction},
        {"eval_every", c.train.eval_every}}},
      {"sweep", {{"fractions", c.sweep_fractions}}},
  };
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  require_keys(j, "", {"name", "seed", "serial", "out", "data", "encoder", "text", "regime", "model", "train", "sweep"});
  read(j, "name", c.name, "");
  read(j, "seed", c.seed, "");
  read(j, "serial", c.serial, "");
  read(j, "out", c.out, "");
  if (j.contains("data")) {
    const json& d = j["data"];
    require_keys(d, "data", {"train_scenes", "val_scenes", "questions_per_scene", "seed", "min_objects", "max_objects",
                             "scenes_path", "questions_path"});
    read(d, "train_scenes", c.data.train_scenes, "data");
    read(d, "val_scenes", c.data.val_scenes, "data");
    read(d, "questions_per_scene", c.data.questions_per_scene, "data");
    read(d, "seed", c.data.seed, "data");
    read(d, "min_objects", c.data.min_objects, "data");
    read(d, "max_objects", c.data.max_objects, "data");
    read(d, "scenes_path", c.data.scenes_path, "data");
    read(d, "questions_path", c.data.questions_path, "data");
  }
  if (j.contains("encoder")) {
    const json& e = j["encoder"];
    require_keys(e, "encoder", {"profile", "store", "raster_size"});
    read(e, "profile", c.encoder.profile, "encoder");
    read(e, "store", c.encoder.store, "encoder");
    read(e, "raster_size", c.encoder.raster_size, "encoder");
  }
  if (j.contains("text")) {
    const json& t = j["text"];
    require_keys(t, "text", {"dim", "seed", "store"});
    read(t, "dim", c.text.dim, "text");
    read(t, "seed", c.text.seed, "text");
    read(t, "store", c.text.store, "text");
  }
  if (j.contains("regime")) {
    const json& r = j["regime"];
    require_keys(r, "regime", {"budget", "k"});
    read(r, "budget", c.regime.budget, "regime");
    read(r, "k", c.regime.k, "regime");
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    require_keys(m, "model", {"d_model", "encoder_layers", "decoder_layers", "heads", "ffn_dim", "queries", "dropout",
                              "activation", "object_positions", "max_text_len", "max_grid"});
    try {
      c.model = m.get<model::ReasoningConfig>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("field 'model': ") + e.what());
    }
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    require_keys(t, "train", {"epochs", "batch_size", "lr", "weight_decay", "warmup_iterations", "decay_epochs",
                              "decay_factor", "log_interval", "fraction", "eval_every"});
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "lr", c.train.lr, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    read(t, "warmup_iterations", c.train.warmup_iterations, "train");
    read(t, "decay_epochs", c.train.decay_epochs, "train");
    read(t, "decay_factor", c.train.decay_factor, "train");
    read(t, "log_interval", c.train.log_interval, "train");
    read(t, "fraction", c.train.fraction, "train");
    read(t, "eval_every", c.train.eval_every, "train");
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    require_keys(s, "sweep", {"fractions"});
    read(s, "fractions", c.sweep_fractions, "sweep");
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  if (path.extension() != ".json")
    throw ConfigError("config '" + path.string() + "': only JSON experiment files are supported");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

int thread_count(bool serial) {
  if (serial) return 1;
  const char* env = std::getenv("VQA_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n <= 0) throw ConfigError(std::string("VQA_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<int>(n);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace vqa::harness
