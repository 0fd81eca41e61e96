#include "vqa/feature_store.hpp"
#include "vqa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>
#include <unordered_set>

namespace vqa::harness {

using adapter::AdapterPlan;
using adapter::DimensionMode;
using adapter::TokenSequence;
using features::EncoderGeometry;

bool is_builtin(const std::string& profile) { return profile == "gt" || profile == "raw" || profile == "raw192"; }

MatrixF image_patches(const scene::Image& image, int grid) {
  if (grid <= 0 || image.height % grid != 0 || image.width % grid != 0)
    throw ShapeError("image " + shape_string(image.height, image.width) + " does not split into a " +
                     std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  const int ph = image.height / grid, pw = image.width / grid;
  MatrixF out(grid * grid, ph * pw * 3);
  for (int gi = 0; gi < grid; ++gi)
    for (int gj = 0; gj < grid; ++gj) {
      Eigen::Index c = 0;
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
          for (int ch = 0; ch < 3; ++ch) out(gi * grid + gj, c++) = image.at(gi * ph + y, gj * pw + x, ch);
    }
  return out;
}

NativeFeatures encode_builtin(const std::string& profile, const scene::Scene& s, int raster_size) {
  NativeFeatures f;
  if (profile == "gt") {
    auto gt = scene::encode_ground_truth(s);
    f.tokens = gt.matrix;
    f.valid = gt.valid;
    return f;
  }
  if (profile == "raw" || profile == "raw192") {
    const auto& p = adapter::find_profile(profile);
    const int size = profile == "raw" ? raster_size : 192;
    f.tokens = image_patches(scene::rasterize_scene(s, size, size), p.native.grid_h);
    if (f.tokens.cols() != p.native.dim)
      throw ConfigError("raster size " + std::to_string(size) + " gives " + std::to_string(f.tokens.cols()) +
                        "-d patches, profile '" + profile + "' expects " + std::to_string(p.native.dim));
    return f;
  }
  throw ConfigError("no built-in encoder for profile '" + profile + "'");
}

int kept_scene_count(double fraction, int n) {
  return static_cast<int>(std::lround(fraction * static_cast<double>(n)));
}

namespace {

constexpr std::uint64_t kQuestionSalt = 0x51ed270b6c3e2f95ULL;
constexpr std::uint64_t kSplitSalt = 0x2545f4914f6cdd1dULL;

question::FamilyCounts family_counts(int per_scene) {
  question::FamilyCounts counts;
  for (int i = 0; i < question::kFamilyCount; ++i)
    counts[question::kFamilies[static_cast<std::size_t>(i)]] =
        per_scene / question::kFamilyCount + (i < per_scene % question::kFamilyCount ? 1 : 0);
  return counts;
}

}  // namespace

RawData build_raw_data(const DatasetConfig& d, const adapter::MemoryRegime& regime) {
  RawData raw;
  const int total = d.train_scenes + d.val_scenes;
  if (!d.scenes_path.empty()) {
    raw.scenes = scene::load_scenes(d.scenes_path, regime.k);
    auto index = question::index_scenes(raw.scenes);
    raw.questions = question::load_questions(d.questions_path, index);
    if (static_cast<int>(raw.scenes.size()) < total)
      throw DataError("scene file holds " + std::to_string(raw.scenes.size()) + " scenes, config asks for " +
                      std::to_string(total));
  } else {
    scene::SamplingOptions opts;
    opts.min_objects = d.min_objects;
    opts.max_objects = d.max_objects;
    opts.k_max = regime.k;
    const auto per_family = family_counts(d.questions_per_scene);
    for (int i = 0; i < total; ++i) {
      // A scene whose question quota cannot be met is redrawn from the next sub-seed.
      for (int attempt = 0;; ++attempt) {
        const std::uint64_t seed = question::derive_seed(d.seed + static_cast<std::uint64_t>(attempt) * kSplitSalt, i);
        scene::Scene s = scene::sample_scene(seed, i, opts);
        try {
          auto qs = question::generate_questions(s, question::derive_seed(d.seed ^ kQuestionSalt, i) + attempt,
                                                 per_family, static_cast<std::int64_t>(raw.questions.size()));
          raw.scenes.push_back(std::move(s));
          for (auto& q : qs) raw.questions.push_back(std::move(q));
          break;
        } catch (const question::GenerationExhausted&) {
          if (attempt >= 20) throw;
        }
      }
    }
  }
  std::vector<std::int64_t> ids;
  for (const auto& s : raw.scenes) ids.push_back(s.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DataError("duplicate scene ids");
  std::mt19937_64 rng(d.seed ^ kSplitSalt);
  std::shuffle(ids.begin(), ids.end(), rng);
  raw.val_scene_ids.assign(ids.begin(), ids.begin() + d.val_scenes);
  raw.train_scene_ids.assign(ids.begin() + d.val_scenes, ids.begin() + total);
  return raw;
}

Dataset build_dataset(const ExperimentConfig& config) {
  config.validate();
  RawData raw = build_raw_data(config.data, config.regime);
  Dataset ds;
  ds.all_train_scene_ids = raw.train_scene_ids;
  ds.val_scene_ids = raw.val_scene_ids;
  const int kept = kept_scene_count(config.train.fraction, static_cast<int>(raw.train_scene_ids.size()));
  if (kept <= 0) throw ConfigError("train.fraction keeps no training scenes");
  ds.train_scene_ids.assign(raw.train_scene_ids.begin(), raw.train_scene_ids.begin() + kept);

  // Only scenes in the kept train set or validation are materialized.
  std::unordered_set<std::int64_t> wanted(ds.train_scene_ids.begin(), ds.train_scene_ids.end());
  wanted.insert(ds.val_scene_ids.begin(), ds.val_scene_ids.end());
  std::unordered_map<std::int64_t, std::size_t> slot;
  for (auto& s : raw.scenes)
    if (wanted.contains(s.id)) {
      slot[s.id] = ds.scenes.size();
      ds.scenes.push_back(std::move(s));
    }
  for (auto& q : raw.questions) {
    auto it = slot.find(q.scene_id);
    if (it == slot.end()) continue;
    ds.question_scene.push_back(it->second);
    ds.questions.push_back(std::move(q));
  }
  const int threads = thread_count(config.serial);

  // Native visual features.
  const auto& profile = adapter::find_profile(config.encoder.profile);
  std::vector<MatrixF> native(ds.scenes.size());
  std::vector<std::vector<std::uint8_t>> valid(ds.scenes.size());
  EncoderGeometry geometry = profile.native;
  if (!config.encoder.store.empty()) {
    auto store = features::FeatureStore::open(config.encoder.store);
    geometry = store.geometry();
    for (const auto& s : ds.scenes)
      if (!store.contains(s.id))
        throw DataError("feature store '" + config.encoder.store + "' has no record for scene " + std::to_string(s.id));
    parallel_for(ds.scenes.size(), threads, [&](std::size_t i) { native[i] = store.read(ds.scenes[i].id); });
  } else {
    parallel_for(ds.scenes.size(), threads, [&](std::size_t i) {
      auto f = encode_builtin(config.encoder.profile, ds.scenes[i], config.encoder.raster_size);
      native[i] = std::move(f.tokens);
      valid[i] = std::move(f.valid);
    });
  }
  ds.plan = adapter::plan_adaptation(geometry, config.regime, profile);

  // PCA sees kept training scenes only.
  if (ds.plan.mode == DimensionMode::compress) {
    std::unordered_set<std::int64_t> train_set(ds.train_scene_ids.begin(), ds.train_scene_ids.end());
    adapter::CovarianceAccumulator acc(geometry.dim);
    for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
      if (!train_set.contains(ds.scenes[i].id)) continue;
      MatrixF pooled = adapter::pool_native(ds.plan, native[i]);
      if (!valid[i].empty()) {
        MatrixF kept_rows(0, pooled.cols());
        for (Eigen::Index r = 0; r < pooled.rows(); ++r)
          if (valid[i][static_cast<std::size_t>(r)]) {
            kept_rows.conservativeResize(kept_rows.rows() + 1, Eigen::NoChange);
            kept_rows.row(kept_rows.rows() - 1) = pooled.row(r);
          }
        pooled = kept_rows;
      }
      acc.add(pooled);
      ds.pca_fit_scene_ids.push_back(ds.scenes[i].id);
    }
    if (acc.count() <= ds.plan.dim)
      throw DataError("PCA needs more than " + std::to_string(ds.plan.dim) + " training tokens, got " +
                      std::to_string(acc.count()));
    ds.pca = adapter::fit_pca(acc, ds.plan.dim);
  }
  ds.visual.resize(ds.scenes.size());
  const adapter::PCAModel<double>* pca = ds.pca ? &*ds.pca : nullptr;
  parallel_for(ds.scenes.size(), threads, [&](std::size_t i) {
    ds.visual[i] = adapter::apply_adapter(ds.plan, pca, native[i], valid[i]);
    if (!profile.grid_positions) ds.visual[i].coords.clear();
  });

  // Text.
  ds.text.resize(ds.questions.size());
  if (!config.text.store.empty()) {
    auto store = features::FeatureStore::open(config.text.store);
    for (std::size_t i = 0; i < ds.questions.size(); ++i) {
      if (!store.contains(ds.questions[i].id))
        throw DataError("text store has no record for question " + std::to_string(ds.questions[i].id));
      MatrixF t = store.read(ds.questions[i].id);
      // Stores pad questions to a common length with zero rows.
      Eigen::Index n = t.rows();
      while (n > 1 && t.row(n - 1).isZero(0.0f)) --n;
      ds.text[i] = t.topRows(n);
    }
  } else {
    const auto vocab = question::TextVocabulary::builtin();
    ds.text_table = question::embedding_table(vocab, config.text.seed, config.text.dim);
    for (std::size_t i = 0; i < ds.questions.size(); ++i) {
      const auto ids = question::encode_text(ds.questions[i].text, vocab);
      MatrixF m(static_cast<Eigen::Index>(ids.size()), ds.text_table.cols());
      for (std::size_t r = 0; r < ids.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = ds.text_table.row(ids[r]);
      ds.text[i] = std::move(m);
    }
  }

  std::unordered_set<std::int64_t> train_set(ds.train_scene_ids.begin(), ds.train_scene_ids.end());
  for (std::size_t i = 0; i < ds.questions.size(); ++i)
    (train_set.contains(ds.questions[i].scene_id) ? ds.train_examples : ds.val_examples).push_back(i);
  return ds;
}

FrozenChecksums Dataset::checksums() const {
  FrozenChecksums c;
  c.visual = 0xcbf29ce484222325ULL;
  for (const auto& v : visual) c.visual = checksum(v.tokens, c.visual);
  c.text = checksum(text_table);
  for (const auto& t : text) c.text = checksum(t, c.text);
  c.pca = pca ? adapter::pca_checksum(*pca) : 0;
  return c;
}

}  // namespace vqa::harness
