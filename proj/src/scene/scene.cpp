#include "vqa/scene.hpp"

#include <cmath>
#include <random>

namespace vqa::scene {

namespace {

template <std::size_t N>
int find_name(const std::array<std::string_view, N>& names, std::string_view name) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

double normalize(double v, double lo, double hi) { return 2.0 * (v - lo) / (hi - lo) - 1.0; }
double denormalize(double v, double lo, double hi) { return lo + (v + 1.0) * 0.5 * (hi - lo); }

}  // namespace

std::string_view AttributeVocabulary::name(Attribute a, int value) {
  if (value < 0 || value >= cardinality(a))
    throw VocabularyError("attribute value " + std::to_string(value) + " out of range for " +
                          std::string(attribute_name(a)));
  switch (a) {
    case Attribute::shape: return shapes[value];
    case Attribute::color: return colors[value];
    case Attribute::size: return sizes[value];
    case Attribute::material: return materials[value];
  }
  return {};
}

std::string_view AttributeVocabulary::attribute_name(Attribute a) {
  switch (a) {
    case Attribute::shape: return "shape";
    case Attribute::color: return "color";
    case Attribute::size: return "size";
    case Attribute::material: return "material";
  }
  return {};
}

int AttributeVocabulary::index(Attribute a, std::string_view name) {
  int idx = -1;
  switch (a) {
    case Attribute::shape: idx = find_name(shapes, name); break;
    case Attribute::color: idx = find_name(colors, name); break;
    case Attribute::size: idx = find_name(sizes, name); break;
    case Attribute::material: idx = find_name(materials, name); break;
  }
  if (idx < 0)
    throw VocabularyError("unknown " + std::string(attribute_name(a)) + " '" + std::string(name) + "'");
  return idx;
}

Attribute AttributeVocabulary::parse_attribute(std::string_view name) {
  for (Attribute a : kAttributes)
    if (attribute_name(a) == name) return a;
  throw VocabularyError("unknown attribute kind '" + std::string(name) + "'");
}

std::pair<Attribute, int> AttributeVocabulary::answer_attribute(int answer_index) {
  for (auto it = kAttributes.rbegin(); it != kAttributes.rend(); ++it) {
    if (answer_index >= answer_offset(*it)) {
      const int v = answer_index - answer_offset(*it);
      if (v >= cardinality(*it)) break;
      return {*it, v};
    }
  }
  throw VocabularyError("attribute answer index " + std::to_string(answer_index) + " out of range");
}

std::string_view AttributeVocabulary::answer_name(int answer_index) {
  auto [a, v] = answer_attribute(answer_index);
  return name(a, v);
}

int AttributeVocabulary::lookup_word(std::string_view word) {
  for (Attribute a : kAttributes) {
    for (int v = 0; v < cardinality(a); ++v) {
      const auto n = name(a, v);
      if (word == n) return answer_index(a, v);
      if (a == Attribute::shape && word.size() == n.size() + 1 && word.starts_with(n) && word.back() == 's')
        return answer_index(a, v);
    }
  }
  return -1;
}

int ObjectSpec::attribute(Attribute a) const {
  switch (a) {
    case Attribute::shape: return shape;
    case Attribute::color: return color;
    case Attribute::size: return size;
    case Attribute::material: return material;
  }
  return -1;
}

void ObjectSpec::set_attribute(Attribute a, int value) {
  switch (a) {
    case Attribute::shape: shape = value; break;
    case Attribute::color: color = value; break;
    case Attribute::size: size = value; break;
    case Attribute::material: material = value; break;
  }
}

double object_radius(int size) { return size == 0 ? 0.35 : 0.7; }

Scene sample_scene(std::uint64_t seed, std::int64_t id, const SamplingOptions& options) {
  const auto& b = options.bounds;
  if (options.min_objects < 0 || options.max_objects < options.min_objects || options.max_objects > options.k_max)
    throw SceneSamplingError("object count range [" + std::to_string(options.min_objects) + ", " +
                             std::to_string(options.max_objects) + "] outside [0, " +
                             std::to_string(options.k_max) + "]");
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min) || !(b.z_max > 0.0))
    throw SceneSamplingError("degenerate scene bounds");

  std::mt19937_64 rng(seed);
  Scene scene;
  scene.id = id;
  scene.k_max = options.k_max;
  const int n = std::uniform_int_distribution<int>(options.min_objects, options.max_objects)(rng);
  std::uniform_real_distribution<double> ux(b.x_min, b.x_max);
  std::uniform_real_distribution<double> uy(b.y_min, b.y_max);
  const double min_sep2 = options.min_separation * options.min_separation;

  for (int i = 0; i < n; ++i) {
    ObjectSpec obj;
    obj.shape = std::uniform_int_distribution<int>(0, 2)(rng);
    obj.color = std::uniform_int_distribution<int>(0, 7)(rng);
    obj.size = std::uniform_int_distribution<int>(0, 1)(rng);
    obj.material = std::uniform_int_distribution<int>(0, 1)(rng);
    bool placed = false;
    for (int attempt = 0; attempt < options.max_attempts && !placed; ++attempt) {
      const double x = ux(rng);
      const double y = uy(rng);
      placed = true;
      for (const auto& other : scene.objects) {
        const double dx = other.position.x() - x;
        const double dy = other.position.y() - y;
        if (dx * dx + dy * dy < min_sep2) {
          placed = false;
          break;
        }
      }
      if (placed) obj.position = {x, y, std::min(object_radius(obj.size), b.z_max)};
    }
    if (!placed)
      throw SceneSamplingError("could not place object " + std::to_string(i) + " of " + std::to_string(n) +
                               " after " + std::to_string(options.max_attempts) +
                               " attempts; bounds too tight for the requested count");
    scene.objects.push_back(obj);
  }
  return scene;
}

void validate_scene(const Scene& scene, const SceneBounds& bounds, double min_separation) {
  if (static_cast<int>(scene.objects.size()) > scene.k_max)
    throw DataError("scene " + std::to_string(scene.id) + " has " + std::to_string(scene.objects.size()) +
                    " objects, more than K = " + std::to_string(scene.k_max));
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    for (Attribute a : kAttributes)
      if (o.attribute(a) < 0 || o.attribute(a) >= AttributeVocabulary::cardinality(a))
        throw DataError("scene " + std::to_string(scene.id) + " object " + std::to_string(i) + ": invalid " +
                        std::string(AttributeVocabulary::attribute_name(a)));
    if (!o.position.allFinite() || o.position.x() < bounds.x_min || o.position.x() > bounds.x_max ||
        o.position.y() < bounds.y_min || o.position.y() > bounds.y_max || o.position.z() < 0.0)
      throw DataError("scene " + std::to_string(scene.id) + " object " + std::to_string(i) + ": position outside bounds");
    for (std::size_t j = 0; j < i; ++j) {
      if ((o.position.head<2>() - scene.objects[j].position.head<2>()).norm() < min_separation)
        throw DataError("scene " + std::to_string(scene.id) + " objects " + std::to_string(j) + " and " +
                        std::to_string(i) + " closer than the minimum separation");
    }
  }
}

GroundTruthTokens encode_ground_truth(const Scene& scene, const SceneBounds& bounds) {
  GroundTruthTokens gt;
  gt.matrix = MatrixF::Zero(scene.k_max, kGroundTruthDim);
  gt.valid.assign(scene.k_max, 0);
  for (std::size_t i = 0; i < scene.objects.size() && static_cast<int>(i) < scene.k_max; ++i) {
    const auto& o = scene.objects[i];
    auto row = gt.matrix.row(static_cast<Eigen::Index>(i));
    row(0) = static_cast<float>(static_cast<double>(o.shape) / (AttributeVocabulary::cardinality(Attribute::shape) - 1));
    row(1) = static_cast<float>(static_cast<double>(o.color) / (AttributeVocabulary::cardinality(Attribute::color) - 1));
    row(2) = static_cast<float>(o.size);
    row(3) = static_cast<float>(o.material);
    row(4) = static_cast<float>(normalize(o.position.x(), bounds.x_min, bounds.x_max));
    row(5) = static_cast<float>(normalize(o.position.y(), bounds.y_min, bounds.y_max));
    row(6) = static_cast<float>(normalize(o.position.z(), 0.0, bounds.z_max));
    gt.valid[i] = 1;
  }
  return gt;
}

ObjectSpec decode_ground_truth_row(const Eigen::Ref<const VectorF>& row, const SceneBounds& bounds) {
  ObjectSpec o;
  o.shape = static_cast<int>(std::lround(row(0) * (AttributeVocabulary::cardinality(Attribute::shape) - 1)));
  o.color = static_cast<int>(std::lround(row(1) * (AttributeVocabulary::cardinality(Attribute::color) - 1)));
  o.size = static_cast<int>(std::lround(row(2)));
  o.material = static_cast<int>(std::lround(row(3)));
  o.position = {denormalize(row(4), bounds.x_min, bounds.x_max), denormalize(row(5), bounds.y_min, bounds.y_max),
                denormalize(row(6), 0.0, bounds.z_max)};
  return o;
}

}  // namespace vqa::scene
