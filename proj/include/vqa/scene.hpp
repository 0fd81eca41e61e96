#pragma once

#include "vqa/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vqa::scene {

/// Maximum number of objects in a scene (K).
inline constexpr int kMaxObjects = 10;
/// Ground-truth token width: 4 attribute ordinals + (x, y, z).
inline constexpr int kGroundTruthDim = 7;

enum class Attribute : int { shape = 0, color = 1, size = 2, material = 3 };
inline constexpr std::array<Attribute, 4> kAttributes{Attribute::shape, Attribute::color, Attribute::size,
                                                      Attribute::material};

class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

/// The fixed CLEVR attribute vocabulary. Ordering defines ordinal encodings and
/// the 15-way attribute answer head: shapes, then colors, sizes, materials.
struct AttributeVocabulary {
  static constexpr std::array<std::string_view, 3> shapes{"cube", "sphere", "cylinder"};
  static constexpr std::array<std::string_view, 8> colors{"gray",  "red",    "blue", "green",
                                                          "brown", "purple", "cyan", "yellow"};
  static constexpr std::array<std::string_view, 2> sizes{"small", "large"};
  static constexpr std::array<std::string_view, 2> materials{"rubber", "metal"};

  static constexpr int kAnswerCount = 15;

  static constexpr int cardinality(Attribute a) {
    switch (a) {
      case Attribute::shape: return 3;
      case Attribute::color: return 8;
      case Attribute::size: return 2;
      case Attribute::material: return 2;
    }
    return 0;
  }
  /// First index of `a` inside the 15-way answer vocabulary.
  static constexpr int answer_offset(Attribute a) {
    switch (a) {
      case Attribute::shape: return 0;
      case Attribute::color: return 3;
      case Attribute::size: return 11;
      case Attribute::material: return 13;
    }
    return 0;
  }
  static std::string_view name(Attribute a, int value);
  static std::string_view attribute_name(Attribute a);
  /// Throws VocabularyError for unknown names.
  static int index(Attribute a, std::string_view name);
  static Attribute parse_attribute(std::string_view name);
  /// Global answer index (0..14) <-> (attribute, value).
  static int answer_index(Attribute a, int value) { return answer_offset(a) + value; }
  static std::pair<Attribute, int> answer_attribute(int answer_index);
  static std::string_view answer_name(int answer_index);
  /// Maps a singular or plural surface word ("cube", "cubes", "red") to its answer index; -1 if none.
  static int lookup_word(std::string_view word);
};

struct ObjectSpec {
  int shape = 0;
  int color = 0;
  int size = 0;
  int material = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();

  int attribute(Attribute a) const;
  void set_attribute(Attribute a, int value);
  bool operator==(const ObjectSpec&) const = default;
};

/// Axis-aligned scene box. x and y span the ground plane, z is height above it.
struct SceneBounds {
  double x_min = -3.0;
  double x_max = 3.0;
  double y_min = -3.0;
  double y_max = 3.0;
  double z_max = 1.0;
};

/// Spatial frame used by `relate`. Unit-ish vectors in scene coordinates.
struct SceneFrame {
  Eigen::Vector3d right{1.0, 0.0, 0.0};
  Eigen::Vector3d behind{0.0, 1.0, 0.0};
  bool operator==(const SceneFrame&) const = default;
};

struct Scene {
  std::int64_t id = 0;
  std::vector<ObjectSpec> objects;
  int k_max = kMaxObjects;
  SceneFrame frame;

  bool operator==(const Scene&) const = default;
};

class SceneSamplingError : public DataError {
 public:
  using DataError::DataError;
};

struct SamplingOptions {
  int min_objects = 3;
  int max_objects = kMaxObjects;
  SceneBounds bounds;
  double min_separation = 0.6;
  /// Placement attempts per object before giving up.
  int max_attempts = 200;
  int k_max = kMaxObjects;
};

/// Object height (z of the center) for a given size ordinal.
double object_radius(int size);

Scene sample_scene(std::uint64_t seed, std::int64_t id, const SamplingOptions& options = {});

/// Validates the Scene invariants; throws DataError with the reason.
void validate_scene(const Scene& scene, const SceneBounds& bounds, double min_separation);

/// K x 7 ground-truth token block plus validity mask.
struct GroundTruthTokens {
  MatrixF matrix;
  std::vector<std::uint8_t> valid;
};

GroundTruthTokens encode_ground_truth(const Scene& scene, const SceneBounds& bounds = {});
/// Inverse of one unmasked GT row.
ObjectSpec decode_ground_truth_row(const Eigen::Ref<const VectorF>& row, const SceneBounds& bounds = {});

/// H x W x 3 image with channels interleaved, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  float at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

struct RasterOptions {
  SceneBounds bounds;
  std::array<float, 3> background{0.85f, 0.85f, 0.85f};
  float rubber_brightness = 0.7f;
  float metal_brightness = 1.0f;
};

Image rasterize_scene(const Scene& scene, int height, int width, const RasterOptions& options = {});
/// Pixel mask of the object's footprint under the same geometry as rasterize_scene.
std::vector<std::uint8_t> object_footprint(const ObjectSpec& object, int height, int width,
                                           const RasterOptions& options = {});
void write_png(const Image& image, const std::filesystem::path& path);

/// Raised on scenes/questions JSON that does not follow the schema; names the field.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

std::vector<Scene> load_scenes(const std::filesystem::path& path, int k_max = kMaxObjects);
std::vector<Scene> parse_scenes(std::string_view json_text, int k_max = kMaxObjects);
void save_scenes(const std::vector<Scene>& scenes, const std::filesystem::path& path);
std::string serialize_scenes(const std::vector<Scene>& scenes);

}  // namespace vqa::scene
