#include "vqa/scene.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace vqa::scene {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError("missing field '" + where + "." + key + "'");
  return obj.at(key);
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw ParseError("field '" + where + "." + key + "' must be a string");
  return v.get<std::string>();
}

Eigen::Vector3d parse_vec3(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3) throw ParseError("field '" + where + "' must be an array of 3 numbers");
  Eigen::Vector3d out;
  for (int i = 0; i < 3; ++i) {
    if (!v[i].is_number()) throw ParseError("field '" + where + "[" + std::to_string(i) + "]' must be a number");
    out(i) = v[i].get<double>();
  }
  if (!out.allFinite()) throw ParseError("field '" + where + "' is not finite");
  return out;
}

}  // namespace

std::vector<Scene> parse_scenes(std::string_view json_text, int k_max) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenes file is not valid JSON: ") + e.what());
  }
  const auto& records = require(doc, "scenes", "$");
  if (!records.is_array()) throw ParseError("field '$.scenes' must be an array");

  std::vector<Scene> scenes;
  scenes.reserve(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const std::string where = "scenes[" + std::to_string(r) + "]";
    const auto& rec = records[r];
    const auto& index = require(rec, "image_index", where);
    if (!index.is_number_integer()) throw ParseError("field '" + where + ".image_index' must be an integer");
    const auto& objects = require(rec, "objects", where);
    if (!objects.is_array()) throw ParseError("field '" + where + ".objects' must be an array");

    Scene s;
    s.id = index.get<std::int64_t>();
    s.k_max = k_max;
    if (static_cast<int>(objects.size()) > k_max)
      throw DataError(where + " has " + std::to_string(objects.size()) + " objects, more than K = " +
                      std::to_string(k_max));
    for (std::size_t i = 0; i < objects.size(); ++i) {
      const std::string ow = where + ".objects[" + std::to_string(i) + "]";
      ObjectSpec o;
      o.shape = AttributeVocabulary::index(Attribute::shape, require_string(objects[i], "shape", ow));
      o.color = AttributeVocabulary::index(Attribute::color, require_string(objects[i], "color", ow));
      o.size = AttributeVocabulary::index(Attribute::size, require_string(objects[i], "size", ow));
      o.material = AttributeVocabulary::index(Attribute::material, require_string(objects[i], "material", ow));
      o.position = parse_vec3(require(objects[i], "3d_coords", ow), ow + ".3d_coords");
      s.objects.push_back(o);
    }
    if (rec.contains("directions")) {
      const auto& d = rec.at("directions");
      if (d.contains("right")) s.frame.right = parse_vec3(d.at("right"), where + ".directions.right");
      if (d.contains("behind")) s.frame.behind = parse_vec3(d.at("behind"), where + ".directions.behind");
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<Scene> load_scenes(const std::filesystem::path& path, int k_max) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scenes file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenes(ss.str(), k_max);
}

std::string serialize_scenes(const std::vector<Scene>& scenes) {
  json records = json::array();
  for (const auto& s : scenes) {
    json objects = json::array();
    for (const auto& o : s.objects) {
      objects.push_back({{"shape", AttributeVocabulary::name(Attribute::shape, o.shape)},
                         {"color", AttributeVocabulary::name(Attribute::color, o.color)},
                         {"size", AttributeVocabulary::name(Attribute::size, o.size)},
                         {"material", AttributeVocabulary::name(Attribute::material, o.material)},
                         {"3d_coords", {o.position.x(), o.position.y(), o.position.z()}}});
    }
    const auto& f = s.frame;
    records.push_back({{"image_index", s.id},
                       {"objects", std::move(objects)},
                       {"directions",
                        {{"right", {f.right.x(), f.right.y(), f.right.z()}},
                         {"left", {-f.right.x(), -f.right.y(), -f.right.z()}},
                         {"behind", {f.behind.x(), f.behind.y(), f.behind.z()}},
                         {"front", {-f.behind.x(), -f.behind.y(), -f.behind.z()}}}}});
  }
  return json{{"scenes", std::move(records)}}.dump();
}

void save_scenes(const std::vector<Scene>& scenes, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << serialize_scenes(scenes) << '\n';
}

}  // namespace vqa::scene
