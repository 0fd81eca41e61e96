#include "vqa/question.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace vqa::question {

using nlohmann::json;

namespace {

std::string value_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw scene::ParseError("program value input must be a string or integer");
}

Program parse_program(const json& nodes, const std::string& where) {
  if (!nodes.is_array()) throw scene::ParseError("field '" + where + "' must be an array");
  Program p;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    const std::string nw = where + "[" + std::to_string(i) + "]";
    const char* fn_key = n.contains("function") ? "function" : "type";
    if (!n.contains(fn_key) || !n.at(fn_key).is_string()) throw scene::ParseError("missing field '" + nw + ".function'");
    ProgramNode node;
    node.kind = parse_primitive(n.at(fn_key).get<std::string>());
    if (n.contains("inputs")) {
      for (const auto& in : n.at("inputs")) {
        if (!in.is_number_integer()) throw scene::ParseError("field '" + nw + ".inputs' must hold integers");
        node.inputs.push_back(in.get<int>());
      }
    }
    const char* vkey = n.contains("value_inputs") ? "value_inputs" : "side_inputs";
    if (n.contains(vkey) && !n.at(vkey).empty()) {
      const std::string v = value_string(n.at(vkey)[0]);
      switch (node.kind) {
        case Primitive::relate: node.value = static_cast<int>(parse_relation(v)); break;
        case Primitive::filter_shape: node.value = scene::AttributeVocabulary::index(Attribute::shape, v); break;
        case Primitive::filter_color: node.value = scene::AttributeVocabulary::index(Attribute::color, v); break;
        case Primitive::filter_size: node.value = scene::AttributeVocabulary::index(Attribute::size, v); break;
        case Primitive::filter_material: node.value = scene::AttributeVocabulary::index(Attribute::material, v); break;
        default: break;
      }
    }
    p.nodes.push_back(std::move(node));
  }
  p.output = static_cast<int>(p.nodes.size()) - 1;
  return p;
}

json program_to_json(const Program& p) {
  json nodes = json::array();
  for (const auto& n : p.nodes) {
    json values = json::array();
    switch (n.kind) {
      case Primitive::relate: values.push_back(relation_name(static_cast<Relation>(n.value))); break;
      case Primitive::filter_shape: values.push_back(scene::AttributeVocabulary::name(Attribute::shape, n.value)); break;
      case Primitive::filter_color: values.push_back(scene::AttributeVocabulary::name(Attribute::color, n.value)); break;
      case Primitive::filter_size: values.push_back(scene::AttributeVocabulary::name(Attribute::size, n.value)); break;
      case Primitive::filter_material:
        values.push_back(scene::AttributeVocabulary::name(Attribute::material, n.value));
        break;
      default: break;
    }
    nodes.push_back({{"function", primitive_name(n.kind)}, {"value_inputs", values}, {"inputs", n.inputs}});
  }
  return nodes;
}

}  // namespace

SceneIndex index_scenes(const std::vector<Scene>& scenes) {
  SceneIndex index;
  for (const auto& s : scenes) index.emplace(s.id, &s);
  return index;
}

std::vector<Question> parse_questions(std::string_view json_text, const SceneIndex& scenes) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw scene::ParseError(std::string("questions file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("questions") || !doc.at("questions").is_array())
    throw scene::ParseError("missing field '$.questions'");
  const auto& records = doc.at("questions");

  std::vector<Question> out;
  out.reserve(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = "questions[" + std::to_string(r) + "]";
    Question q;
    q.id = rec.contains("question_index") ? rec.at("question_index").get<std::int64_t>() : static_cast<std::int64_t>(r);
    if (!rec.contains("image_index") || !rec.at("image_index").is_number_integer())
      throw scene::ParseError("missing field '" + where + ".image_index'");
    q.scene_id = rec.at("image_index").get<std::int64_t>();
    if (!rec.contains("program")) throw scene::ParseError("missing field '" + where + ".program'");
    q.program = parse_program(rec.at("program"), where + ".program");
    q.text = rec.value("question", std::string{});
    q.family = family_of(q.program);

    auto it = scenes.find(q.scene_id);
    if (it == scenes.end())
      throw SceneNotFound("question " + std::to_string(q.id) + " references unknown scene " +
                          std::to_string(q.scene_id));
    q.answer = execute(q.program, *it->second);

    if (rec.contains("answer")) {
      const Answer stored = Answer::parse(value_string(rec.at("answer")));
      if (!(stored == q.answer))
        throw AnswerMismatch("question " + std::to_string(q.id) + ": stored answer '" + stored.to_string() +
                             "' but program executes to '" + q.answer.to_string() + "'");
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<Question> load_questions(const std::filesystem::path& path, const SceneIndex& scenes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open questions file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_questions(ss.str(), scenes);
}

std::string serialize_questions(const std::vector<Question>& questions) {
  json records = json::array();
  for (const auto& q : questions) {
    records.push_back({{"question_index", q.id},
                       {"image_index", q.scene_id},
                       {"question", q.text},
                       {"question_family", family_name(q.family)},
                       {"program", program_to_json(q.program)},
                       {"answer", q.answer.to_string()}});
  }
  return json{{"questions", std::move(records)}}.dump();
}

void save_questions(const std::vector<Question>& questions, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << serialize_questions(questions) << '\n';
}

}  // namespace vqa::question
