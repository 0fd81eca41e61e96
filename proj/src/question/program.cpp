#include "vqa/question.hpp"

#include <bit>
#include <charconv>
#include <variant>

namespace vqa::question {

namespace {

using scene::AttributeVocabulary;

constexpr std::array<std::string_view, 24> kPrimitiveNames{
    "scene",        "unique",         "relate",       "count",        "exist",         "filter_shape",
    "filter_color", "filter_size",    "filter_material", "query_shape", "query_color", "query_size",
    "query_material", "same_shape",   "same_color",   "same_size",    "same_material", "equal_integer",
    "less_than",    "greater_than",   "equal_shape",  "equal_color",  "equal_size",    "equal_material"};

constexpr std::array<std::string_view, 4> kRelationNames{"left", "right", "front", "behind"};

// Execution values. Object sets are bitmasks over scene object indices.
struct ObjectSet {
  std::uint64_t bits = 0;
};
struct ObjectRef {
  int index = -1;
};
struct AttributeValue {
  Attribute attribute;
  int value;
};
using Value = std::variant<ObjectSet, ObjectRef, int, bool, AttributeValue>;

const char* value_kind(const Value& v) {
  switch (v.index()) {
    case 0: return "object set";
    case 1: return "object";
    case 2: return "integer";
    case 3: return "boolean";
    default: return "attribute";
  }
}

template <typename T>
const T& expect(const std::vector<Value>& values, const ProgramNode& node, std::size_t slot, int node_index,
                const char* wanted) {
  if (slot >= node.inputs.size())
    throw InvalidProgram("node " + std::to_string(node_index) + " (" + std::string(primitive_name(node.kind)) +
                         ") is missing input " + std::to_string(slot));
  const Value& v = values[static_cast<std::size_t>(node.inputs[slot])];
  if (const T* p = std::get_if<T>(&v)) return *p;
  throw InvalidProgram("node " + std::to_string(node_index) + " (" + std::string(primitive_name(node.kind)) +
                       ") expects " + wanted + " but input " + std::to_string(slot) + " is " + value_kind(v));
}

Attribute attribute_of(Primitive p) {
  switch (p) {
    case Primitive::filter_shape:
    case Primitive::query_shape:
    case Primitive::same_shape:
    case Primitive::equal_shape: return Attribute::shape;
    case Primitive::filter_color:
    case Primitive::query_color:
    case Primitive::same_color:
    case Primitive::equal_color: return Attribute::color;
    case Primitive::filter_size:
    case Primitive::query_size:
    case Primitive::same_size:
    case Primitive::equal_size: return Attribute::size;
    default: return Attribute::material;
  }
}

Eigen::Vector3d direction(const scene::SceneFrame& frame, Relation r) {
  switch (r) {
    case Relation::left: return -frame.right;
    case Relation::right: return frame.right;
    case Relation::front: return -frame.behind;
    case Relation::behind: return frame.behind;
  }
  return Eigen::Vector3d::Zero();
}

}  // namespace

std::string_view primitive_name(Primitive p) { return kPrimitiveNames[static_cast<std::size_t>(p)]; }

Primitive parse_primitive(std::string_view name) {
  for (std::size_t i = 0; i < kPrimitiveNames.size(); ++i)
    if (kPrimitiveNames[i] == name) return static_cast<Primitive>(i);
  throw UnknownPrimitive("unknown program primitive '" + std::string(name) + "'");
}

std::string_view relation_name(Relation r) { return kRelationNames[static_cast<std::size_t>(r)]; }

Relation parse_relation(std::string_view name) {
  for (std::size_t i = 0; i < kRelationNames.size(); ++i)
    if (kRelationNames[i] == name) return static_cast<Relation>(i);
  throw InvalidProgram("unknown relation '" + std::string(name) + "'");
}

Primitive filter_primitive(Attribute a) { return static_cast<Primitive>(static_cast<int>(Primitive::filter_shape) + static_cast<int>(a)); }
Primitive query_primitive(Attribute a) { return static_cast<Primitive>(static_cast<int>(Primitive::query_shape) + static_cast<int>(a)); }
Primitive same_primitive(Attribute a) { return static_cast<Primitive>(static_cast<int>(Primitive::same_shape) + static_cast<int>(a)); }
Primitive equal_primitive(Attribute a) { return static_cast<Primitive>(static_cast<int>(Primitive::equal_shape) + static_cast<int>(a)); }

std::string_view family_name(QuestionFamily f) {
  switch (f) {
    case QuestionFamily::count: return "count";
    case QuestionFamily::exist: return "exist";
    case QuestionFamily::compare_number: return "compare_number";
    case QuestionFamily::query_attribute: return "query_attribute";
    case QuestionFamily::compare_attribute: return "compare_attribute";
  }
  return {};
}

QuestionFamily parse_family(std::string_view name) {
  for (QuestionFamily f : kFamilies)
    if (family_name(f) == name) return f;
  throw DataError("unknown question family '" + std::string(name) + "'");
}

AnswerType answer_type(QuestionFamily f) {
  switch (f) {
    case QuestionFamily::count: return AnswerType::count;
    case QuestionFamily::query_attribute: return AnswerType::attribute;
    default: return AnswerType::binary;
  }
}

QuestionFamily family_of(const Program& program) {
  if (program.output < 0 || program.output >= static_cast<int>(program.nodes.size()))
    throw InvalidProgram("program has no terminal node");
  switch (program.nodes[static_cast<std::size_t>(program.output)].kind) {
    case Primitive::count: return QuestionFamily::count;
    case Primitive::exist: return QuestionFamily::exist;
    case Primitive::equal_integer:
    case Primitive::less_than:
    case Primitive::greater_than: return QuestionFamily::compare_number;
    case Primitive::query_shape:
    case Primitive::query_color:
    case Primitive::query_size:
    case Primitive::query_material: return QuestionFamily::query_attribute;
    case Primitive::equal_shape:
    case Primitive::equal_color:
    case Primitive::equal_size:
    case Primitive::equal_material: return QuestionFamily::compare_attribute;
    default:
      throw InvalidProgram("terminal primitive '" +
                           std::string(primitive_name(program.nodes[static_cast<std::size_t>(program.output)].kind)) +
                           "' does not produce an answer");
  }
}

std::string Answer::to_string() const {
  switch (type) {
    case AnswerType::binary: return value ? "yes" : "no";
    case AnswerType::count: return std::to_string(value);
    case AnswerType::attribute: return std::string(AttributeVocabulary::answer_name(value));
  }
  return {};
}

Answer Answer::parse(std::string_view text) {
  if (text == "yes" || text == "true") return boolean(true);
  if (text == "no" || text == "false") return boolean(false);
  int n = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
  if (ec == std::errc() && ptr == text.data() + text.size()) return count(n);
  const int idx = AttributeVocabulary::lookup_word(text);
  if (idx < 0) throw scene::VocabularyError("unknown answer '" + std::string(text) + "'");
  return attribute(idx);
}

Answer execute(const Program& program, const Scene& scene) {
  const int n_objects = static_cast<int>(scene.objects.size());
  if (n_objects > 64) throw InvalidProgram("scene has more than 64 objects");
  if (program.nodes.empty() || program.output < 0 || program.output >= static_cast<int>(program.nodes.size()))
    throw InvalidProgram("empty program or terminal index out of range");
  const std::uint64_t all = n_objects == 64 ? ~0ULL : ((1ULL << n_objects) - 1);

  std::vector<Value> values;
  values.reserve(program.nodes.size());
  for (std::size_t i = 0; i < program.nodes.size(); ++i) {
    const auto& node = program.nodes[i];
    const int ni = static_cast<int>(i);
    for (int in : node.inputs)
      if (in < 0 || in >= ni)
        throw InvalidProgram("node " + std::to_string(ni) + " references input " + std::to_string(in) +
                             " that does not precede it");

    switch (node.kind) {
      case Primitive::scene: values.emplace_back(ObjectSet{all}); break;
      case Primitive::unique: {
        const auto& s = expect<ObjectSet>(values, node, 0, ni, "an object set");
        const int c = std::popcount(s.bits);
        if (c != 1)
          throw InvalidProgram("unique at node " + std::to_string(ni) + " applied to a set of " + std::to_string(c) +
                               " objects");
        values.emplace_back(ObjectRef{std::countr_zero(s.bits)});
        break;
      }
      case Primitive::relate: {
        const auto& ref = expect<ObjectRef>(values, node, 0, ni, "an object");
        if (node.value < 0 || node.value > 3) throw InvalidProgram("relate at node " + std::to_string(ni) + " has no relation");
        const Eigen::Vector3d dir = direction(scene.frame, static_cast<Relation>(node.value));
        const auto& anchor = scene.objects[static_cast<std::size_t>(ref.index)].position;
        std::uint64_t bits = 0;
        for (int j = 0; j < n_objects; ++j)
          if (j != ref.index && (scene.objects[static_cast<std::size_t>(j)].position - anchor).dot(dir) > 0.0)
            bits |= 1ULL << j;
        values.emplace_back(ObjectSet{bits});
        break;
      }
      case Primitive::count:
        values.emplace_back(std::popcount(expect<ObjectSet>(values, node, 0, ni, "an object set").bits));
        break;
      case Primitive::exist:
        values.emplace_back(expect<ObjectSet>(values, node, 0, ni, "an object set").bits != 0);
        break;
      case Primitive::filter_shape:
      case Primitive::filter_color:
      case Primitive::filter_size:
      case Primitive::filter_material: {
        const Attribute a = attribute_of(node.kind);
        if (node.value < 0 || node.value >= AttributeVocabulary::cardinality(a))
          throw InvalidProgram("filter at node " + std::to_string(ni) + " has an invalid value");
        const auto& s = expect<ObjectSet>(values, node, 0, ni, "an object set");
        std::uint64_t bits = 0;
        for (int j = 0; j < n_objects; ++j)
          if ((s.bits >> j & 1ULL) && scene.objects[static_cast<std::size_t>(j)].attribute(a) == node.value)
            bits |= 1ULL << j;
        values.emplace_back(ObjectSet{bits});
        break;
      }
      case Primitive::query_shape:
      case Primitive::query_color:
      case Primitive::query_size:
      case Primitive::query_material: {
        const Attribute a = attribute_of(node.kind);
        const auto& ref = expect<ObjectRef>(values, node, 0, ni, "an object");
        values.emplace_back(AttributeValue{a, scene.objects[static_cast<std::size_t>(ref.index)].attribute(a)});
        break;
      }
      case Primitive::same_shape:
      case Primitive::same_color:
      case Primitive::same_size:
      case Primitive::same_material: {
        const Attribute a = attribute_of(node.kind);
        const auto& ref = expect<ObjectRef>(values, node, 0, ni, "an object");
        const int target = scene.objects[static_cast<std::size_t>(ref.index)].attribute(a);
        std::uint64_t bits = 0;
        for (int j = 0; j < n_objects; ++j)
          if (j != ref.index && scene.objects[static_cast<std::size_t>(j)].attribute(a) == target) bits |= 1ULL << j;
        values.emplace_back(ObjectSet{bits});
        break;
      }
      case Primitive::equal_integer:
      case Primitive::less_than:
      case Primitive::greater_than: {
        const int lhs = expect<int>(values, node, 0, ni, "an integer");
        const int rhs = expect<int>(values, node, 1, ni, "an integer");
        const bool r = node.kind == Primitive::equal_integer ? lhs == rhs
                       : node.kind == Primitive::less_than   ? lhs < rhs
                                                             : lhs > rhs;
        values.emplace_back(r);
        break;
      }
      case Primitive::equal_shape:
      case Primitive::equal_color:
      case Primitive::equal_size:
      case Primitive::equal_material: {
        const Attribute a = attribute_of(node.kind);
        const auto& lhs = expect<AttributeValue>(values, node, 0, ni, "an attribute");
        const auto& rhs = expect<AttributeValue>(values, node, 1, ni, "an attribute");
        if (lhs.attribute != a || rhs.attribute != a)
          throw InvalidProgram("node " + std::to_string(ni) + " compares attributes of the wrong kind");
        values.emplace_back(lhs.value == rhs.value);
        break;
      }
    }
  }

  const Value& out = values[static_cast<std::size_t>(program.output)];
  if (const bool* b = std::get_if<bool>(&out)) return Answer::boolean(*b);
  if (const int* c = std::get_if<int>(&out)) return Answer::count(*c);
  if (const auto* a = std::get_if<AttributeValue>(&out))
    return Answer::attribute(AttributeVocabulary::answer_index(a->attribute, a->value));
  throw InvalidProgram(std::string("program terminal yields ") + value_kind(out) + ", not an answer");
}

}  // namespace vqa::question
