#pragma once

#include "vqa/common.hpp"
#include "vqa/scene.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vqa::question {

using scene::Attribute;
using scene::Scene;

// ---------------------------------------------------------------------------
// Functional programs
// ---------------------------------------------------------------------------

enum class Primitive : int {
  scene,
  unique,
  relate,
  count,
  exist,
  filter_shape,
  filter_color,
  filter_size,
  filter_material,
  query_shape,
  query_color,
  query_size,
  query_material,
  same_shape,
  same_color,
  same_size,
  same_material,
  equal_integer,
  less_than,
  greater_than,
  equal_shape,
  equal_color,
  equal_size,
  equal_material,
};

enum class Relation : int { left = 0, right = 1, front = 2, behind = 3 };

std::string_view primitive_name(Primitive p);
/// Throws UnknownPrimitive.
Primitive parse_primitive(std::string_view name);
std::string_view relation_name(Relation r);
Relation parse_relation(std::string_view name);

Primitive filter_primitive(Attribute a);
Primitive query_primitive(Attribute a);
Primitive same_primitive(Attribute a);
Primitive equal_primitive(Attribute a);

/// One program step. `value` carries the side argument: an attribute value for
/// filter_*, a Relation for relate, unused (-1) otherwise.
struct ProgramNode {
  Primitive kind = Primitive::scene;
  int value = -1;
  std::vector<int> inputs;
  bool operator==(const ProgramNode&) const = default;
};

/// DAG in topological order; every input index precedes its consumer.
struct Program {
  std::vector<ProgramNode> nodes;
  int output = -1;

  int add(Primitive kind, std::vector<int> inputs = {}, int value = -1) {
    nodes.push_back({kind, value, std::move(inputs)});
    output = static_cast<int>(nodes.size()) - 1;
    return output;
  }
  bool operator==(const Program&) const = default;
};

enum class QuestionFamily : int { count = 0, exist = 1, compare_number = 2, query_attribute = 3, compare_attribute = 4 };
inline constexpr int kFamilyCount = 5;
inline constexpr std::array<QuestionFamily, kFamilyCount> kFamilies{
    QuestionFamily::count, QuestionFamily::exist, QuestionFamily::compare_number, QuestionFamily::query_attribute,
    QuestionFamily::compare_attribute};

enum class AnswerType : int { binary = 0, count = 1, attribute = 2 };
inline constexpr int kAnswerTypeCount = 3;
/// Count head covers 0..K.
inline constexpr int kCountClasses = scene::kMaxObjects + 1;

std::string_view family_name(QuestionFamily f);
QuestionFamily parse_family(std::string_view name);
AnswerType answer_type(QuestionFamily f);
/// Family implied by the program's terminal primitive.
QuestionFamily family_of(const Program& program);

/// Tagged answer: binary -> 0/1, count -> 0..K, attribute -> index into the 15-way vocabulary.
struct Answer {
  AnswerType type = AnswerType::binary;
  int value = 0;

  static Answer boolean(bool b) { return {AnswerType::binary, b ? 1 : 0}; }
  static Answer count(int n) { return {AnswerType::count, n}; }
  static Answer attribute(int answer_index) { return {AnswerType::attribute, answer_index}; }

  std::string to_string() const;
  /// Parses "yes"/"no"/"true"/"false", integers, and attribute names.
  static Answer parse(std::string_view text);
  bool operator==(const Answer&) const = default;
};

class InvalidProgram : public DataError {
 public:
  using DataError::DataError;
};

class UnknownPrimitive : public DataError {
 public:
  using DataError::DataError;
};

/// Runs the program over the scene. Deterministic; `unique` on a set whose size
/// is not 1 and any type mismatch raise InvalidProgram.
Answer execute(const Program& program, const Scene& scene);

// ---------------------------------------------------------------------------
// Templates and generation
// ---------------------------------------------------------------------------

/// Attribute constraints of a noun phrase; -1 means unconstrained.
struct ObjectFilter {
  std::array<int, 4> values{-1, -1, -1, -1};

  int& operator[](Attribute a) { return values[static_cast<std::size_t>(a)]; }
  int operator[](Attribute a) const { return values[static_cast<std::size_t>(a)]; }
  bool matches(const scene::ObjectSpec& o) const;
  bool operator==(const ObjectFilter&) const = default;
};

enum class Template : int {
  count_filter,
  count_relate,
  count_same,
  exist_filter,
  exist_relate,
  compare_equal,
  compare_more,
  compare_fewer,
  query_filter,
  query_relate,
  compare_attribute,
};
inline constexpr int kTemplateCount = 11;

std::string_view template_name(Template t);
QuestionFamily template_family(Template t);
std::vector<Template> family_templates(QuestionFamily f);

/// A template instantiation. Which fields matter depends on the template:
///   count_filter / exist_filter: a
///   count_relate / exist_relate: a (target set), relation, b (unique anchor)
///   count_same:                 a (unique anchor), attribute
///   compare_*:                  a, b
///   query_filter:               a (unique), attribute
///   query_relate:               a (unique among related), relation, b (anchor), attribute
///   compare_attribute:          a, b (both unique), attribute
struct QuestionSpec {
  Template tmpl = Template::count_filter;
  ObjectFilter a;
  ObjectFilter b;
  Relation relation = Relation::left;
  Attribute attribute = Attribute::shape;
  bool operator==(const QuestionSpec&) const = default;
};

Program build_program(const QuestionSpec& spec);
std::string render_text(const QuestionSpec& spec);

struct Question {
  std::int64_t id = 0;
  std::int64_t scene_id = 0;
  QuestionFamily family = QuestionFamily::count;
  Program program;
  std::string text;
  Answer answer;
};

class GenerationExhausted : public DataError {
 public:
  using DataError::DataError;
};

struct GenerationOptions {
  /// Candidate draws per requested question.
  int max_attempts = 400;
  /// Reject candidates whose answer survives every single-attribute edit of the scene.
  bool degeneracy_filter = true;
  /// For binary families, draw the target answer first and accept only matching candidates.
  bool balance_binary = true;
};

using FamilyCounts = std::map<QuestionFamily, int>;

/// Seeds derived per scene: (global seed, scene id) -> independent stream.
std::uint64_t derive_seed(std::uint64_t global_seed, std::int64_t scene_id);

/// Question ids are assigned consecutively from `first_id`.
std::vector<Question> generate_questions(const Scene& scene, std::uint64_t seed, const FamilyCounts& per_family,
                                         std::int64_t first_id = 0, const GenerationOptions& options = {});

/// True when the answer to `program` changes under at least one single-object,
/// single-attribute edit of `scene`.
bool answer_is_edit_sensitive(const Program& program, const Scene& scene, const Answer& answer);

// ---------------------------------------------------------------------------
// Question files
// ---------------------------------------------------------------------------

class SceneNotFound : public DataError {
 public:
  using DataError::DataError;
};

class AnswerMismatch : public DataError {
 public:
  using DataError::DataError;
};

using SceneIndex = std::unordered_map<std::int64_t, const Scene*>;
SceneIndex index_scenes(const std::vector<Scene>& scenes);

std::vector<Question> load_questions(const std::filesystem::path& path, const SceneIndex& scenes);
std::vector<Question> parse_questions(std::string_view json_text, const SceneIndex& scenes);
std::string serialize_questions(const std::vector<Question>& questions);
void save_questions(const std::vector<Question>& questions, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Frozen text embedding
// ---------------------------------------------------------------------------

class TextVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kUnknown = 2;

  TextVocabulary();  // reserved tokens only
  explicit TextVocabulary(const std::vector<std::string>& words);
  /// Every word the built-in templates can emit.
  static TextVocabulary builtin();

  int id(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(words_.size()); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

/// Lowercase, drop '?' and other punctuation, split on whitespace, prepend the start token.
std::vector<std::string> tokenize(std::string_view text);

struct TextTokens {
  std::vector<int> ids;
  MatrixF embedding;  // N_q x d_text
};

/// Frozen embedding row for one token id: a pure function of (id, seed).
VectorF embedding_row(int token_id, std::uint64_t seed, int d_text);
/// Full frozen table (vocab.size() x d_text).
MatrixF embedding_table(const TextVocabulary& vocab, std::uint64_t seed, int d_text);
std::vector<int> encode_text(std::string_view text, const TextVocabulary& vocab);
TextTokens embed_text(std::string_view text, const TextVocabulary& vocab, std::uint64_t seed, int d_text);

}  // namespace vqa::question
