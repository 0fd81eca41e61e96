#include "vqa/question.hpp"

#include <random>

namespace vqa::question {

namespace {

using scene::AttributeVocabulary;
using scene::ObjectSpec;

// CLEVR filter order inside a noun phrase chain.
constexpr std::array<Attribute, 4> kChainOrder{Attribute::size, Attribute::color, Attribute::material, Attribute::shape};

std::string noun_phrase(const ObjectFilter& f, bool plural) {
  std::string out;
  for (Attribute a : {Attribute::size, Attribute::color, Attribute::material}) {
    if (f[a] < 0) continue;
    out += AttributeVocabulary::name(a, f[a]);
    out += ' ';
  }
  if (f[Attribute::shape] >= 0)
    out += AttributeVocabulary::name(Attribute::shape, f[Attribute::shape]);
  else
    out += "thing";
  if (plural) out += 's';
  return out;
}

std::string relation_phrase(Relation r) {
  switch (r) {
    case Relation::left: return "left of";
    case Relation::right: return "right of";
    case Relation::front: return "in front of";
    case Relation::behind: return "behind";
  }
  return {};
}

int chain(Program& p, int input, const ObjectFilter& f) {
  int node = input;
  for (Attribute a : kChainOrder)
    if (f[a] >= 0) node = p.add(filter_primitive(a), {node}, f[a]);
  return node;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Sampler {
 public:
  Sampler(const Scene& scene, std::mt19937_64& rng) : scene_(scene), rng_(rng) {}

  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }
  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  Attribute attribute() { return scene::kAttributes[static_cast<std::size_t>(uniform(0, 3))]; }
  Relation relation() { return static_cast<Relation>(uniform(0, 3)); }

  /// Random subset of an object's attributes.
  ObjectFilter from_object(const ObjectSpec& o, std::optional<Attribute> exclude = std::nullopt) {
    ObjectFilter f;
    for (Attribute a : scene::kAttributes)
      if (a != exclude && coin(a == Attribute::shape ? 0.6 : 0.4)) f[a] = o.attribute(a);
    return f;
  }

  ObjectFilter random_filter() {
    ObjectFilter f;
    for (Attribute a : scene::kAttributes)
      if (coin(a == Attribute::shape ? 0.5 : 0.3)) f[a] = uniform(0, AttributeVocabulary::cardinality(a) - 1);
    return f;
  }

  /// Mixture: half the time anchored on a real object so sets are often non-empty.
  ObjectFilter mixed_filter() {
    if (!scene_.objects.empty() && coin()) return from_object(random_object());
    return random_filter();
  }

  const ObjectSpec& random_object() {
    return scene_.objects[static_cast<std::size_t>(uniform(0, static_cast<int>(scene_.objects.size()) - 1))];
  }

  std::optional<QuestionSpec> draw(Template t) {
    QuestionSpec q;
    q.tmpl = t;
    const bool has_objects = !scene_.objects.empty();
    switch (t) {
      case Template::count_filter:
      case Template::exist_filter: q.a = mixed_filter(); break;
      case Template::count_relate:
      case Template::exist_relate:
        if (!has_objects) return std::nullopt;
        q.b = from_object(random_object());
        q.relation = relation();
        q.a = mixed_filter();
        break;
      case Template::count_same:
        if (!has_objects) return std::nullopt;
        q.attribute = attribute();
        q.a = from_object(random_object(), q.attribute);
        break;
      case Template::compare_equal:
      case Template::compare_more:
      case Template::compare_fewer:
        q.a = mixed_filter();
        q.b = mixed_filter();
        if (q.a == q.b) return std::nullopt;
        break;
      case Template::query_filter:
        if (!has_objects) return std::nullopt;
        q.attribute = attribute();
        q.a = from_object(random_object(), q.attribute);
        break;
      case Template::query_relate:
        if (!has_objects) return std::nullopt;
        q.attribute = attribute();
        q.b = from_object(random_object());
        q.relation = relation();
        q.a = from_object(random_object(), q.attribute);
        break;
      case Template::compare_attribute: {
        if (scene_.objects.size() < 2) return std::nullopt;
        q.attribute = attribute();
        const int i = uniform(0, static_cast<int>(scene_.objects.size()) - 1);
        int j = uniform(0, static_cast<int>(scene_.objects.size()) - 2);
        if (j >= i) ++j;
        q.a = from_object(scene_.objects[static_cast<std::size_t>(i)], q.attribute);
        q.b = from_object(scene_.objects[static_cast<std::size_t>(j)], q.attribute);
        break;
      }
    }
    return q;
  }

 private:
  const Scene& scene_;
  std::mt19937_64& rng_;
};

}  // namespace

bool ObjectFilter::matches(const scene::ObjectSpec& o) const {
  for (Attribute a : scene::kAttributes)
    if ((*this)[a] >= 0 && o.attribute(a) != (*this)[a]) return false;
  return true;
}

std::string_view template_name(Template t) {
  static constexpr std::array<std::string_view, kTemplateCount> names{
      "count_filter",  "count_relate", "count_same",   "exist_filter", "exist_relate",     "compare_equal",
      "compare_more",  "compare_fewer", "query_filter", "query_relate", "compare_attribute"};
  return names[static_cast<std::size_t>(t)];
}

QuestionFamily template_family(Template t) {
  switch (t) {
    case Template::count_filter:
    case Template::count_relate:
    case Template::count_same: return QuestionFamily::count;
    case Template::exist_filter:
    case Template::exist_relate: return QuestionFamily::exist;
    case Template::compare_equal:
    case Template::compare_more:
    case Template::compare_fewer: return QuestionFamily::compare_number;
    case Template::query_filter:
    case Template::query_relate: return QuestionFamily::query_attribute;
    case Template::compare_attribute: return QuestionFamily::compare_attribute;
  }
  return QuestionFamily::count;
}

std::vector<Template> family_templates(QuestionFamily f) {
  std::vector<Template> out;
  for (int i = 0; i < kTemplateCount; ++i)
    if (template_family(static_cast<Template>(i)) == f) out.push_back(static_cast<Template>(i));
  return out;
}

Program build_program(const QuestionSpec& q) {
  Program p;
  switch (q.tmpl) {
    case Template::count_filter: p.add(Primitive::count, {chain(p, p.add(Primitive::scene), q.a)}); break;
    case Template::exist_filter: p.add(Primitive::exist, {chain(p, p.add(Primitive::scene), q.a)}); break;
    case Template::count_relate:
    case Template::exist_relate: {
      const int anchor = p.add(Primitive::unique, {chain(p, p.add(Primitive::scene), q.b)});
      const int related = p.add(Primitive::relate, {anchor}, static_cast<int>(q.relation));
      const int target = chain(p, related, q.a);
      p.add(q.tmpl == Template::count_relate ? Primitive::count : Primitive::exist, {target});
      break;
    }
    case Template::count_same: {
      const int anchor = p.add(Primitive::unique, {chain(p, p.add(Primitive::scene), q.a)});
      p.add(Primitive::count, {p.add(same_primitive(q.attribute), {anchor})});
      break;
    }
    case Template::compare_equal:
    case Template::compare_more:
    case Template::compare_fewer: {
      const int lhs = p.add(Primitive::count, {chain(p, p.add(Primitive::scene), q.a)});
      const int rhs = p.add(Primitive::count, {chain(p, p.add(Primitive::scene), q.b)});
      const Primitive cmp = q.tmpl == Template::compare_equal  ? Primitive::equal_integer
                            : q.tmpl == Template::compare_more ? Primitive::greater_than
                                                               : Primitive::less_than;
      p.add(cmp, {lhs, rhs});
      break;
    }
    case Template::query_filter: {
      const int obj = p.add(Primitive::unique, {chain(p, p.add(Primitive::scene), q.a)});
      p.add(query_primitive(q.attribute), {obj});
      break;
    }
    case Template::query_relate: {
      const int anchor = p.add(Primitive::unique, {chain(p, p.add(Primitive::scene), q.b)});
      const int related = p.add(Primitive::relate, {anchor}, static_cast<int>(q.relation));
      const int obj = p.add(Primitive::unique, {chain(p, related, q.a)});
      p.add(query_primitive(q.attribute), {obj});
      break;
    }
    case Template::compare_attribute: {
      const int lhs = p.add(query_primitive(q.attribute), {p.add(Primitive::unique, {chain(p, p.add(Primitive::scene), q.a)})});
      const int rhs = p.add(query_primitive(q.attribute), {p.add(Primitive::unique, {chain(p, p.add(Primitive::scene), q.b)})});
      p.add(equal_primitive(q.attribute), {lhs, rhs});
      break;
    }
  }
  return p;
}

std::string render_text(const QuestionSpec& q) {
  const std::string attr(AttributeVocabulary::attribute_name(q.attribute));
  switch (q.tmpl) {
    case Template::count_filter: return "How many " + noun_phrase(q.a, true) + " are there?";
    case Template::count_relate:
      return "How many " + noun_phrase(q.a, true) + " are " + relation_phrase(q.relation) + " the " +
             noun_phrase(q.b, false) + "?";
    case Template::count_same:
      return "How many other things have the same " + attr + " as the " + noun_phrase(q.a, false) + "?";
    case Template::exist_filter: return "Are there any " + noun_phrase(q.a, true) + "?";
    case Template::exist_relate:
      return "Are there any " + noun_phrase(q.a, true) + " " + relation_phrase(q.relation) + " the " +
             noun_phrase(q.b, false) + "?";
    case Template::compare_equal:
      return "Are there the same number of " + noun_phrase(q.a, true) + " and " + noun_phrase(q.b, true) + "?";
    case Template::compare_more:
      return "Are there more " + noun_phrase(q.a, true) + " than " + noun_phrase(q.b, true) + "?";
    case Template::compare_fewer:
      return "Are there fewer " + noun_phrase(q.a, true) + " than " + noun_phrase(q.b, true) + "?";
    case Template::query_filter: return "What is the " + attr + " of the " + noun_phrase(q.a, false) + "?";
    case Template::query_relate:
      return "What is the " + attr + " of the " + noun_phrase(q.a, false) + " that is " +
             relation_phrase(q.relation) + " the " + noun_phrase(q.b, false) + "?";
    case Template::compare_attribute:
      return "Does the " + noun_phrase(q.a, false) + " have the same " + attr + " as the " + noun_phrase(q.b, false) +
             "?";
  }
  return {};
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::int64_t scene_id) {
  return splitmix64(splitmix64(global_seed) ^ static_cast<std::uint64_t>(scene_id));
}

bool answer_is_edit_sensitive(const Program& program, const Scene& scene, const Answer& answer) {
  Scene edited = scene;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    for (Attribute a : scene::kAttributes) {
      const int original = scene.objects[i].attribute(a);
      for (int v = 0; v < AttributeVocabulary::cardinality(a); ++v) {
        if (v == original) continue;
        edited.objects[i].set_attribute(a, v);
        bool differs = false;
        try {
          differs = !(execute(program, edited) == answer);
        } catch (const InvalidProgram&) {
        }
        edited.objects[i].set_attribute(a, original);
        if (differs) return true;
      }
    }
  }
  return false;
}

std::vector<Question> generate_questions(const Scene& scene, std::uint64_t seed, const FamilyCounts& per_family,
                                         std::int64_t first_id, const GenerationOptions& options) {
  std::mt19937_64 rng(seed);
  Sampler sampler(scene, rng);
  std::vector<Question> out;
  std::int64_t next_id = first_id;

  for (QuestionFamily family : kFamilies) {
    auto it = per_family.find(family);
    const int wanted = it == per_family.end() ? 0 : it->second;
    if (wanted < 0) throw GenerationExhausted("negative question count for family " + std::string(family_name(family)));
    const auto templates = family_templates(family);
    const bool binary = answer_type(family) == AnswerType::binary;

    for (int k = 0; k < wanted; ++k) {
      const bool target = sampler.coin();
      bool accepted = false;
      for (int attempt = 0; attempt < options.max_attempts && !accepted; ++attempt) {
        const Template t = templates[static_cast<std::size_t>(sampler.uniform(0, static_cast<int>(templates.size()) - 1))];
        const auto spec = sampler.draw(t);
        if (!spec) continue;
        Program program = build_program(*spec);
        Answer answer;
        try {
          answer = execute(program, scene);
        } catch (const InvalidProgram&) {
          continue;
        }
        // Balance binary answers; relax in the second half of the attempt budget.
        if (binary && options.balance_binary && attempt < options.max_attempts / 2 && (answer.value != 0) != target)
          continue;
        if (options.degeneracy_filter && !answer_is_edit_sensitive(program, scene, answer)) continue;
        out.push_back({next_id++, scene.id, family, std::move(program), render_text(*spec), answer});
        accepted = true;
      }
      if (!accepted)
        throw GenerationExhausted("could not generate a " + std::string(family_name(family)) + " question for scene " +
                                  std::to_string(scene.id) + " after " + std::to_string(options.max_attempts) +
                                  " attempts");
    }
  }
  return out;
}

}  // namespace vqa::question
