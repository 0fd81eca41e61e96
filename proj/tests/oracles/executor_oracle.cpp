#include "oracles.hpp"

#include <sstream>

namespace vqa::oracle {

using question::Answer;
using question::ObjectFilter;
using question::QuestionSpec;
using question::Relation;
using question::Template;
using scene::Attribute;
using scene::AttributeVocabulary;
using scene::ObjectSpec;
using scene::Scene;

namespace {

bool matches(const ObjectFilter& f, const ObjectSpec& o) {
  return (f.values[0] < 0 || f.values[0] == o.shape) && (f.values[1] < 0 || f.values[1] == o.color) &&
         (f.values[2] < 0 || f.values[2] == o.size) && (f.values[3] < 0 || f.values[3] == o.material);
}

std::vector<int> members(const ObjectFilter& f, const Scene& s, const std::vector<int>& pool) {
  std::vector<int> out;
  for (int i : pool)
    if (matches(f, s.objects[static_cast<std::size_t>(i)])) out.push_back(i);
  return out;
}

std::vector<int> everyone(const Scene& s) {
  std::vector<int> all(s.objects.size());
  std::iota(all.begin(), all.end(), 0);
  return all;
}

// Objects standing strictly on the `r` side of `anchor`.
std::vector<int> related(const Scene& s, int anchor, Relation r) {
  const auto& right = s.frame.right;
  const auto& behind = s.frame.behind;
  const auto& pa = s.objects[static_cast<std::size_t>(anchor)].position;
  std::vector<int> out;
  for (int j = 0; j < static_cast<int>(s.objects.size()); ++j) {
    if (j == anchor) continue;
    const Eigen::Vector3d d = s.objects[static_cast<std::size_t>(j)].position - pa;
    const double x = d.dot(right), y = d.dot(behind);
    const bool in = r == Relation::left ? x < 0 : r == Relation::right ? x > 0 : r == Relation::front ? y < 0 : y > 0;
    if (in) out.push_back(j);
  }
  return out;
}

int attr(const Scene& s, int i, Attribute a) {
  const auto& o = s.objects[static_cast<std::size_t>(i)];
  switch (a) {
    case Attribute::shape: return o.shape;
    case Attribute::color: return o.color;
    case Attribute::size: return o.size;
    case Attribute::material: return o.material;
  }
  return -1;
}

}  // namespace

std::optional<Answer> brute_force_answer(const QuestionSpec& q, const Scene& s) {
  const auto all = everyone(s);
  auto the = [&](const ObjectFilter& f, const std::vector<int>& pool) -> std::optional<int> {
    const auto m = members(f, s, pool);
    if (m.size() != 1) return std::nullopt;
    return m.front();
  };
  switch (q.tmpl) {
    case Template::count_filter: return Answer::count(static_cast<int>(members(q.a, s, all).size()));
    case Template::exist_filter: return Answer::boolean(!members(q.a, s, all).empty());
    case Template::count_relate:
    case Template::exist_relate: {
      const auto anchor = the(q.b, all);
      if (!anchor) return std::nullopt;
      const auto n = members(q.a, s, related(s, *anchor, q.relation)).size();
      return q.tmpl == Template::count_relate ? Answer::count(static_cast<int>(n)) : Answer::boolean(n > 0);
    }
    case Template::count_same: {
      const auto anchor = the(q.a, all);
      if (!anchor) return std::nullopt;
      int n = 0;
      for (int j : all)
        if (j != *anchor && attr(s, j, q.attribute) == attr(s, *anchor, q.attribute)) ++n;
      return Answer::count(n);
    }
    case Template::compare_equal:
    case Template::compare_more:
    case Template::compare_fewer: {
      const auto na = members(q.a, s, all).size(), nb = members(q.b, s, all).size();
      return Answer::boolean(q.tmpl == Template::compare_equal  ? na == nb
                             : q.tmpl == Template::compare_more ? na > nb
                                                                : na < nb);
    }
    case Template::query_filter: {
      const auto o = the(q.a, all);
      if (!o) return std::nullopt;
      return Answer::attribute(AttributeVocabulary::answer_index(q.attribute, attr(s, *o, q.attribute)));
    }
    case Template::query_relate: {
      const auto anchor = the(q.b, all);
      if (!anchor) return std::nullopt;
      const auto o = the(q.a, related(s, *anchor, q.relation));
      if (!o) return std::nullopt;
      return Answer::attribute(AttributeVocabulary::answer_index(q.attribute, attr(s, *o, q.attribute)));
    }
    case Template::compare_attribute: {
      const auto x = the(q.a, all), y = the(q.b, all);
      if (!x || !y) return std::nullopt;
      return Answer::boolean(attr(s, *x, q.attribute) == attr(s, *y, q.attribute));
    }
  }
  return std::nullopt;
}

std::vector<Scene> enumerate_scenes(const ReducedVocabulary& v) {
  std::vector<ObjectSpec> kinds;
  for (int sh = 0; sh < v.shapes; ++sh)
    for (int co = 0; co < v.colors; ++co)
      for (int si = 0; si < v.sizes; ++si)
        for (int ma = 0; ma < v.materials; ++ma) kinds.push_back({sh, co, si, ma, Eigen::Vector3d::Zero()});
  const int cells = v.grid * v.grid;
  std::vector<Scene> scenes;
  std::int64_t id = 0;
  // Recursive choice of increasing cells, each with any object kind.
  std::vector<ObjectSpec> current;
  std::function<void(int)> rec = [&](int first_cell) {
    Scene s;
    s.id = id++;
    s.objects = current;
    scenes.push_back(s);
    if (static_cast<int>(current.size()) == v.max_objects) return;
    for (int c = first_cell; c < cells; ++c)
      for (const auto& k : kinds) {
        ObjectSpec o = k;
        o.position = Eigen::Vector3d(2.0 * (c % v.grid - 1), 2.0 * (c / v.grid - 1), 0.35);
        current.push_back(o);
        rec(c + 1);
        current.pop_back();
      }
  };
  rec(0);
  return scenes;
}

std::vector<ObjectFilter> enumerate_filters(const ReducedVocabulary& v, bool with_size_material) {
  std::vector<ObjectFilter> out;
  const int sizes = with_size_material ? v.sizes : 0;
  const int materials = with_size_material ? v.materials : 0;
  for (int sh = -1; sh < v.shapes; ++sh)
    for (int co = -1; co < v.colors; ++co)
      for (int si = -1; si < sizes; ++si)
        for (int ma = -1; ma < materials; ++ma) {
          ObjectFilter f;
          f.values = {sh, co, si, ma};
          out.push_back(f);
        }
  return out;
}

std::vector<QuestionSpec> enumerate_specs(const ReducedVocabulary& v) {
  const auto full = enumerate_filters(v, true);
  const auto small = enumerate_filters(v, false);
  std::vector<QuestionSpec> out;
  for (int t = 0; t < question::kTemplateCount; ++t) {
    const auto tmpl = static_cast<Template>(t);
    const bool pair = tmpl == Template::count_relate || tmpl == Template::exist_relate ||
                      tmpl == Template::compare_equal || tmpl == Template::compare_more ||
                      tmpl == Template::compare_fewer || tmpl == Template::query_relate ||
                      tmpl == Template::compare_attribute;
    const bool uses_relation = tmpl == Template::count_relate || tmpl == Template::exist_relate ||
                               tmpl == Template::query_relate;
    const bool uses_attribute = tmpl == Template::count_same || tmpl == Template::query_filter ||
                                tmpl == Template::query_relate || tmpl == Template::compare_attribute;
    const auto& as = pair ? small : full;
    const std::vector<ObjectFilter> bs = pair ? small : std::vector<ObjectFilter>{ObjectFilter{}};
    for (const auto& a : as)
      for (const auto& b : bs)
        for (int r = 0; r < (uses_relation ? 4 : 1); ++r)
          for (int at = 0; at < (uses_attribute ? 4 : 1); ++at) {
            QuestionSpec q;
            q.tmpl = tmpl;
            q.a = a;
            q.b = b;
            q.relation = static_cast<Relation>(r);
            q.attribute = static_cast<Attribute>(at);
            out.push_back(q);
          }
  }
  return out;
}

ExecutorAgreement check_executor(const ReducedVocabulary& v) {
  ExecutorAgreement r;
  r.templates_seen.assign(question::kTemplateCount, 0);
  const auto scenes = enumerate_scenes(v);
  const auto specs = enumerate_specs(v);
  std::vector<question::Program> programs;
  programs.reserve(specs.size());
  for (const auto& q : specs) programs.push_back(question::build_program(q));
  r.scenes = static_cast<long>(scenes.size());
  for (const auto& s : scenes)
    for (std::size_t i = 0; i < specs.size(); ++i) {
      ++r.cases;
      ++r.templates_seen[static_cast<std::size_t>(specs[i].tmpl)];
      const auto expected = brute_force_answer(specs[i], s);
      std::optional<Answer> got;
      try {
        got = question::execute(programs[i], s);
      } catch (const question::InvalidProgram&) {
      }
      if (expected == got) {
        (expected ? r.answered : r.invalid) += 1;
        continue;
      }
      if (r.mismatches++ == 0) {
        std::ostringstream m;
        m << "scene " << s.id << " (" << s.objects.size() << " objects), template "
          << question::template_name(specs[i].tmpl) << ": expected " << (expected ? expected->to_string() : "invalid")
          << ", executor " << (got ? got->to_string() : "invalid");
        r.first_mismatch = m.str();
      }
    }
  return r;
}

}  // namespace vqa::oracle
