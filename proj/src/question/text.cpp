#include "vqa/question.hpp"

#include <cctype>
#include <random>

namespace vqa::question {

TextVocabulary::TextVocabulary() : TextVocabulary(std::vector<std::string>{}) {}

TextVocabulary::TextVocabulary(const std::vector<std::string>& words) {
  for (const char* reserved : {"<pad>", "<s>", "<unk>"}) {
    ids_.emplace(reserved, static_cast<int>(words_.size()));
    words_.emplace_back(reserved);
  }
  for (const auto& w : words) {
    if (ids_.contains(w)) continue;
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
}

TextVocabulary TextVocabulary::builtin() {
  std::vector<std::string> words{"how",  "many",   "are",   "there", "any",    "the",  "same", "number", "of",
                                 "and",  "more",   "than",  "fewer", "what",   "is",   "that", "does",   "have",
                                 "as",   "left",   "right", "in",    "front",  "behind", "thing", "things", "other",
                                 "shape", "color", "size",  "material"};
  using scene::AttributeVocabulary;
  for (auto s : AttributeVocabulary::shapes) {
    words.emplace_back(s);
    words.emplace_back(std::string(s) + "s");
  }
  for (auto c : AttributeVocabulary::colors) words.emplace_back(c);
  for (auto s : AttributeVocabulary::sizes) words.emplace_back(s);
  for (auto m : AttributeVocabulary::materials) words.emplace_back(m);
  return TextVocabulary(words);
}

int TextVocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnknown : it->second;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens{"<s>"};
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (std::ispunct(c) && ch != '-' && ch != '\'') {
      continue;
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

VectorF embedding_row(int token_id, std::uint64_t seed, int d_text) {
  if (d_text < 8) throw ConfigError("text embedding dimension must be at least 8");
  std::mt19937_64 rng(derive_seed(seed, token_id));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  VectorF row(d_text);
  for (int i = 0; i < d_text; ++i) row(i) = normal(rng);
  return row;
}

MatrixF embedding_table(const TextVocabulary& vocab, std::uint64_t seed, int d_text) {
  MatrixF table(vocab.size(), d_text);
  for (int id = 0; id < vocab.size(); ++id) table.row(id) = embedding_row(id, seed, d_text).transpose();
  return table;
}

std::vector<int> encode_text(std::string_view text, const TextVocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(vocab.id(tok));
  return ids;
}

TextTokens embed_text(std::string_view text, const TextVocabulary& vocab, std::uint64_t seed, int d_text) {
  TextTokens out;
  out.ids = encode_text(text, vocab);
  out.embedding.resize(static_cast<Eigen::Index>(out.ids.size()), d_text);
  for (std::size_t i = 0; i < out.ids.size(); ++i)
    out.embedding.row(static_cast<Eigen::Index>(i)) = embedding_row(out.ids[i], seed, d_text).transpose();
  return out;
}

}  // namespace vqa::question
