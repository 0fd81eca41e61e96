#include "vqa/model.hpp"

#include <cmath>

namespace vqa::model {

using ad::Matrix;

void ReasoningConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("reasoning.") + name + " must be positive, got " + std::to_string(v));
  };
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(ffn_dim, "ffn_dim");
  positive(queries, "queries");
  positive(max_text_len, "max_text_len");
  positive(max_grid, "max_grid");
  if (encoder_layers < 0 || decoder_layers < 0) throw ConfigError("reasoning layer counts must be >= 0");
  if (d_model % heads != 0)
    throw ConfigError("reasoning.d_model " + std::to_string(d_model) + " is not divisible by heads " +
                      std::to_string(heads));
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("reasoning.dropout must lie in [0, 1)");
  if (activation != "relu") throw ConfigError("unsupported activation '" + activation + "' (only relu)");
}

void to_json(nlohmann::json& j, const ReasoningConfig& c) {
  j = {{"d_model", c.d_model},         {"encoder_layers", c.encoder_layers},
       {"decoder_layers", c.decoder_layers}, {"heads", c.heads},
       {"ffn_dim", c.ffn_dim},         {"queries", c.queries},
       {"dropout", c.dropout},         {"activation", c.activation},
       {"object_positions", c.object_positions}, {"max_text_len", c.max_text_len},
       {"max_grid", c.max_grid}};
}

void from_json(const nlohmann::json& j, ReasoningConfig& c) {
  const ReasoningConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
  c.heads = j.value("heads", d.heads);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.queries = j.value("queries", d.queries);
  c.dropout = j.value("dropout", d.dropout);
  c.activation = j.value("activation", d.activation);
  c.object_positions = j.value("object_positions", d.object_positions);
  c.max_text_len = j.value("max_text_len", d.max_text_len);
  c.max_grid = j.value("max_grid", d.max_grid);
}

Batch make_batch(const std::vector<SampleView>& samples) {
  Batch b;
  if (samples.empty()) throw DataError("empty batch");
  const Eigen::Index dt = samples.front().text->cols();
  const Eigen::Index dv = samples.front().visual->tokens.cols();
  Eigen::Index nt = 0, nv = 0;
  for (const auto& s : samples) {
    if (s.text->cols() != dt || s.visual->tokens.cols() != dv)
      throw ShapeError("batch samples disagree on token widths: text " + std::to_string(s.text->cols()) + " vs " +
                       std::to_string(dt) + ", visual " + std::to_string(s.visual->tokens.cols()) + " vs " +
                       std::to_string(dv));
    nt += s.text->rows();
    nv += s.visual->tokens.rows();
  }
  b.text.resize(nt, dt);
  b.visual.resize(nv, dv);
  Eigen::Index rt = 0, rv = 0;
  for (const auto& s : samples) {
    const auto& vis = *s.visual;
    b.text.middleRows(rt, s.text->rows()) = *s.text;
    b.visual.middleRows(rv, vis.tokens.rows()) = vis.tokens;
    rt += s.text->rows();
    rv += vis.tokens.rows();
    b.text_len.push_back(static_cast<int>(s.text->rows()));
    b.visual_len.push_back(static_cast<int>(vis.tokens.rows()));
    for (Eigen::Index r = 0; r < vis.tokens.rows(); ++r) {
      b.visual_coords.push_back(vis.coords.empty() ? adapter::GridCoord{-1, -1}
                                                   : vis.coords[static_cast<std::size_t>(r)]);
      b.visual_valid.push_back(vis.is_valid(r) ? 1 : 0);
    }
  }
  return b;
}

namespace {

Matrix uniform_init(int rows, int cols, int fan_in, std::mt19937_64& rng) {
  const float a = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> u(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Matrix normal_init(int rows, int cols, float sigma, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, sigma);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

ReasoningModel::ReasoningModel(const ReasoningConfig& config, int d_text, int d_visual, std::uint64_t seed)
    : config_(config), d_text_(d_text), d_visual_(d_visual) {
  config_.validate();
  if (d_text <= 0 || d_visual <= 0) throw ConfigError("model input widths must be positive");
  std::mt19937_64 rng(seed);
  const int d = config_.d_model;
  auto linear = [&](const std::string& p, int in, int out) {
    params_.create(p + ".w", uniform_init(in, out, in, rng));
    params_.create(p + ".b", Matrix::Zero(1, out));
  };
  auto norm = [&](const std::string& p) {
    params_.create(p + ".g", Matrix::Ones(1, d));
    params_.create(p + ".b", Matrix::Zero(1, d));
  };
  auto attention = [&](const std::string& p) {
    for (const char* part : {".q", ".k", ".v", ".o"}) linear(p + part, d, d);
  };

  linear("text_proj", d_text, d);
  linear("visual_proj", d_visual, d);
  params_.create("segment", normal_init(2, d, 0.02f, rng));
  params_.create("text_pos", normal_init(config_.max_text_len, d, 0.02f, rng));
  params_.create("grid_pos", normal_init(config_.max_grid * config_.max_grid, d, 0.02f, rng));
  for (int l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    norm(p + ".ln1");
    attention(p + ".attn");
    norm(p + ".ln2");
    linear(p + ".ffn1", d, config_.ffn_dim);
    linear(p + ".ffn2", config_.ffn_dim, d);
  }
  if (config_.encoder_layers > 0) norm("enc.ln");
  params_.create("query", normal_init(config_.queries, d, 0.02f, rng));
  for (int l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    norm(p + ".ln1");
    attention(p + ".self");
    norm(p + ".ln2");
    attention(p + ".cross");
    norm(p + ".ln3");
    linear(p + ".ffn1", d, config_.ffn_dim);
    linear(p + ".ffn2", config_.ffn_dim, d);
  }
  if (config_.decoder_layers > 0) norm("dec.ln");
  // Heads start at zero: an untrained model answers "binary / no".
  for (auto [name, n] : {std::pair{"head.type", kTypeClasses}, std::pair{"head.binary", 1},
                         std::pair{"head.count", kCountClasses}, std::pair{"head.attribute", kAttributeClasses}}) {
    params_.create(std::string(name) + ".w", Matrix::Zero(d, n));
    params_.create(std::string(name) + ".b", Matrix::Zero(1, n));
  }
}

Tensor ReasoningModel::linear(Tape& t, const Tensor& x, const std::string& p) const {
  return ad::add(t, ad::matmul(t, x, param(p + ".w")), param(p + ".b"));
}

Tensor ReasoningModel::maybe_dropout(Tape& t, const Tensor& x, bool training, std::mt19937_64* rng) const {
  if (!training || config_.dropout == 0.0f) return x;
  return ad::dropout(t, x, config_.dropout, *rng);
}

Tensor ReasoningModel::attention_block(Tape& t, const Tensor& xq, const Tensor& xkv, const std::string& p,
                                       const ad::AttentionLayout& layout) const {
  Tensor q = linear(t, xq, p + ".q");
  Tensor k = linear(t, xkv, p + ".k");
  Tensor v = linear(t, xkv, p + ".v");
  return linear(t, ad::scaled_dot_attention(t, q, k, v, layout), p + ".o");
}

Tensor ReasoningModel::feed_forward(Tape& t, const Tensor& x, const std::string& p, bool training,
                                    std::mt19937_64* rng) const {
  Tensor h = maybe_dropout(t, ad::relu(t, linear(t, x, p + ".ffn1")), training, rng);
  return linear(t, h, p + ".ffn2");
}

FusedInput ReasoningModel::project_inputs(Tape& t, const Batch& batch) const {
  if (batch.text.cols() != d_text_)
    throw ShapeError("text tokens have width " + std::to_string(batch.text.cols()) + ", model expects " +
                     std::to_string(d_text_));
  if (batch.visual.cols() != d_visual_)
    throw ShapeError("visual tokens have width " + std::to_string(batch.visual.cols()) +
                     ", model projection expects " + std::to_string(d_visual_));
  const int nt = static_cast<int>(batch.text.rows());
  const int g = config_.max_grid;

  Tensor tp = linear(t, t.constant(batch.text), "text_proj");
  Tensor vp = linear(t, t.constant(batch.visual), "visual_proj");
  Tensor both = ad::concat(t, {tp, vp}, 0);

  FusedInput f;
  std::vector<int> order, seg, tpos, gpos;
  const std::size_t total = static_cast<std::size_t>(batch.text.rows() + batch.visual.rows());
  order.reserve(total);
  seg.reserve(total);
  tpos.reserve(total);
  gpos.reserve(total);
  int text_row = 0, vis_row = 0;
  bool any_grid = false;
  for (int s = 0; s < batch.size(); ++s) {
    const int lt = batch.text_len[static_cast<std::size_t>(s)];
    const int lv = batch.visual_len[static_cast<std::size_t>(s)];
    if (lt > config_.max_text_len)
      throw ShapeError("question has " + std::to_string(lt) + " tokens, positional table holds " +
                       std::to_string(config_.max_text_len));
    f.segments.push_back({static_cast<Eigen::Index>(order.size()), lt + lv, static_cast<Eigen::Index>(order.size()),
                          lt + lv});
    for (int i = 0; i < lt; ++i) {
      order.push_back(text_row++);
      seg.push_back(0);
      tpos.push_back(i);
      gpos.push_back(-1);
      f.key_valid.push_back(1);
    }
    for (int i = 0; i < lv; ++i, ++vis_row) {
      const auto c = batch.visual_coords[static_cast<std::size_t>(vis_row)];
      order.push_back(nt + vis_row);
      seg.push_back(1);
      tpos.push_back(-1);
      int pos = -1;
      if (c.row >= 0) {
        if (c.row >= g || c.col >= g)
          throw ShapeError("grid coordinate (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                           ") outside the " + std::to_string(g) + "x" + std::to_string(g) + " positional table");
        pos = c.row * g + c.col;
      } else if (config_.object_positions) {
        if (i >= g * g) throw ShapeError("too many object tokens for the positional table");
        pos = i;
      }
      any_grid = any_grid || pos >= 0;
      gpos.push_back(pos);
      f.key_valid.push_back(batch.visual_valid[static_cast<std::size_t>(vis_row)]);
    }
  }

  Tensor x = ad::embedding_lookup(t, both, order);
  x = ad::add(t, x, ad::embedding_lookup(t, param("segment"), seg));
  x = ad::add(t, x, ad::embedding_lookup(t, param("text_pos"), tpos));
  if (any_grid) x = ad::add(t, x, ad::embedding_lookup(t, param("grid_pos"), gpos));
  f.tokens = x;
  return f;
}

ForwardOutput ReasoningModel::forward(Tape& t, const Batch& batch, bool training, std::mt19937_64* rng) const {
  if (training && config_.dropout > 0.0f && rng == nullptr) throw ConfigError("training forward needs an rng");
  ForwardOutput out;
  FusedInput f = project_inputs(t, batch);
  const int bsz = batch.size();
  const int nq = config_.queries;

  ad::AttentionLayout self_layout{config_.heads, f.segments, f.key_valid};
  Tensor x = maybe_dropout(t, f.tokens, training, rng);
  out.encoder_states.push_back(x);
  for (int l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    Tensor h = ad::layer_norm(t, x, param(p + ".ln1.g"), param(p + ".ln1.b"));
    x = ad::add(t, x, maybe_dropout(t, attention_block(t, h, h, p + ".attn", self_layout), training, rng));
    h = ad::layer_norm(t, x, param(p + ".ln2.g"), param(p + ".ln2.b"));
    x = ad::add(t, x, maybe_dropout(t, feed_forward(t, h, p, training, rng), training, rng));
    out.encoder_states.push_back(x);
  }
  Tensor memory = config_.encoder_layers > 0 ? ad::layer_norm(t, x, param("enc.ln.g"), param("enc.ln.b")) : x;

  std::vector<int> query_ids;
  ad::AttentionLayout query_layout{config_.heads, {}, {}};
  ad::AttentionLayout cross_layout{config_.heads, {}, f.key_valid};
  for (int s = 0; s < bsz; ++s) {
    for (int q = 0; q < nq; ++q) query_ids.push_back(q);
    const auto& seg = f.segments[static_cast<std::size_t>(s)];
    query_layout.segments.push_back({s * nq, nq, s * nq, nq});
    cross_layout.segments.push_back({s * nq, nq, seg.k_begin, seg.k_len});
  }
  Tensor y = ad::embedding_lookup(t, param("query"), query_ids);
  for (int l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    Tensor h = ad::layer_norm(t, y, param(p + ".ln1.g"), param(p + ".ln1.b"));
    y = ad::add(t, y, maybe_dropout(t, attention_block(t, h, h, p + ".self", query_layout), training, rng));
    h = ad::layer_norm(t, y, param(p + ".ln2.g"), param(p + ".ln2.b"));
    y = ad::add(t, y, maybe_dropout(t, attention_block(t, h, memory, p + ".cross", cross_layout), training, rng));
    h = ad::layer_norm(t, y, param(p + ".ln3.g"), param(p + ".ln3.b"));
    y = ad::add(t, y, maybe_dropout(t, feed_forward(t, h, p, training, rng), training, rng));
  }
  if (config_.decoder_layers > 0) y = ad::layer_norm(t, y, param("dec.ln.g"), param("dec.ln.b"));
  if (nq > 1) {
    std::vector<int> first;
    for (int s = 0; s < bsz; ++s) first.push_back(s * nq);
    y = ad::embedding_lookup(t, y, first);
  }
  out.type = linear(t, y, "head.type");
  out.binary = linear(t, y, "head.binary");
  out.count = linear(t, y, "head.count");
  out.attribute = linear(t, y, "head.attribute");
  return out;
}

PredictionBundle to_bundle(const ForwardOutput& out) {
  return {out.type.value(), out.binary.value(), out.count.value(), out.attribute.value()};
}

PredictionBundle ReasoningModel::predict(const Batch& batch) const {
  Tape t;
  return to_bundle(forward(t, batch, false, nullptr));
}

LossBundle compute_loss(Tape& t, const ForwardOutput& out, const std::vector<Answer>& truth) {
  const auto n = static_cast<Eigen::Index>(truth.size());
  if (out.type.rows() != n)
    throw ShapeError("loss: " + std::to_string(truth.size()) + " answers for " + std::to_string(out.type.rows()) +
                     " predictions");
  std::vector<int> type(truth.size()), bin(truth.size(), -1), cnt(truth.size(), -1), attr(truth.size(), -1);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const Answer& a = truth[i];
    type[i] = static_cast<int>(a.type);
    switch (a.type) {
      case AnswerType::binary:
        if (a.value != 0 && a.value != 1) throw DataError("binary answer must be 0 or 1");
        bin[i] = a.value;
        break;
      case AnswerType::count:
        if (a.value < 0 || a.value >= kCountClasses) throw DataError("count answer outside 0..10");
        cnt[i] = a.value;
        break;
      case AnswerType::attribute:
        if (a.value < 0 || a.value >= kAttributeClasses) throw DataError("attribute answer outside vocabulary");
        attr[i] = a.value;
        break;
    }
  }
  LossBundle l;
  const float inv = 1.0f / static_cast<float>(std::max<Eigen::Index>(n, 1));
  l.type = ad::scale(t, ad::cross_entropy(t, out.type, type), inv);
  l.binary = ad::scale(t, ad::bce_with_logits(t, out.binary, bin), inv);
  l.count = ad::scale(t, ad::cross_entropy(t, out.count, cnt), inv);
  l.attribute = ad::scale(t, ad::cross_entropy(t, out.attribute, attr), inv);
  l.total = ad::add(t, ad::add(t, l.type, l.binary), ad::add(t, l.count, l.attribute));
  return l;
}

namespace {

int argmax_row(const MatrixF& m, int row) {
  int best = 0;
  for (int c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = c;
  return best;
}

}  // namespace

Answer predict_answer(const PredictionBundle& b, int row) {
  switch (static_cast<AnswerType>(argmax_row(b.type, row))) {
    case AnswerType::binary:
      return Answer::boolean(b.binary(row, 0) > 0.0f);
    case AnswerType::count:
      return Answer::count(argmax_row(b.count, row));
    case AnswerType::attribute:
      return Answer::attribute(argmax_row(b.attribute, row));
  }
  return {};
}

}  // namespace vqa::model
