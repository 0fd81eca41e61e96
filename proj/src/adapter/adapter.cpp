#include "vqa/adapter.hpp"

#include "vqa/binary_io.hpp"

#include <fstream>

namespace vqa::adapter {

const std::vector<EncoderProfile>& default_profiles() {
  static const std::vector<EncoderProfile> profiles{
      {"gt", EncoderGeometry::objects(10, 7), 0, false},
      {"dti_sprites", EncoderGeometry::objects(10, 10), 0, false},
      {"slot_attention", EncoderGeometry::objects(11, 64), 0, false},
      {"resnet50", EncoderGeometry::grid(7, 7, 2048), 4, true},
      {"dino_resnet50", EncoderGeometry::grid(7, 7, 2048), 4, true},
      {"dino_vit", EncoderGeometry::grid(14, 14, 384), 4, true},
      // 192x192 pixels cut into a 3x3 grid of 64x64x3 patches.
      {"raw192", EncoderGeometry::grid(3, 3, 64 * 64 * 3), 3, true},
      // Built-in rasterizer at 96x96: 3x3 grid of 32x32x3 patches.
      {"raw", EncoderGeometry::grid(3, 3, 32 * 32 * 3), 3, true},
  };
  return profiles;
}

const EncoderProfile& find_profile(std::string_view name) {
  for (const auto& p : default_profiles())
    if (p.name == name) return p;
  throw ConfigError("unknown encoder profile '" + std::string(name) + "'");
}

std::string_view mode_name(DimensionMode mode) {
  switch (mode) {
    case DimensionMode::compress: return "compress";
    case DimensionMode::pad: return "pad";
    case DimensionMode::identity: return "identity";
  }
  return {};
}

AdapterPlan plan_adaptation(const EncoderGeometry& geometry, const MemoryRegime& regime, const EncoderProfile& profile) {
  regime.validate();
  geometry.validate();
  if (profile.native.kind != geometry.kind)
    throw ConfigError("profile '" + profile.name + "' describes " +
                      std::string(features::geometry_name(profile.native.kind)) + " features, not " +
                      std::string(features::geometry_name(geometry.kind)));
  AdapterPlan plan;
  plan.native = geometry;
  switch (geometry.kind) {
    case GeometryKind::objects: plan.tokens = geometry.tokens; break;
    case GeometryKind::grid:
      if (profile.pooled_grid <= 0 || profile.pooled_grid > geometry.grid_h || profile.pooled_grid > geometry.grid_w)
        throw ConfigError("profile '" + profile.name + "' pools to " + std::to_string(profile.pooled_grid) +
                          " which does not fit the " + shape_string(geometry.grid_h, geometry.grid_w) + " grid");
      plan.pooled_grid = profile.pooled_grid;
      plan.tokens = profile.pooled_grid * profile.pooled_grid;
      break;
    case GeometryKind::text: throw ConfigError("text geometries are not memory-adapted");
  }
  plan.dim = regime.budget / plan.tokens;
  if (plan.dim == 0)
    throw AdapterError("budget " + std::to_string(regime.budget) + " is too small for " + std::to_string(plan.tokens) +
                       " tokens");
  plan.mode = geometry.dim > plan.dim   ? DimensionMode::compress
              : geometry.dim < plan.dim ? DimensionMode::pad
                                        : DimensionMode::identity;
  return plan;
}

MatrixF pool_native(const AdapterPlan& plan, const MatrixF& native) {
  if (native.rows() != plan.native.tokens || native.cols() != plan.native.dim)
    throw AdapterError("adapter plan expects native tokens " + shape_string(plan.native.tokens, plan.native.dim) +
                       ", got " + shape_string(native.rows(), native.cols()));
  if (plan.native.kind != GeometryKind::grid) return native;
  return adaptive_avg_pool<float>(native, plan.native.grid_h, plan.native.grid_w, plan.pooled_grid).tokens;
}

TokenSequence apply_adapter(const AdapterPlan& plan, const PCAModel<double>* pca, const MatrixF& native,
                            std::vector<std::uint8_t> valid) {
  if ((plan.mode == DimensionMode::compress) != (pca != nullptr))
    throw AdapterError(pca ? "PCA model supplied for a non-compressing plan" : "compressing plan needs a PCA model");
  if (native.rows() != plan.native.tokens || native.cols() != plan.native.dim)
    throw AdapterError("adapter plan expects native tokens " + shape_string(plan.native.tokens, plan.native.dim) +
                       ", got " + shape_string(native.rows(), native.cols()));

  TokenSequence out;
  out.modality = Modality::visual;
  MatrixF pooled;
  if (plan.native.kind == GeometryKind::grid) {
    auto p = adaptive_avg_pool<float>(native, plan.native.grid_h, plan.native.grid_w, plan.pooled_grid);
    pooled = std::move(p.tokens);
    out.coords = std::move(p.coords);
  } else {
    pooled = native;
    if (!valid.empty() && valid.size() != static_cast<std::size_t>(native.rows()))
      throw AdapterError("validity mask length does not match token count");
    out.valid = std::move(valid);
  }

  switch (plan.mode) {
    case DimensionMode::identity: out.tokens = std::move(pooled); break;
    case DimensionMode::pad:
      out.tokens = MatrixF::Zero(pooled.rows(), plan.dim);
      out.tokens.leftCols(pooled.cols()) = pooled;
      break;
    case DimensionMode::compress:
      if (pca->input_dim() != pooled.cols() || pca->output_dim() != plan.dim)
        throw AdapterError("PCA model maps " + std::to_string(pca->input_dim()) + " -> " +
                           std::to_string(pca->output_dim()) + " but the plan needs " + std::to_string(pooled.cols()) +
                           " -> " + std::to_string(plan.dim));
      out.tokens = pca->project(pooled.cast<double>()).cast<float>();
      break;
  }
  return out;
}

void save_pca(const PCAModel<double>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write("VQPC", 4);
  io::write_le<std::uint16_t>(out, 1);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_dim()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.output_dim()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.rank));
  io::write_le<std::uint8_t>(out, model.rank_deficient ? 1 : 0);
  for (Eigen::Index i = 0; i < model.mean.size(); ++i) io::write_le<double>(out, model.mean(i));
  for (Eigen::Index i = 0; i < model.components.size(); ++i) io::write_le<double>(out, model.components.data()[i]);
  for (Eigen::Index i = 0; i < model.explained_variance.size(); ++i)
    io::write_le<double>(out, model.explained_variance(i));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

PCAModel<double> load_pca(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open PCA file '" + path.string() + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "VQPC")
    throw DataError("'" + path.string() + "' is not a PCA model file");
  std::uint16_t version = 0;
  std::uint32_t d_v = 0, d_out = 0, rank = 0;
  std::uint8_t deficient = 0;
  if (!io::read_le(in, version) || version != 1) throw DataError("unsupported PCA file version");
  if (!io::read_le(in, d_v) || !io::read_le(in, d_out) || !io::read_le(in, rank) || !io::read_le(in, deficient))
    throw DataError("truncated PCA header");
  PCAModel<double> m;
  m.mean.resize(d_v);
  m.components.resize(d_out, d_v);
  m.explained_variance.resize(d_out);
  m.rank = static_cast<int>(rank);
  m.rank_deficient = deficient != 0;
  auto read_all = [&](double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (!io::read_le(in, p[i])) throw DataError("truncated PCA payload");
  };
  read_all(m.mean.data(), m.mean.size());
  read_all(m.components.data(), m.components.size());
  read_all(m.explained_variance.data(), m.explained_variance.size());
  return m;
}

std::uint64_t pca_checksum(const PCAModel<double>& model) {
  std::uint64_t h = checksum(model.mean);
  h = checksum(model.components, h);
  return checksum(model.explained_variance, h);
}

}  // namespace vqa::adapter
