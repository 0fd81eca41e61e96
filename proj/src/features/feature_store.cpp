#include "vqa/feature_store.hpp"

#include "vqa/binary_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace vqa::features {

using nlohmann::json;
using Kind = FeatureStoreError::Kind;

std::string_view geometry_name(GeometryKind kind) {
  switch (kind) {
    case GeometryKind::grid: return "grid";
    case GeometryKind::objects: return "objects";
    case GeometryKind::text: return "text";
  }
  return {};
}

void EncoderGeometry::validate() const {
  if (tokens <= 0 || dim <= 0) throw ShapeError("geometry needs positive token count and dimension");
  if (kind == GeometryKind::grid && (grid_h <= 0 || grid_w <= 0 || grid_h * grid_w != tokens))
    throw ShapeError("grid geometry " + shape_string(grid_h, grid_w) + " does not match " + std::to_string(tokens) +
                     " tokens");
}

std::filesystem::path manifest_path(const std::filesystem::path& store) {
  return std::filesystem::path(store.string() + ".json");
}

void write_store(const std::filesystem::path& path, const std::vector<StoreRecord>& records,
                 const EncoderGeometry& geometry, const StoreInfo& info) {
  geometry.validate();
  std::set<std::int64_t> seen;
  for (const auto& r : records) {
    if (r.tokens.rows() != geometry.tokens || r.tokens.cols() != geometry.dim)
      throw FeatureStoreError(Kind::shape, "record " + std::to_string(r.id) + " has shape " +
                                               shape_string(r.tokens.rows(), r.tokens.cols()) + ", geometry expects " +
                                               shape_string(geometry.tokens, geometry.dim));
    for (Eigen::Index i = 0; i < r.tokens.rows(); ++i)
      for (Eigen::Index j = 0; j < r.tokens.cols(); ++j)
        if (!std::isfinite(r.tokens(i, j)))
          throw FeatureStoreError(Kind::non_finite, "record " + std::to_string(r.id) + " has a non-finite value at (" +
                                                        std::to_string(i) + ", " + std::to_string(j) + ")");
    if (!seen.insert(r.id).second)
      throw FeatureStoreError(Kind::manifest, "duplicate sample id " + std::to_string(r.id));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FeatureStoreError(Kind::io, "cannot open '" + path.string() + "' for writing");
  out.write("VQFS", 4);
  io::write_le<std::uint16_t>(out, kStoreVersion);
  io::write_le<std::uint8_t>(out, kDtypeFloat32);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(geometry.tokens));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(geometry.dim));
  io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(geometry.kind));
  std::vector<char> raw(static_cast<std::size_t>(geometry.tokens) * geometry.dim * sizeof(float));
  for (const auto& r : records) {
    for (Eigen::Index i = 0; i < r.tokens.size(); ++i) {
      std::uint32_t bits;
      const float v = r.tokens.data()[i];
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 4; ++b) raw[static_cast<std::size_t>(i) * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  }
  if (!out) throw FeatureStoreError(Kind::io, "write failed for '" + path.string() + "'");

  json index = json::object();
  for (std::size_t i = 0; i < records.size(); ++i) index[std::to_string(records[i].id)] = i;
  json manifest{{"format", "VQFS"},
                {"version", kStoreVersion},
                {"encoder", info.encoder},
                {"geometry", geometry_name(geometry.kind)},
                {"tokens", geometry.tokens},
                {"dim", geometry.dim},
                {"notes", info.notes},
                {"records", std::move(index)}};
  if (geometry.kind == GeometryKind::grid) manifest["grid"] = {geometry.grid_h, geometry.grid_w};
  std::ofstream mout(manifest_path(path));
  if (!mout) throw FeatureStoreError(Kind::io, "cannot write manifest for '" + path.string() + "'");
  mout << manifest.dump(1) << '\n';
}

FeatureStore FeatureStore::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureStoreError(Kind::io, "cannot open feature store '" + path.string() + "'");
  unsigned char header[kHeaderBytes];
  if (!in.read(reinterpret_cast<char*>(header), kHeaderBytes))
    throw FeatureStoreError(Kind::truncated, "feature store '" + path.string() + "' is shorter than its " +
                                                 std::to_string(kHeaderBytes) + "-byte header");
  if (std::string_view(reinterpret_cast<const char*>(header), 4) != "VQFS")
    throw FeatureStoreError(Kind::bad_magic, "feature store '" + path.string() + "' has bad magic");
  const auto version = io::decode_le<std::uint16_t>(header + 4);
  if (version != kStoreVersion)
    throw FeatureStoreError(Kind::unsupported_version, "feature store version " + std::to_string(version) +
                                                           " is not supported");
  if (header[6] != kDtypeFloat32)
    throw FeatureStoreError(Kind::unsupported_dtype, "feature store dtype code " + std::to_string(header[6]) +
                                                         " is not supported");
  const auto count = io::decode_le<std::uint32_t>(header + 7);
  const auto tokens = io::decode_le<std::uint32_t>(header + 11);
  const auto dim = io::decode_le<std::uint32_t>(header + 15);
  const auto tag = header[19];
  if (tag > 2) throw FeatureStoreError(Kind::manifest, "unknown geometry tag " + std::to_string(tag));

  const std::uintmax_t expected = kHeaderBytes + static_cast<std::uintmax_t>(count) * tokens * dim * sizeof(float);
  const std::uintmax_t actual = std::filesystem::file_size(path);
  if (actual < expected)
    throw FeatureStoreError(Kind::truncated, "feature store '" + path.string() + "' truncated: expected " +
                                                 std::to_string(expected) + " bytes, found " + std::to_string(actual));
  if (actual > expected)
    throw FeatureStoreError(Kind::trailing_bytes, "feature store '" + path.string() + "' has " +
                                                      std::to_string(actual - expected) + " unexpected trailing bytes");

  FeatureStore store;
  store.path_ = path;
  store.geometry_.kind = static_cast<GeometryKind>(tag);
  store.geometry_.tokens = static_cast<int>(tokens);
  store.geometry_.dim = static_cast<int>(dim);

  std::ifstream min(manifest_path(path));
  if (!min) throw FeatureStoreError(Kind::manifest, "missing manifest '" + manifest_path(path).string() + "'");
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::parse_error& e) {
    throw FeatureStoreError(Kind::manifest, std::string("manifest is not valid JSON: ") + e.what());
  }
  store.info_.encoder = manifest.value("encoder", std::string("unknown"));
  store.info_.notes = manifest.value("notes", std::string{});
  if (store.geometry_.kind == GeometryKind::grid) {
    if (!manifest.contains("grid") || manifest.at("grid").size() != 2)
      throw FeatureStoreError(Kind::manifest, "grid store manifest lacks 'grid': [h, w]");
    store.geometry_.grid_h = manifest.at("grid")[0].get<int>();
    store.geometry_.grid_w = manifest.at("grid")[1].get<int>();
    if (store.geometry_.grid_h * store.geometry_.grid_w != store.geometry_.tokens)
      throw FeatureStoreError(Kind::manifest, "manifest grid does not match header token count");
  }
  if (!manifest.contains("records") || !manifest.at("records").is_object())
    throw FeatureStoreError(Kind::manifest, "manifest lacks a 'records' map");
  const auto& records = manifest.at("records");
  if (records.size() != count)
    throw FeatureStoreError(Kind::manifest, "manifest lists " + std::to_string(records.size()) +
                                                " records but the header declares " + std::to_string(count));
  store.ids_.assign(count, 0);
  std::vector<bool> used(count, false);
  for (const auto& [key, value] : records.items()) {
    const auto idx = value.get<std::int64_t>();
    if (idx < 0 || idx >= static_cast<std::int64_t>(count) || used[static_cast<std::size_t>(idx)])
      throw FeatureStoreError(Kind::manifest, "manifest record index " + std::to_string(idx) + " for id " + key +
                                                  " is out of range or duplicated");
    used[static_cast<std::size_t>(idx)] = true;
    const std::int64_t id = std::stoll(key);
    store.ids_[static_cast<std::size_t>(idx)] = id;
    store.index_.emplace(id, static_cast<std::size_t>(idx));
  }
  return store;
}

MatrixF FeatureStore::read_index(std::size_t record) const {
  if (record >= ids_.size())
    throw FeatureStoreError(Kind::manifest, "record index " + std::to_string(record) + " out of range");
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw FeatureStoreError(Kind::io, "cannot reopen '" + path_.string() + "'");
  in.seekg(static_cast<std::streamoff>(kHeaderBytes + record * record_bytes()));
  std::vector<unsigned char> raw(record_bytes());
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw FeatureStoreError(Kind::truncated, "short read of record " + std::to_string(record));
  MatrixF m(geometry_.tokens, geometry_.dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = io::decode_le<float>(raw.data() + i * sizeof(float));
  return m;
}

MatrixF FeatureStore::read(std::int64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw FeatureStoreError(Kind::manifest, "sample id " + std::to_string(id) + " not present in '" + path_.string() + "'");
  return read_index(it->second);
}

void FeatureStore::for_each(const std::function<void(std::int64_t, const MatrixF&)>& fn) const {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw FeatureStoreError(Kind::io, "cannot reopen '" + path_.string() + "'");
  in.seekg(static_cast<std::streamoff>(kHeaderBytes));
  std::vector<unsigned char> raw(record_bytes());
  MatrixF m(geometry_.tokens, geometry_.dim);
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      throw FeatureStoreError(Kind::truncated, "short read of record " + std::to_string(r));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = io::decode_le<float>(raw.data() + i * sizeof(float));
    fn(ids_[r], m);
  }
}

}  // namespace vqa::features
