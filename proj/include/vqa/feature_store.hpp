#pragma once

#include "vqa/common.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vqa::features {

// VQFS layout (little-endian, packed, 20-byte header):
//   offset 0  char[4] magic "VQFS"
//   offset 4  u16     version (1)
//   offset 6  u8      dtype (1 = float32)
//   offset 7  u32     record count
//   offset 11 u32     tokens per record N_v
//   offset 15 u32     token dimension d_v
//   offset 19 u8      geometry tag (0 grid, 1 objects, 2 text)
//   offset 20 float32 payload, record-major, each record N_v x d_v row-major
// The JSON manifest lives next to the store at "<path>.json".

inline constexpr std::uint16_t kStoreVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::size_t kHeaderBytes = 20;

enum class GeometryKind : std::uint8_t { grid = 0, objects = 1, text = 2 };

std::string_view geometry_name(GeometryKind kind);

struct EncoderGeometry {
  GeometryKind kind = GeometryKind::objects;
  int grid_h = 0;
  int grid_w = 0;
  int tokens = 0;  // N_v
  int dim = 0;     // d_v

  static EncoderGeometry grid(int h, int w, int dim) { return {GeometryKind::grid, h, w, h * w, dim}; }
  static EncoderGeometry objects(int n, int dim) { return {GeometryKind::objects, 0, 0, n, dim}; }
  static EncoderGeometry text(int n, int dim) { return {GeometryKind::text, 0, 0, n, dim}; }

  /// Throws ShapeError when grid tokens != h * w or sizes are non-positive.
  void validate() const;
  bool operator==(const EncoderGeometry&) const = default;
};

class FeatureStoreError : public DataError {
 public:
  enum class Kind { io, bad_magic, unsupported_version, unsupported_dtype, truncated, trailing_bytes, manifest, shape, non_finite };
  FeatureStoreError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct StoreRecord {
  std::int64_t id = 0;
  MatrixF tokens;
};

struct StoreInfo {
  std::string encoder = "unknown";
  std::string notes;
};

std::filesystem::path manifest_path(const std::filesystem::path& store);

/// Writes the store and its manifest. All records must match the geometry and be finite.
void write_store(const std::filesystem::path& path, const std::vector<StoreRecord>& records,
                 const EncoderGeometry& geometry, const StoreInfo& info = {});

/// Read-only handle. Only the header and manifest are held in memory; each
/// read() touches exactly one record, so concurrent readers are safe.
class FeatureStore {
 public:
  static FeatureStore open(const std::filesystem::path& path);

  const EncoderGeometry& geometry() const { return geometry_; }
  const StoreInfo& info() const { return info_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::int64_t>& ids() const { return ids_; }
  bool contains(std::int64_t id) const { return index_.contains(id); }

  MatrixF read(std::int64_t id) const;
  MatrixF read_index(std::size_t record) const;
  /// Streams records in file order through one reusable buffer.
  void for_each(const std::function<void(std::int64_t, const MatrixF&)>& fn) const;

  std::size_t record_bytes() const {
    return static_cast<std::size_t>(geometry_.tokens) * static_cast<std::size_t>(geometry_.dim) * sizeof(float);
  }

 private:
  std::filesystem::path path_;
  EncoderGeometry geometry_;
  StoreInfo info_;
  std::vector<std::int64_t> ids_;
  std::unordered_map<std::int64_t, std::size_t> index_;
};

}  // namespace vqa::features
