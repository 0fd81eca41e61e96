#include "vqa/scene.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace vqa::scene {

namespace {

constexpr std::array<std::array<float, 3>, 8> kPalette{{
    {87 / 255.f, 87 / 255.f, 87 / 255.f},     // gray
    {173 / 255.f, 35 / 255.f, 35 / 255.f},    // red
    {42 / 255.f, 75 / 255.f, 215 / 255.f},    // blue
    {29 / 255.f, 105 / 255.f, 20 / 255.f},    // green
    {129 / 255.f, 74 / 255.f, 25 / 255.f},    // brown
    {129 / 255.f, 38 / 255.f, 192 / 255.f},   // purple
    {41 / 255.f, 208 / 255.f, 208 / 255.f},   // cyan
    {255 / 255.f, 238 / 255.f, 51 / 255.f},   // yellow
}};

struct PixelGeometry {
  double cx, cy, r;  // center and radius in pixel units
};

// Orthographic top-down view: +x to the right, +y (behind) towards the top row.
PixelGeometry project(const ObjectSpec& o, int height, int width, const SceneBounds& b) {
  const double sx = width / (b.x_max - b.x_min);
  const double sy = height / (b.y_max - b.y_min);
  return {(o.position.x() - b.x_min) * sx, (b.y_max - o.position.y()) * sy,
          object_radius(o.size) * std::min(sx, sy)};
}

bool covers(int shape, const PixelGeometry& g, double px, double py) {
  const double dx = px - g.cx;
  const double dy = py - g.cy;
  switch (shape) {
    case 0:  // cube: axis-aligned square
      return std::abs(dx) <= g.r && std::abs(dy) <= g.r;
    case 1:  // sphere: disc
      return dx * dx + dy * dy <= g.r * g.r;
    default: {  // cylinder: upward triangle inscribed in the disc
      const double top = -g.r;
      const double bottom = 0.5 * g.r;
      if (dy < top || dy > bottom) return false;
      const double half = (dy - top) / (bottom - top) * g.r * std::sqrt(3.0) / 2.0;
      return std::abs(dx) <= half;
    }
  }
}

}  // namespace

std::vector<std::uint8_t> object_footprint(const ObjectSpec& object, int height, int width,
                                           const RasterOptions& options) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
  const auto g = project(object, height, width, options.bounds);
  const int y0 = std::max(0, static_cast<int>(std::floor(g.cy - g.r - 1)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(g.cy + g.r + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(g.cx - g.r - 1)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(g.cx + g.r + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (covers(object.shape, g, x + 0.5, y + 0.5)) mask[static_cast<std::size_t>(y) * width + x] = 1;
  return mask;
}

Image rasterize_scene(const Scene& scene, int height, int width, const RasterOptions& options) {
  if (height < 32 || width < 32)
    throw DataError("raster size " + shape_string(height, width) + " below the 32x32 minimum");
  Image img{height, width, std::vector<float>(static_cast<std::size_t>(height) * width * 3)};
  for (std::size_t p = 0; p < static_cast<std::size_t>(height) * width; ++p)
    for (int c = 0; c < 3; ++c) img.rgb[p * 3 + c] = options.background[c];

  // Painter order: farthest (largest y) first; stable on index for ties.
  std::vector<std::size_t> order(scene.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scene.objects[a].position.y() > scene.objects[b].position.y();
  });

  for (std::size_t idx : order) {
    const auto& o = scene.objects[idx];
    const float brightness = o.material == 1 ? options.metal_brightness : options.rubber_brightness;
    const auto& col = kPalette[static_cast<std::size_t>(o.color)];
    const auto mask = object_footprint(o, height, width, options);
    for (std::size_t p = 0; p < mask.size(); ++p) {
      if (!mask[p]) continue;
      for (int c = 0; c < 3; ++c) img.rgb[p * 3 + c] = col[c] * brightness;
    }
  }
  return img;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw DataError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width * 3; ++x) {
      const float v = std::clamp(image.rgb[static_cast<std::size_t>(y) * image.width * 3 + x], 0.0f, 1.0f);
      row[x] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace vqa::scene
