#include "scnn/png_export.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

SCNN_NAMESPACE_BEGIN

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_png: expected [1,H,W] or [3,H,W], got " + to_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> pixels(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(static_cast<double>(image[(ch * h + y) * w + x]), 0.0, 1.0);
        pixels[(y * w + x) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw std::runtime_error("write_png: " + path.string() + ": " + message);
  }
}

Tensor side_by_side(const Tensor& left, const Tensor& right) {
  if (left.shape() != right.shape() || left.rank() != 3) {
    throw ShapeError("side_by_side: shapes " + to_string(left.shape()) + " and " + to_string(right.shape()));
  }
  constexpr std::size_t gap = 2;
  const std::size_t c = left.dim(0), h = left.dim(1), w = left.dim(2);
  const std::size_t out_w = 2 * w + gap;
  Tensor out({c, h, out_w}, Real(1));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        out[(ch * h + y) * out_w + x] = left[(ch * h + y) * w + x];
        out[(ch * h + y) * out_w + w + gap + x] = right[(ch * h + y) * w + x];
      }
  return out;
}

std::size_t export_pairs(const std::filesystem::path& dir, const LabeledDataset& sources,
                         const LabeledDataset& synthesized, std::span<const SampleRecord> records,
                         std::size_t limit) {
  std::size_t written = 0, next = 0;
  for (const auto& r : records) {
    if (r.aborted) continue;
    if (written >= limit) break;
    if (next >= synthesized.size()) throw std::runtime_error("export_pairs: fewer synthesized images than records");
    if (r.source_index >= sources.size()) {
      throw std::out_of_range("export_pairs: source index " + std::to_string(r.source_index) + " outside the sources");
    }
    char name[64];
    std::snprintf(name, sizeof name, "pair_%05zu_y%d_p%d.png", next, r.label, r.prediction);
    write_png(dir / name, side_by_side(sources.image(r.source_index), synthesized.image(next)));
    ++next;
    ++written;
  }
  return written;
}

SCNN_NAMESPACE_END
