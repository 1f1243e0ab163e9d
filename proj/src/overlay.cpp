#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "protoeval/error.hpp"
#include "protoeval/harness.hpp"

namespace protoeval {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Piecewise-linear jet colormap.
std::array<double, 3> jet(double v) {
  auto ramp = [v](double centre) { return std::clamp(1.5 - std::abs(4.0 * v - centre), 0.0, 1.0); };
  return {ramp(3.0), ramp(2.0), ramp(1.0)};
}

void on_png_write(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

}  // namespace

Grid<std::uint8_t> overlay_pixels(const Scene& scene, const Field& attribution, const OverlayOptions& options) {
  const std::size_t H = scene.height(), W = scene.width();
  if (attribution.rows() != H || attribution.cols() != W) {
    throw DimensionError("render_overlay: attribution dims differ from the scene");
  }
  double peak = 0;
  for (double v : attribution.values()) peak = std::max(peak, v);

  Grid<std::uint8_t> rgb(H, W, 3);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      double level = peak > 0 ? std::max(0.0, attribution(r, c)) / peak : 0.0;
      double a = options.alpha * level;
      auto heat = jet(level);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double base = scene.image(r, c, ch);
        rgb(r, c, ch) = a > 0 ? to_byte((1 - a) * base + a * heat[ch]) : to_byte(base);
      }
    }
  }
  if (options.outlines) {
    for (const auto& [slot, mask] : scene.part_masks) {
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
          if (!mask(r, c)) continue;
          bool edge = r == 0 || c == 0 || r + 1 == H || c + 1 == W || !mask(r - 1, c) || !mask(r + 1, c) ||
                      !mask(r, c - 1) || !mask(r, c + 1);
          if (!edge) continue;
          for (std::size_t ch = 0; ch < 3; ++ch) rgb(r, c, ch) = 255;
        }
      }
    }
  }
  return rgb;
}

std::vector<std::uint8_t> encode_png(const Grid<std::uint8_t>& rgb) {
  if (rgb.channels() != 3) throw DimensionError("encode_png: expected 3 channels");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("encode_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw DataError("encode_png: libpng error");
  }
  png_set_write_fn(png, &out, on_png_write, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(rgb.cols()), static_cast<png_uint_32>(rgb.rows()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < rgb.rows(); ++r) {
    png_write_row(png, const_cast<png_bytep>(&rgb(r, 0, 0)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void render_overlay(const Scene& scene, const AttributionGrid& attribution, const std::filesystem::path& out_path,
                    const OverlayOptions& options) {
  write_bytes(out_path, encode_png(overlay_pixels(scene, attribution.values, options)));
}

}  // namespace protoeval
