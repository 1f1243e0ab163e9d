#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "protoeval/error.hpp"

namespace protoeval {

/// Dense row-major grid with interleaved channels. Used for images, masks,
/// similarity maps and attribution fields alike.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, std::size_t channels = 1, T fill = T{})
      : rows_(rows), cols_(cols), channels_(channels), data_(rows * cols * channels, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c, std::size_t ch = 0) {
    return data_[(r * cols_ + c) * channels_ + ch];
  }
  const T& operator()(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return data_[(r * cols_ + c) * channels_ + ch];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool same_shape(const Grid& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && channels_ == other.channels_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
};

using Image = Grid<float>;       // H x W x 3, values in [0,1]
using Mask = Grid<std::uint8_t>;  // H x W x 1, 0 or 1
using Field = Grid<double>;       // H x W x 1 real-valued map

std::size_t count_set(const Mask& mask);

// ---------------------------------------------------------------------------
// PGRD interchange format: magic "PGRD", then little-endian u32 version (1),
// dtype (0 = float32, 1 = uint8), rows, cols, channels, row-major payload.

inline constexpr std::uint32_t kGridFormatVersion = 1;

enum class GridDtype : std::uint32_t { kFloat32 = 0, kUint8 = 1 };

std::vector<std::uint8_t> encode_grid(const Grid<float>& grid);
std::vector<std::uint8_t> encode_grid(const Mask& grid);
/// Doubles are narrowed to float32 on disk.
std::vector<std::uint8_t> encode_grid(const Field& grid);

GridDtype peek_grid_dtype(std::span<const std::uint8_t> bytes);
Grid<float> decode_float_grid(std::span<const std::uint8_t> bytes);
Mask decode_mask_grid(std::span<const std::uint8_t> bytes);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

void write_grid(const std::filesystem::path& path, const Grid<float>& grid);
void write_grid(const std::filesystem::path& path, const Mask& grid);
void write_grid(const std::filesystem::path& path, const Field& grid);
Grid<float> read_float_grid(const std::filesystem::path& path);
Mask read_mask_grid(const std::filesystem::path& path);

}  // namespace protoeval
