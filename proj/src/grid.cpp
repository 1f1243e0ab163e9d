#include "protoeval/grid.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace protoeval {

static_assert(std::endian::native == std::endian::little,
              "PGRD encoding assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'G', 'R', 'D'};
constexpr std::size_t kHeaderSize = 4 + 5 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> header(GridDtype dtype, std::size_t rows, std::size_t cols,
                                 std::size_t channels, std::size_t payload) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + payload);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kGridFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(dtype));
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  put_u32(out, static_cast<std::uint32_t>(channels));
  return out;
}

struct Header {
  GridDtype dtype;
  std::size_t rows, cols, channels;
};

Header parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw DataError("grid file: bad magic or truncated header");
  }
  if (get_u32(bytes, 4) != kGridFormatVersion) {
    throw DataError("grid file: unsupported version " + std::to_string(get_u32(bytes, 4)));
  }
  std::uint32_t dtype = get_u32(bytes, 8);
  if (dtype > 1) throw DataError("grid file: unknown dtype " + std::to_string(dtype));
  Header h{static_cast<GridDtype>(dtype), get_u32(bytes, 12), get_u32(bytes, 16), get_u32(bytes, 20)};
  std::size_t elem = h.dtype == GridDtype::kFloat32 ? 4 : 1;
  if (bytes.size() != kHeaderSize + h.rows * h.cols * h.channels * elem) {
    throw DataError("grid file: payload size does not match header");
  }
  return h;
}

}  // namespace

std::size_t count_set(const Mask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.values().begin(), mask.values().end(), [](auto v) { return v != 0; }));
}

std::vector<std::uint8_t> encode_grid(const Grid<float>& grid) {
  auto out = header(GridDtype::kFloat32, grid.rows(), grid.cols(), grid.channels(), grid.size() * 4);
  for (float v : grid.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<std::uint8_t> encode_grid(const Mask& grid) {
  auto out = header(GridDtype::kUint8, grid.rows(), grid.cols(), grid.channels(), grid.size());
  out.insert(out.end(), grid.values().begin(), grid.values().end());
  return out;
}

std::vector<std::uint8_t> encode_grid(const Field& grid) {
  Grid<float> narrow(grid.rows(), grid.cols(), grid.channels());
  std::transform(grid.values().begin(), grid.values().end(), narrow.values().begin(),
                 [](double v) { return static_cast<float>(v); });
  return encode_grid(narrow);
}

GridDtype peek_grid_dtype(std::span<const std::uint8_t> bytes) { return parse_header(bytes).dtype; }

Grid<float> decode_float_grid(std::span<const std::uint8_t> bytes) {
  Header h = parse_header(bytes);
  if (h.dtype != GridDtype::kFloat32) throw DataError("grid file: expected float32 payload");
  Grid<float> grid(h.rows, h.cols, h.channels);
  auto values = grid.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(get_u32(bytes, kHeaderSize + 4 * i));
  }
  return grid;
}

Mask decode_mask_grid(std::span<const std::uint8_t> bytes) {
  Header h = parse_header(bytes);
  if (h.dtype != GridDtype::kUint8) throw DataError("grid file: expected uint8 payload");
  Mask grid(h.rows, h.cols, h.channels);
  std::copy(bytes.begin() + kHeaderSize, bytes.end(), grid.values().begin());
  return grid;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_grid(const std::filesystem::path& path, const Grid<float>& grid) { write_bytes(path, encode_grid(grid)); }
void write_grid(const std::filesystem::path& path, const Mask& grid) { write_bytes(path, encode_grid(grid)); }
void write_grid(const std::filesystem::path& path, const Field& grid) { write_bytes(path, encode_grid(grid)); }

Grid<float> read_float_grid(const std::filesystem::path& path) { return decode_float_grid(read_bytes(path)); }
Mask read_mask_grid(const std::filesystem::path& path) { return decode_mask_grid(read_bytes(path)); }

}  // namespace protoeval
