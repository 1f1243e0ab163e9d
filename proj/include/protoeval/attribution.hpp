#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "protoeval/grid.hpp"
#include "protoeval/protonet.hpp"

namespace protoeval {

enum class Method { kBoundingBox, kSummedSimilarity };

/// "bb" / "ssm".
std::string method_name(Method method);
Method parse_method(std::string_view name);

struct AttributionGrid {
  Field values;  // image resolution, non-negative
  Method method = Method::kSummedSimilarity;
  int class_id = 0;
};

/// Inclusive pixel bounds.
struct BoxBounds {
  std::size_t row_min = 0, col_min = 0, row_max = 0, col_max = 0;

  bool contains(std::size_t r, std::size_t c) const {
    return r >= row_min && r <= row_max && c >= col_min && c <= col_max;
  }
  friend bool operator==(const BoxBounds&, const BoxBounds&) = default;
};

struct PrototypeBox {
  BoxBounds bounds;
  double fill_value = 0;  // max of upsampled map times class weight
  std::size_t prototype = 0;
};

/// Bilinear resampling with cell (i, j) anchored at its patch centre; pixels
/// beyond the outermost centres take the edge value.
Field upsample_map(const Field& grid, const PatchGeometry& geometry, std::size_t height, std::size_t width);
Field upsample_map(const SimilarityMap& sim, std::size_t height, std::size_t width);

/// Linear-interpolated quantile of all values (numpy's default rule).
double quantile(std::span<const double> values, double q);

/// Tight box around every pixel whose value reaches the `percentile` quantile.
BoxBounds extract_box(const Field& upsampled, double percentile = 0.95);

/// Boxes of class-y prototypes whose clamped fill is positive.
std::vector<PrototypeBox> prototype_boxes(const Logits& logits, const Model& model, int class_id, std::size_t height,
                                          std::size_t width, double percentile = 0.95);

/// Rasterises boxes: each contributes max(fill, 0) over its area.
AttributionGrid rasterize_boxes(const std::vector<PrototypeBox>& boxes, int class_id, std::size_t height,
                                std::size_t width);

AttributionGrid bb_attribution(const Logits& logits, const Model& model, int class_id, std::size_t height,
                               std::size_t width, double percentile = 0.95);

AttributionGrid ssm_attribution(const Logits& logits, const Model& model, int class_id, std::size_t height,
                                std::size_t width);

/// Attribution grid plus, for BB, the boxes that P(.) needs.
struct Explanation {
  AttributionGrid grid;
  std::vector<PrototypeBox> boxes;
};

Explanation explain(const Logits& logits, const Model& model, Method method, int class_id, std::size_t height,
                    std::size_t width, double percentile = 0.95);

}  // namespace protoeval
