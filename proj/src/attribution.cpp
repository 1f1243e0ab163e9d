#include "protoeval/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "protoeval/error.hpp"
#include "protoeval/numeric.hpp"

namespace protoeval {

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

Tap tap(std::size_t pixel, const PatchGeometry& g, std::size_t cells) {
  double u = (static_cast<double>(pixel) - g.center(0)) / static_cast<double>(g.stride);
  u = std::clamp(u, 0.0, static_cast<double>(cells - 1));
  auto lo = static_cast<std::size_t>(std::floor(u));
  std::size_t hi = std::min(lo + 1, cells - 1);
  return {lo, hi, u - static_cast<double>(lo)};
}

void require_class_prototypes(const Model& model, const Logits& logits, int class_id) {
  if (class_id < 0 || class_id >= model.num_classes || model.prototypes_of(class_id).empty()) {
    throw DataError("attribution: class " + std::to_string(class_id) + " has no prototypes");
  }
  if (logits.similarity_maps.size() != model.prototypes.size()) {
    throw DataError("attribution: logits do not carry a similarity map per prototype");
  }
}

}  // namespace

std::string method_name(Method method) { return method == Method::kBoundingBox ? "bb" : "ssm"; }

Method parse_method(std::string_view name) {
  if (name == "bb" || name == "BB") return Method::kBoundingBox;
  if (name == "ssm" || name == "SSM") return Method::kSummedSimilarity;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected bb or ssm)");
}

Field upsample_map(const Field& grid, const PatchGeometry& geometry, std::size_t height, std::size_t width) {
  if (grid.rows() == 0 || grid.cols() == 0) throw DimensionError("upsample_map: empty grid");
  if (height < grid.rows() || width < grid.cols()) throw DimensionError("upsample_map: target smaller than grid");
  std::vector<Tap> rows(height), cols(width);
  for (std::size_t r = 0; r < height; ++r) rows[r] = tap(r, geometry, grid.rows());
  for (std::size_t c = 0; c < width; ++c) cols[c] = tap(c, geometry, grid.cols());
  Field out(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    const Tap& tr = rows[r];
    for (std::size_t c = 0; c < width; ++c) {
      const Tap& tc = cols[c];
      double top = (1 - tc.frac) * grid(tr.lo, tc.lo) + tc.frac * grid(tr.lo, tc.hi);
      double bottom = (1 - tc.frac) * grid(tr.hi, tc.lo) + tc.frac * grid(tr.hi, tc.hi);
      out(r, c) = (1 - tr.frac) * top + tr.frac * bottom;
    }
  }
  return out;
}

Field upsample_map(const SimilarityMap& sim, std::size_t height, std::size_t width) {
  return upsample_map(sim.values, sim.geometry, height, width);
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw DimensionError("quantile of empty set");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

BoxBounds extract_box(const Field& upsampled, double percentile) {
  double threshold = quantile(upsampled.values(), percentile);
  BoxBounds box{upsampled.rows(), upsampled.cols(), 0, 0};
  for (std::size_t r = 0; r < upsampled.rows(); ++r) {
    for (std::size_t c = 0; c < upsampled.cols(); ++c) {
      if (upsampled(r, c) < threshold) continue;
      box.row_min = std::min(box.row_min, r);
      box.col_min = std::min(box.col_min, c);
      box.row_max = std::max(box.row_max, r);
      box.col_max = std::max(box.col_max, c);
    }
  }
  return box;
}

std::vector<PrototypeBox> prototype_boxes(const Logits& logits, const Model& model, int class_id, std::size_t height,
                                          std::size_t width, double percentile) {
  require_class_prototypes(model, logits, class_id);
  std::vector<PrototypeBox> boxes;
  for (std::size_t p : model.prototypes_of(class_id)) {
    Field up = upsample_map(logits.similarity_maps[p], height, width);
    double peak = *std::max_element(up.values().begin(), up.values().end());
    double fill = peak * model.weight(p, class_id);
    if (fill <= 0) continue;
    boxes.push_back({extract_box(up, percentile), fill, p});
  }
  return boxes;
}

AttributionGrid rasterize_boxes(const std::vector<PrototypeBox>& boxes, int class_id, std::size_t height,
                                std::size_t width) {
  AttributionGrid out{Field(height, width), Method::kBoundingBox, class_id};
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      CompensatedSum acc;
      for (const auto& box : boxes) {
        if (box.bounds.contains(r, c)) acc.add(std::max(0.0, box.fill_value));
      }
      out.values(r, c) = acc.value();
    }
  }
  return out;
}

AttributionGrid bb_attribution(const Logits& logits, const Model& model, int class_id, std::size_t height,
                               std::size_t width, double percentile) {
  return rasterize_boxes(prototype_boxes(logits, model, class_id, height, width, percentile), class_id, height, width);
}

AttributionGrid ssm_attribution(const Logits& logits, const Model& model, int class_id, std::size_t height,
                                std::size_t width) {
  require_class_prototypes(model, logits, class_id);
  auto protos = model.prototypes_of(class_id);
  std::vector<Field> layers;
  std::vector<double> weights;
  for (std::size_t p : protos) {
    layers.push_back(upsample_map(logits.similarity_maps[p], height, width));
    weights.push_back(model.weight(p, class_id));
  }
  AttributionGrid out{Field(height, width), Method::kSummedSimilarity, class_id};
  auto dst = out.values.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    CompensatedSum acc;
    for (std::size_t k = 0; k < layers.size(); ++k) acc.add(weights[k] * layers[k].values()[i]);
    dst[i] = std::max(0.0, acc.value());
  }
  return out;
}

Explanation explain(const Logits& logits, const Model& model, Method method, int class_id, std::size_t height,
                    std::size_t width, double percentile) {
  if (method == Method::kSummedSimilarity) return {ssm_attribution(logits, model, class_id, height, width), {}};
  auto boxes = prototype_boxes(logits, model, class_id, height, width, percentile);
  auto grid = rasterize_boxes(boxes, class_id, height, width);
  return {std::move(grid), std::move(boxes)};
}

}  // namespace protoeval
