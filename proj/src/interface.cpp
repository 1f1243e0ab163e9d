#include "protoeval/interface.hpp"

#include "protoeval/error.hpp"
#include "protoeval/numeric.hpp"

namespace protoeval {

namespace {

void check_threshold(double t) {
  if (!(t >= 0 && t <= 1)) throw ConfigError("threshold must lie in [0,1]");
}

void check_masks(const PartMasks& masks, std::size_t rows, std::size_t cols) {
  std::vector<std::uint8_t> seen(rows * cols, 0);
  for (const auto& [slot, mask] : masks) {
    if (mask.rows() != rows || mask.cols() != cols) {
      throw DimensionError("part mask '" + slot + "' does not match attribution dims");
    }
    auto v = mask.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i]) continue;
      if (seen[i]) throw DataError("part masks overlap at slot '" + slot + "'");
      seen[i] = 1;
    }
  }
}

}  // namespace

PartImportance part_importance(const Field& attribution, const PartMasks& masks) {
  check_masks(masks, attribution.rows(), attribution.cols());
  PartImportance pi;
  CompensatedSum total;
  for (double v : attribution.values()) total.add(v);
  pi.total_mass = total.value();

  CompensatedSum parts;
  for (const auto& [slot, mask] : masks) {
    CompensatedSum s;
    auto mv = mask.values();
    auto av = attribution.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      if (mv[i]) s.add(av[i]);
    }
    pi.scores[slot] = s.value();
    parts.add(s.value());
  }
  pi.background_residual = pi.total_mass - parts.value();
  return pi;
}

PartSet important_parts_bb(const std::vector<PrototypeBox>& boxes, const PartMasks& masks, double t) {
  check_threshold(t);
  PartSet out;
  out.threshold = t;
  out.variant = PartSetVariant::kBoxOverlap;
  for (const auto& [slot, mask] : masks) {
    std::size_t area = 0, covered = 0;
    for (std::size_t r = 0; r < mask.rows(); ++r) {
      for (std::size_t c = 0; c < mask.cols(); ++c) {
        if (!mask(r, c)) continue;
        ++area;
        for (const auto& box : boxes) {
          if (box.bounds.contains(r, c)) {
            ++covered;
            break;
          }
        }
      }
    }
    if (area == 0) {
      out.flags.push_back("empty mask for slot '" + slot + "' excluded");
      continue;
    }
    if (static_cast<double>(covered) >= t * static_cast<double>(area)) out.members.insert(slot);
  }
  return out;
}

PartSet important_parts_ssm(const AttributionGrid& attr, const PartMasks& masks, double t) {
  check_threshold(t);
  if (attr.method != Method::kSummedSimilarity) throw DataError("important_parts_ssm requires an SSM attribution grid");
  PartSet out;
  out.threshold = t;
  out.variant = PartSetVariant::kSsmMass;
  PartImportance pi = part_importance(attr, masks);
  if (pi.total_mass <= 0) {
    out.flags.push_back("zero total attribution mass");
    return out;
  }
  for (const auto& [slot, score] : pi.scores) {
    if (score > t * pi.total_mass) out.members.insert(slot);
  }
  return out;
}

PartSet important_parts(const Explanation& explanation, const PartMasks& masks, double t) {
  if (explanation.grid.method == Method::kBoundingBox) return important_parts_bb(explanation.boxes, masks, t);
  return important_parts_ssm(explanation.grid, masks, t);
}

}  // namespace protoeval
