#pragma once

#include <map>
#include <string>
#include <vector>

#include "protoeval/attribution.hpp"
#include "protoeval/scenegen.hpp"

namespace protoeval {

using PartMasks = std::map<std::string, Mask>;

/// PI(.): attribution mass inside each part mask.
struct PartImportance {
  std::map<std::string, double> scores;
  double background_residual = 0;
  double total_mass = 0;
};

enum class PartSetVariant { kBoxOverlap, kSsmMass };

/// P(.): the parts deemed important at threshold t.
struct PartSet {
  SlotSet members;
  double threshold = 0;
  PartSetVariant variant = PartSetVariant::kSsmMass;
  std::vector<std::string> flags;  // degenerate inputs that were tolerated
};

PartImportance part_importance(const Field& attribution, const PartMasks& masks);
inline PartImportance part_importance(const AttributionGrid& attr, const PartMasks& masks) {
  return part_importance(attr.values, masks);
}

/// Slot is important iff at least a fraction t of its area lies in the box union.
PartSet important_parts_bb(const std::vector<PrototypeBox>& boxes, const PartMasks& masks, double t);

/// Slot is important iff its mass is strictly greater than t times the total.
PartSet important_parts_ssm(const AttributionGrid& attr, const PartMasks& masks, double t);

/// Dispatches on the explanation's method.
PartSet important_parts(const Explanation& explanation, const PartMasks& masks, double t);

}  // namespace protoeval
