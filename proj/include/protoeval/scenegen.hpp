#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "protoeval/grid.hpp"

namespace protoeval {

inline constexpr int kAbsent = -1;

enum class Shape { kRectangle = 0, kEllipse = 1, kTriangle = 2, kDiamond = 3 };

struct VariantDescriptor {
  Shape shape = Shape::kRectangle;
  std::array<float, 3> color{};
  double size = 1.0;  // fraction of the slot region, in (0, 1]

  friend bool operator==(const VariantDescriptor&, const VariantDescriptor&) = default;
};

/// Placement region for a slot, as fractions of image height/width.
struct SlotRegion {
  double row0 = 0, col0 = 0, row1 = 1, col1 = 1;

  friend bool operator==(const SlotRegion&, const SlotRegion&) = default;
};

struct PartVocabulary {
  std::vector<std::string> part_slots;
  std::vector<std::vector<VariantDescriptor>> variants;  // indexed like part_slots
  std::vector<SlotRegion> regions;                       // indexed like part_slots

  std::size_t slot_index(std::string_view slot) const;
  bool has_slot(std::string_view slot) const;
  /// Throws ConfigError when a vocabulary invariant is broken.
  void validate() const;

  friend bool operator==(const PartVocabulary&, const PartVocabulary&) = default;
};

/// slot -> variant index, or kAbsent. Keys are exactly the vocabulary slots.
using Assignment = std::map<std::string, int>;
using SlotSet = std::set<std::string>;

struct ClassSpec {
  int class_id = 0;
  Assignment assignment;

  friend bool operator==(const ClassSpec&, const ClassSpec&) = default;
};

struct Scene {
  std::string id;
  Image image;
  std::map<std::string, Mask> part_masks;  // present slots only
  int class_id = 0;
  std::uint64_t scene_seed = 0;
  std::uint64_t background_seed = 0;
  Assignment provenance;

  std::size_t height() const { return image.rows(); }
  std::size_t width() const { return image.cols(); }
  std::vector<std::string> present_slots() const;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct GenerationConfig {
  int num_classes = 10;
  std::vector<std::string> part_slots{"beak", "wings", "feet", "eyes", "tail"};
  int variants_per_slot = 3;
  int height = 64;
  int width = 64;
  int train_count = 200;
  int test_count = 100;
  std::uint64_t seed = 1;
  /// Fraction of training scenes rendered with one part removed.
  double augment_fraction = 0.25;

  friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

struct DatasetBundle {
  std::vector<Scene> train;
  std::vector<Scene> test;
  PartVocabulary vocabulary;
  std::vector<ClassSpec> classes;
  GenerationConfig config;

  const ClassSpec& class_spec(int class_id) const;
};

PartVocabulary make_vocabulary(const std::vector<std::string>& slots, int variants_per_slot);

/// Number of distinct full assignments the vocabulary admits (saturating).
std::uint64_t distinct_assignments(const PartVocabulary& vocabulary);

DatasetBundle generate_dataset(const GenerationConfig& config);

Scene render_scene(const ClassSpec& class_spec, const PartVocabulary& vocabulary, std::size_t height,
                   std::size_t width, std::uint64_t scene_seed, std::uint64_t background_seed);

/// Background colour at one pixel; a pure function of (seed, position).
std::array<float, 3> background_pixel(std::uint64_t background_seed, std::size_t row, std::size_t col);

/// Throws InterventionError if the slot is not present.
Scene remove_part(const Scene& scene, std::string_view slot);

struct SwapResult {
  Scene scene;
  bool noop = false;
};
SwapResult swap_part(const Scene& scene, const PartVocabulary& vocabulary, std::string_view slot, int variant);

Scene randomize_background(const Scene& scene, std::uint64_t seed);

/// All minimal slot subsets whose restricted assignment matches no other
/// class, sorted.
std::vector<SlotSet> gt_identifying_sets(const ClassSpec& class_spec, const std::vector<ClassSpec>& all_classes);

}  // namespace protoeval
