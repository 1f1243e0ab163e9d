#include "protoeval/scenegen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "protoeval/error.hpp"
#include "protoeval/numeric.hpp"
#include "protoeval/parallel.hpp"

namespace protoeval {

namespace {

constexpr std::array<float, 3> kBackgroundBase{0.42f, 0.47f, 0.38f};
constexpr double kBackgroundLattice = 8.0;
constexpr double kBackgroundSwing = 0.16;
constexpr double kBackgroundGrain = 0.06;
constexpr double kMinPartChroma = 0.3;
constexpr int kPlacementAttempts = 8;

// Bird-like arrangement for the standard slot names.
const std::map<std::string, SlotRegion, std::less<>>& standard_regions() {
  static const std::map<std::string, SlotRegion, std::less<>> regions{
      {"eyes", {0.16, 0.52, 0.34, 0.72}},  {"beak", {0.28, 0.76, 0.48, 0.96}},
      {"wings", {0.40, 0.30, 0.66, 0.64}}, {"tail", {0.28, 0.04, 0.52, 0.26}},
      {"feet", {0.72, 0.34, 0.92, 0.60}},
  };
  return regions;
}

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  double hh = std::fmod(h, 1.0) * 6.0;
  int sector = static_cast<int>(hh) % 6;
  double f = hh - std::floor(hh);
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

bool shape_contains(Shape shape, double u, double v) {
  switch (shape) {
    case Shape::kRectangle: return true;
    case Shape::kEllipse: return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
    case Shape::kTriangle: return std::abs(u - 0.5) <= 0.5 * (1.0 - v) + 1e-9;
    case Shape::kDiamond: return std::abs(u - 0.5) + std::abs(v - 0.5) <= 0.5 + 1e-9;
  }
  return false;
}

struct PixelRect {
  std::size_t r0, c0, r1, c1;  // half-open
};

PixelRect region_pixels(const SlotRegion& region, std::size_t height, std::size_t width) {
  auto at = [](double f, std::size_t n) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(n))); };
  PixelRect rect{at(region.row0, height), at(region.col0, width), at(region.row1, height), at(region.col1, width)};
  rect.r1 = std::min(rect.r1, height);
  rect.c1 = std::min(rect.c1, width);
  return rect;
}

/// Rasterises one variant into a fresh mask. Placement jitter is a function of
/// (scene_seed, slot_index, attempt) only, so re-rendering a slot in
/// isolation lands on the same pixels.
Mask rasterize_part(const VariantDescriptor& variant, const SlotRegion& region, std::size_t height,
                    std::size_t width, std::uint64_t scene_seed, std::size_t slot_index, int attempt) {
  PixelRect rect = region_pixels(region, height, width);
  std::size_t rh = rect.r1 > rect.r0 ? rect.r1 - rect.r0 : 0;
  std::size_t rw = rect.c1 > rect.c0 ? rect.c1 - rect.c0 : 0;
  auto ph = static_cast<std::size_t>(std::lround(variant.size * static_cast<double>(rh)));
  auto pw = static_cast<std::size_t>(std::lround(variant.size * static_cast<double>(rw)));
  ph = std::clamp<std::size_t>(ph, 1, std::max<std::size_t>(rh, 1));
  pw = std::clamp<std::size_t>(pw, 1, std::max<std::size_t>(rw, 1));
  if (rh == 0 || rw == 0) throw DataError("render: slot region is empty at this resolution");

  std::uint64_t h = hash_combine({scene_seed, slot_index, static_cast<std::uint64_t>(attempt)});
  auto dr = static_cast<std::size_t>(unit_from_hash(h) * static_cast<double>(rh - ph + 1));
  auto dc = static_cast<std::size_t>(unit_from_hash(mix64(h)) * static_cast<double>(rw - pw + 1));

  Mask mask(height, width);
  for (std::size_t r = 0; r < ph; ++r) {
    for (std::size_t c = 0; c < pw; ++c) {
      // Triangles point to the right: v runs along columns.
      double u = (static_cast<double>(r) + 0.5) / static_cast<double>(ph);
      double v = (static_cast<double>(c) + 0.5) / static_cast<double>(pw);
      if (shape_contains(variant.shape, u, v)) mask(rect.r0 + dr + r, rect.c0 + dc + c) = 1;
    }
  }
  return mask;
}

bool overlaps(const Mask& a, const Mask& b) {
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] && bv[i]) return true;
  }
  return false;
}

void paint(Image& image, const Mask& mask, const std::array<float, 3>& color) {
  for (std::size_t r = 0; r < image.rows(); ++r) {
    for (std::size_t c = 0; c < image.cols(); ++c) {
      if (!mask(r, c)) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) image(r, c, ch) = color[ch];
    }
  }
}

void fill_background(Image& image, const Mask& where, std::uint64_t background_seed) {
  for (std::size_t r = 0; r < image.rows(); ++r) {
    for (std::size_t c = 0; c < image.cols(); ++c) {
      if (!where(r, c)) continue;
      auto px = background_pixel(background_seed, r, c);
      for (std::size_t ch = 0; ch < 3; ++ch) image(r, c, ch) = px[ch];
    }
  }
}

Mask complement_of_parts(const Scene& scene) {
  Mask bg(scene.height(), scene.width(), 1, 1);
  for (const auto& [slot, mask] : scene.part_masks) {
    auto bv = bg.values();
    auto mv = mask.values();
    for (std::size_t i = 0; i < bv.size(); ++i) {
      if (mv[i]) bv[i] = 0;
    }
  }
  return bg;
}

std::vector<ClassSpec> pick_classes(const PartVocabulary& vocabulary, int num_classes, std::uint64_t seed) {
  const std::size_t slots = vocabulary.part_slots.size();
  std::uint64_t combos = distinct_assignments(vocabulary);
  std::mt19937_64 rng(hash_combine({seed, 0xC1A55ULL}));

  auto decode = [&](std::uint64_t code) {
    Assignment a;
    for (std::size_t s = 0; s < slots; ++s) {
      auto nv = static_cast<std::uint64_t>(vocabulary.variants[s].size());
      a[vocabulary.part_slots[s]] = static_cast<int>(code % nv);
      code /= nv;
    }
    return a;
  };

  std::vector<std::uint64_t> codes;
  if (combos <= 1'000'000) {
    std::vector<std::uint64_t> all(combos);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    codes.assign(all.begin(), all.begin() + num_classes);
  } else {
    std::set<std::uint64_t> seen;
    std::uniform_int_distribution<std::uint64_t> pick(0, combos - 1);
    while (codes.size() < static_cast<std::size_t>(num_classes)) {
      std::uint64_t code = pick(rng);
      if (seen.insert(code).second) codes.push_back(code);
    }
  }
  std::vector<ClassSpec> classes;
  for (int c = 0; c < num_classes; ++c) classes.push_back({c, decode(codes[static_cast<std::size_t>(c)])});
  return classes;
}

std::string scene_id(std::string_view partition, int index) {
  std::string digits = std::to_string(index);
  return std::string(partition) + "_" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

}  // namespace

std::vector<std::string> Scene::present_slots() const {
  std::vector<std::string> slots;
  for (const auto& [slot, mask] : part_masks) slots.push_back(slot);
  return slots;
}

std::size_t PartVocabulary::slot_index(std::string_view slot) const {
  auto it = std::find(part_slots.begin(), part_slots.end(), slot);
  if (it == part_slots.end()) throw DataError("unknown part slot '" + std::string(slot) + "'");
  return static_cast<std::size_t>(it - part_slots.begin());
}

bool PartVocabulary::has_slot(std::string_view slot) const {
  return std::find(part_slots.begin(), part_slots.end(), slot) != part_slots.end();
}

void PartVocabulary::validate() const {
  if (part_slots.empty()) throw ConfigError("vocabulary has no part slots");
  if (variants.size() != part_slots.size() || regions.size() != part_slots.size()) {
    throw ConfigError("vocabulary: variants/regions not parallel to part_slots");
  }
  std::set<std::string> names(part_slots.begin(), part_slots.end());
  if (names.size() != part_slots.size()) throw ConfigError("vocabulary: duplicate slot names");
  for (std::size_t s = 0; s < part_slots.size(); ++s) {
    if (variants[s].size() < 2) throw ConfigError("vocabulary: slot '" + part_slots[s] + "' has fewer than 2 variants");
    const SlotRegion& r = regions[s];
    if (!(0 <= r.row0 && r.row0 < r.row1 && r.row1 <= 1 && 0 <= r.col0 && r.col0 < r.col1 && r.col1 <= 1)) {
      throw ConfigError("vocabulary: slot '" + part_slots[s] + "' has an invalid region");
    }
    for (const auto& v : variants[s]) {
      if (!(v.size > 0 && v.size <= 1)) throw ConfigError("vocabulary: variant size outside (0,1]");
      auto [lo, hi] = std::minmax_element(v.color.begin(), v.color.end());
      if (*hi - *lo < kMinPartChroma) {
        throw ConfigError("vocabulary: a variant of '" + part_slots[s] + "' is too close to background colours");
      }
    }
    for (std::size_t a = 0; a < variants[s].size(); ++a) {
      for (std::size_t b = a + 1; b < variants[s].size(); ++b) {
        if (variants[s][a] == variants[s][b]) {
          throw ConfigError("vocabulary: slot '" + part_slots[s] + "' has two identical variants");
        }
      }
    }
    for (std::size_t o = 0; o < s; ++o) {
      const SlotRegion& q = regions[o];
      bool disjoint = r.row1 <= q.row0 || q.row1 <= r.row0 || r.col1 <= q.col0 || q.col1 <= r.col0;
      if (!disjoint) throw ConfigError("vocabulary: regions of '" + part_slots[o] + "' and '" + part_slots[s] + "' overlap");
    }
  }
}

const ClassSpec& DatasetBundle::class_spec(int class_id) const {
  for (const auto& c : classes) {
    if (c.class_id == class_id) return c;
  }
  throw DataError("unknown class id " + std::to_string(class_id));
}

PartVocabulary make_vocabulary(const std::vector<std::string>& slots, int variants_per_slot) {
  if (variants_per_slot < 2) throw ConfigError("variants_per_slot must be >= 2");
  PartVocabulary vocab;
  vocab.part_slots = slots;
  const std::size_t n = slots.size();
  const bool standard = std::all_of(slots.begin(), slots.end(),
                                    [](const std::string& s) { return standard_regions().count(s) > 0; });
  const std::size_t cells = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n)))));
  constexpr std::array<double, 3> sizes{1.0, 0.75, 0.88};

  for (std::size_t s = 0; s < n; ++s) {
    std::vector<VariantDescriptor> vs;
    for (int v = 0; v < variants_per_slot; ++v) {
      double k = static_cast<double>(s) * variants_per_slot + v;
      // Golden-ratio stepping keeps consecutive hues far apart.
      double hue = std::fmod(0.05 + k * 0.6180339887498949, 1.0);
      double value = (v % 2 == 0) ? 0.95 : 0.7;
      vs.push_back({static_cast<Shape>((s + static_cast<std::size_t>(v)) % 4), hsv_to_rgb(hue, 0.85, value),
                    sizes[static_cast<std::size_t>(v) % sizes.size()]});
    }
    vocab.variants.push_back(std::move(vs));
    if (standard) {
      vocab.regions.push_back(standard_regions().find(slots[s])->second);
    } else {
      double cell = 1.0 / static_cast<double>(cells);
      double row = static_cast<double>(s / cells) * cell, col = static_cast<double>(s % cells) * cell;
      double margin = 0.15 * cell;
      vocab.regions.push_back({row + margin, col + margin, row + cell - margin, col + cell - margin});
    }
  }
  vocab.validate();
  return vocab;
}

std::uint64_t distinct_assignments(const PartVocabulary& vocabulary) {
  std::uint64_t combos = 1;
  for (const auto& vs : vocabulary.variants) {
    if (combos > (std::uint64_t{1} << 40)) return combos;
    combos *= vs.size();
  }
  return combos;
}

std::array<float, 3> background_pixel(std::uint64_t background_seed, std::size_t row, std::size_t col) {
  // Value noise on a coarse lattice plus per-pixel grain.
  double y = static_cast<double>(row) / kBackgroundLattice, x = static_cast<double>(col) / kBackgroundLattice;
  auto iy = static_cast<std::uint64_t>(y), ix = static_cast<std::uint64_t>(x);
  double fy = y - static_cast<double>(iy), fx = x - static_cast<double>(ix);
  auto lattice = [&](std::uint64_t a, std::uint64_t b) {
    return unit_from_hash(hash_combine({background_seed, a, b})) - 0.5;
  };
  double swing = (1 - fy) * ((1 - fx) * lattice(iy, ix) + fx * lattice(iy, ix + 1)) +
                 fy * ((1 - fx) * lattice(iy + 1, ix) + fx * lattice(iy + 1, ix + 1));
  std::array<float, 3> px{};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double grain = unit_from_hash(hash_combine({background_seed, row, col, ch, 0x6A41ULL})) - 0.5;
    double v = kBackgroundBase[ch] + kBackgroundSwing * swing + kBackgroundGrain * grain;
    px[ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return px;
}

Scene render_scene(const ClassSpec& class_spec, const PartVocabulary& vocabulary, std::size_t height,
                   std::size_t width, std::uint64_t scene_seed, std::uint64_t background_seed) {
  if (height < 16 || width < 16) throw ConfigError("render: image dims must be at least 16x16");
  Scene scene;
  scene.class_id = class_spec.class_id;
  scene.scene_seed = scene_seed;
  scene.background_seed = background_seed;
  scene.provenance = class_spec.assignment;
  scene.image = Image(height, width, 3);
  fill_background(scene.image, Mask(height, width, 1, 1), background_seed);

  for (std::size_t s = 0; s < vocabulary.part_slots.size(); ++s) {
    const std::string& slot = vocabulary.part_slots[s];
    auto it = class_spec.assignment.find(slot);
    if (it == class_spec.assignment.end() || it->second == kAbsent) {
      scene.provenance[slot] = kAbsent;
      continue;
    }
    if (it->second < 0 || static_cast<std::size_t>(it->second) >= vocabulary.variants[s].size()) {
      throw DataError("render: variant index out of range for slot '" + slot + "'");
    }
    const VariantDescriptor& variant = vocabulary.variants[s][static_cast<std::size_t>(it->second)];
    Mask mask;
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      mask = rasterize_part(variant, vocabulary.regions[s], height, width, scene_seed, s, attempt);
      placed = count_set(mask) > 0 && std::none_of(scene.part_masks.begin(), scene.part_masks.end(),
                                                   [&](const auto& kv) { return overlaps(kv.second, mask); });
    }
    if (!placed) throw DataError("render: could not place slot '" + slot + "' without collision");
    paint(scene.image, mask, variant.color);
    scene.part_masks.emplace(slot, std::move(mask));
  }
  for (const auto& key : vocabulary.part_slots) {
    if (!scene.provenance.count(key)) scene.provenance[key] = kAbsent;
  }
  return scene;
}

Scene remove_part(const Scene& scene, std::string_view slot) {
  auto it = scene.part_masks.find(std::string(slot));
  if (it == scene.part_masks.end()) {
    throw InterventionError("remove_part: slot '" + std::string(slot) + "' is not present in scene " + scene.id);
  }
  Scene out = scene;
  fill_background(out.image, it->second, scene.background_seed);
  out.part_masks.erase(std::string(slot));
  out.provenance[std::string(slot)] = kAbsent;
  return out;
}

SwapResult swap_part(const Scene& scene, const PartVocabulary& vocabulary, std::string_view slot, int variant) {
  const std::string key(slot);
  auto it = scene.part_masks.find(key);
  if (it == scene.part_masks.end()) throw InterventionError("swap_part: slot '" + key + "' is not present");
  const std::size_t s = vocabulary.slot_index(slot);
  if (variant < 0 || static_cast<std::size_t>(variant) >= vocabulary.variants[s].size()) {
    throw InterventionError("swap_part: variant " + std::to_string(variant) + " invalid for slot '" + key + "'");
  }
  auto prov = scene.provenance.find(key);
  if (prov != scene.provenance.end() && prov->second == variant) return {scene, true};

  Scene out = remove_part(scene, slot);
  const VariantDescriptor& desc = vocabulary.variants[s][static_cast<std::size_t>(variant)];
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    Mask mask = rasterize_part(desc, vocabulary.regions[s], scene.height(), scene.width(), scene.scene_seed, s, attempt);
    bool clear = count_set(mask) > 0 && std::none_of(out.part_masks.begin(), out.part_masks.end(),
                                                     [&](const auto& kv) { return overlaps(kv.second, mask); });
    if (!clear) continue;
    paint(out.image, mask, desc.color);
    out.part_masks.emplace(key, std::move(mask));
    out.provenance[key] = variant;
    return {std::move(out), false};
  }
  throw InterventionError("swap_part: could not place variant without collision");
}

Scene randomize_background(const Scene& scene, std::uint64_t seed) {
  Scene out = scene;
  out.background_seed = seed;
  fill_background(out.image, complement_of_parts(scene), seed);
  return out;
}

std::vector<SlotSet> gt_identifying_sets(const ClassSpec& class_spec, const std::vector<ClassSpec>& all_classes) {
  std::vector<std::string> slots;
  for (const auto& [slot, v] : class_spec.assignment) slots.push_back(slot);
  if (slots.size() > 20) throw DataError("gt_identifying_sets: too many slots for exhaustive search");

  // For each rival, the bitmask of slots where it differs; a subset
  // identifies the class iff it hits every rival's difference mask.
  std::vector<std::uint32_t> rivals;
  for (const auto& other : all_classes) {
    if (other.class_id == class_spec.class_id) continue;
    std::uint32_t diff = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      auto it = other.assignment.find(slots[i]);
      int theirs = it == other.assignment.end() ? kAbsent : it->second;
      if (theirs != class_spec.assignment.at(slots[i])) diff |= 1u << i;
    }
    rivals.push_back(diff);
  }

  std::vector<std::uint32_t> subsets(std::size_t{1} << slots.size());
  std::iota(subsets.begin(), subsets.end(), 0u);
  std::stable_sort(subsets.begin(), subsets.end(),
                   [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) < std::popcount(b); });
  std::vector<std::uint32_t> minimal;
  for (std::uint32_t s : subsets) {
    bool identifies = std::all_of(rivals.begin(), rivals.end(), [s](std::uint32_t d) { return (s & d) != 0; });
    if (!identifies) continue;
    bool has_subset = std::any_of(minimal.begin(), minimal.end(), [s](std::uint32_t m) { return (m & s) == m; });
    if (!has_subset) minimal.push_back(s);
  }

  std::vector<SlotSet> out;
  for (std::uint32_t m : minimal) {
    SlotSet set;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (m & (1u << i)) set.insert(slots[i]);
    }
    out.push_back(std::move(set));
  }
  std::sort(out.begin(), out.end());
  return out;
}

DatasetBundle generate_dataset(const GenerationConfig& config) {
  if (config.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (config.height < 16 || config.width < 16) throw ConfigError("image dims must be at least 16x16");
  if (config.train_count < config.num_classes || config.test_count < config.num_classes) {
    throw ConfigError("train_count and test_count must each be >= num_classes so every class appears in both");
  }
  if (!(config.augment_fraction >= 0 && config.augment_fraction <= 1)) {
    throw ConfigError("augment_fraction must be in [0,1]");
  }
  DatasetBundle bundle;
  bundle.config = config;
  bundle.vocabulary = make_vocabulary(config.part_slots, config.variants_per_slot);
  std::uint64_t combos = distinct_assignments(bundle.vocabulary);
  if (combos < static_cast<std::uint64_t>(config.num_classes)) {
    throw ConfigError("vocabulary admits only " + std::to_string(combos) + " distinct classes but " +
                      std::to_string(config.num_classes) + " were requested (deficit " +
                      std::to_string(static_cast<std::uint64_t>(config.num_classes) - combos) + ")");
  }
  bundle.classes = pick_classes(bundle.vocabulary, config.num_classes, config.seed);

  const auto H = static_cast<std::size_t>(config.height), W = static_cast<std::size_t>(config.width);
  auto make_partition = [&](std::string_view name, int count, std::uint64_t tag, bool augment) {
    std::vector<Scene> scenes(static_cast<std::size_t>(count));
    parallel_for(scenes.size(), [&](std::size_t i) {
      const ClassSpec& spec = bundle.classes[i % bundle.classes.size()];
      std::uint64_t scene_seed = hash_combine({config.seed, tag, i, 1});
      std::uint64_t bg_seed = hash_combine({config.seed, tag, i, 2});
      Scene scene = render_scene(spec, bundle.vocabulary, H, W, scene_seed, bg_seed);
      std::uint64_t coin = hash_combine({config.seed, tag, i, 3});
      if (augment && scene.part_masks.size() >= 2 && unit_from_hash(coin) < config.augment_fraction) {
        auto present = scene.present_slots();
        scene = remove_part(scene, present[mix64(coin) % present.size()]);
      }
      scene.id = scene_id(name, static_cast<int>(i));
      scenes[i] = std::move(scene);
    });
    return scenes;
  };
  bundle.train = make_partition("train", config.train_count, 0x7A11ULL, true);
  bundle.test = make_partition("test", config.test_count, 0x7E57ULL, false);
  return bundle;
}

}  // namespace protoeval
