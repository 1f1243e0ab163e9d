#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "protoeval/attribution.hpp"
#include "protoeval/error.hpp"
#include "test_support.hpp"

using namespace protoeval;

namespace {

Field random_field(std::size_t rows, std::size_t cols, std::uint32_t seed, double lo = 0, double hi = 5) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Field f(rows, cols);
  for (double& v : f.values()) v = u(rng);
  return f;
}

// Hand-built model with `k` prototypes owned by class 0 and given maps.
struct Synthetic {
  Model model;
  Logits logits;
};

Synthetic synthetic(const std::vector<Field>& maps, const std::vector<double>& weights) {
  Synthetic s;
  s.model.num_classes = 1;
  s.model.prototypes_per_class = static_cast<int>(maps.size());
  for (std::size_t p = 0; p < maps.size(); ++p) {
    Prototype proto;
    proto.vector.assign(s.model.feature_bank.dimension(), 0.0);
    proto.index_within_class = static_cast<int>(p);
    s.model.prototypes.push_back(proto);
    s.model.class_weights.push_back(weights[p]);
    SimilarityMap m{maps[p], p, s.model.feature_bank.geometry};
    s.logits.similarity_maps.push_back(m);
    s.logits.scores.push_back(0);
  }
  s.logits.scores.resize(1);
  return s;
}

// Bilinear interpolation written from the closed form.
double bilinear(const Field& g, const PatchGeometry& geo, double y, double x) {
  auto coord = [&](double p, std::size_t n) {
    double u = (p - (geo.patch - 1) / 2.0) / geo.stride;
    return std::min(std::max(u, 0.0), static_cast<double>(n - 1));
  };
  double u = coord(y, g.rows()), v = coord(x, g.cols());
  std::size_t i0 = static_cast<std::size_t>(u), j0 = static_cast<std::size_t>(v);
  std::size_t i1 = std::min(i0 + 1, g.rows() - 1), j1 = std::min(j0 + 1, g.cols() - 1);
  double a = u - i0, b = v - j0;
  return (1 - a) * (1 - b) * g(i0, j0) + (1 - a) * b * g(i0, j1) + a * (1 - b) * g(i1, j0) + a * b * g(i1, j1);
}

struct TrainedSmall {
  DatasetBundle data;
  Model model;
};

const TrainedSmall& trained() {
  static const TrainedSmall t = [] {
    TrainedSmall out;
    out.data = generate_dataset(testing_support::small_config(5));
    out.model = train(out.data, testing_support::small_train_config(5));
    return out;
  }();
  return t;
}

}  // namespace

TEST(Method, NamesRoundTrip) {
  EXPECT_EQ(parse_method(method_name(Method::kBoundingBox)), Method::kBoundingBox);
  EXPECT_EQ(parse_method("ssm"), Method::kSummedSimilarity);
  EXPECT_THROW(parse_method("gradcam"), ConfigError);
}

TEST(Upsample, ConstantMapStaysConstant) {
  Field g(15, 15, 1, 2.75);
  Field up = upsample_map(g, PatchGeometry{}, 64, 64);
  for (double v : up.values()) EXPECT_EQ(v, 2.75);
}

TEST(Upsample, UnitStrideReproducesCells) {
  Field g = random_field(9, 7, 1);
  Field up = upsample_map(g, PatchGeometry{1, 1}, 9, 7);
  EXPECT_EQ(up, g);
}

TEST(Upsample, MatchesClosedFormBilinear) {
  PatchGeometry geo{8, 8};
  Field g = random_field(8, 8, 2);
  Field up = upsample_map(g, geo, 64, 64);
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 64; ++c) EXPECT_NEAR(up(r, c), bilinear(g, geo, r, c), 1e-12);
  }
  PatchGeometry def;
  Field g15 = random_field(15, 15, 3);
  Field up15 = upsample_map(g15, def, 64, 64);
  for (std::size_t r = 0; r < 64; r += 3) {
    for (std::size_t c = 0; c < 64; c += 5) EXPECT_NEAR(up15(r, c), bilinear(g15, def, r, c), 1e-12);
  }
}

TEST(Upsample, RejectsShrinking) { EXPECT_THROW(upsample_map(Field(8, 8), PatchGeometry{}, 4, 64), DimensionError); }

TEST(Quantile, LinearInterpolation) {
  std::vector<double> v{4, 1, 3, 2};
  EXPECT_EQ(quantile(v, 0), 1);
  EXPECT_EQ(quantile(v, 1), 4);
  EXPECT_DOUBLE_EQ(quantile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile(v, 0.95), 3.85);
}

TEST(ExtractBox, SinglePeakGivesOnePixelBox) {
  Field f(4, 4);
  double v = 0;
  for (double& x : f.values()) x = v++;
  f(2, 1) = 100;
  BoxBounds b = extract_box(f, 0.95);
  EXPECT_EQ(b, (BoxBounds{2, 1, 2, 1}));
}

TEST(ExtractBox, ConstantMapCoversEverything) {
  Field f(10, 12, 1, 0.5);
  EXPECT_EQ(extract_box(f, 0.95), (BoxBounds{0, 0, 9, 11}));
}

TEST(ExtractBox, MatchesPixelScan) {
  for (std::uint32_t seed = 0; seed < 20; ++seed) {
    Field f = random_field(32, 40, seed);
    double q = 0.8 + 0.01 * seed;
    std::vector<double> sorted(f.values().begin(), f.values().end());
    std::sort(sorted.begin(), sorted.end());
    double pos = q * (sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    double thr = sorted[lo] + (pos - lo) * (sorted[std::min(lo + 1, sorted.size() - 1)] - sorted[lo]);
    BoxBounds want{1000, 1000, 0, 0};
    for (std::size_t r = 0; r < 32; ++r) {
      for (std::size_t c = 0; c < 40; ++c) {
        if (f(r, c) >= thr) {
          want.row_min = std::min(want.row_min, r);
          want.col_min = std::min(want.col_min, c);
          want.row_max = std::max(want.row_max, r);
          want.col_max = std::max(want.col_max, c);
        }
      }
    }
    EXPECT_EQ(extract_box(f, q), want);
  }
}

TEST(BbAttribution, OnePrototypeFillsItsBox) {
  Field peak(15, 15, 1, 0.1);
  peak(7, 7) = 3.0;
  auto s = synthetic({peak}, {1.0});
  AttributionGrid g = bb_attribution(s.logits, s.model, 0, 64, 64);
  auto boxes = prototype_boxes(s.logits, s.model, 0, 64, 64);
  ASSERT_EQ(boxes.size(), 1u);
  Field up = upsample_map(peak, PatchGeometry{}, 64, 64);
  double top = *std::max_element(up.values().begin(), up.values().end());
  EXPECT_EQ(boxes[0].fill_value, top);
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(g.values(r, c), boxes[0].bounds.contains(r, c) ? top : 0.0);
  }
  EXPECT_EQ(g.method, Method::kBoundingBox);
}

TEST(BbAttribution, ZeroWeightsGiveZeroGrid) {
  auto s = synthetic({random_field(15, 15, 1), random_field(15, 15, 2)}, {0.0, 0.0});
  AttributionGrid g = bb_attribution(s.logits, s.model, 0, 64, 64);
  for (double v : g.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(BbAttribution, OverlappingBoxesAdd) {
  auto s = synthetic({random_field(15, 15, 4), random_field(15, 15, 5), random_field(15, 15, 6)}, {0.7, 1.3, 0.4});
  auto boxes = prototype_boxes(s.logits, s.model, 0, 64, 64, 0.8);
  AttributionGrid g = rasterize_boxes(boxes, 0, 64, 64);
  // Rasterise each box separately and add.
  Field want(64, 64);
  for (const auto& b : boxes) {
    for (std::size_t r = b.bounds.row_min; r <= b.bounds.row_max; ++r) {
      for (std::size_t c = b.bounds.col_min; c <= b.bounds.col_max; ++c) want(r, c) += b.fill_value;
    }
  }
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(g.values.values()[i], want.values()[i], 1e-12);
}

TEST(BbAttribution, PiecewiseConstantAndSupportedOnBoxes) {
  const auto& t = trained();
  for (std::size_t i = 0; i < 6; ++i) {
    const Scene& s = t.data.test[i];
    Logits l = forward(s.image, t.model);
    Explanation e = explain(l, t.model, Method::kBoundingBox, s.class_id, s.height(), s.width());
    std::set<double> distinct(e.grid.values.values().begin(), e.grid.values.values().end());
    EXPECT_LE(distinct.size(), std::size_t{1} << t.model.prototypes_per_class);
    for (std::size_t r = 0; r < s.height(); ++r) {
      for (std::size_t c = 0; c < s.width(); ++c) {
        if (e.grid.values(r, c) == 0) continue;
        EXPECT_TRUE(std::any_of(e.boxes.begin(), e.boxes.end(), [&](const PrototypeBox& b) { return b.bounds.contains(r, c); }));
      }
    }
  }
}

TEST(SsmAttribution, SinglePrototypeIsTheUpsampledMap) {
  Field m = random_field(15, 15, 9);
  auto s = synthetic({m}, {1.0});
  AttributionGrid g = ssm_attribution(s.logits, s.model, 0, 64, 64);
  EXPECT_EQ(g.values, upsample_map(m, PatchGeometry{}, 64, 64));
}

TEST(SsmAttribution, DoublingWeightsDoublesPixels) {
  std::vector<Field> maps{random_field(15, 15, 1), random_field(15, 15, 2), random_field(15, 15, 3)};
  auto a = synthetic(maps, {0.5, 0.25, 1.5});
  auto b = synthetic(maps, {1.0, 0.5, 3.0});
  AttributionGrid ga = ssm_attribution(a.logits, a.model, 0, 64, 64);
  AttributionGrid gb = ssm_attribution(b.logits, b.model, 0, 64, 64);
  for (std::size_t i = 0; i < ga.values.size(); ++i) EXPECT_NEAR(gb.values.values()[i], 2 * ga.values.values()[i], 1e-12);
}

TEST(SsmAttribution, NegativeMassIsClamped) {
  auto s = synthetic({Field(15, 15, 1, 1.0), Field(15, 15, 1, 2.0)}, {1.0, -1.0});
  AttributionGrid g = ssm_attribution(s.logits, s.model, 0, 64, 64);
  for (double v : g.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(SsmAttribution, MatchesNaiveLoopOnTrainedModel) {
  const auto& t = trained();
  for (std::size_t i = 0; i < 4; ++i) {
    const Scene& s = t.data.test[i];
    Logits l = forward(s.image, t.model);
    AttributionGrid g = ssm_attribution(l, t.model, s.class_id, s.height(), s.width());
    Field want(s.height(), s.width());
    for (std::size_t p = 0; p < t.model.prototypes.size(); ++p) {
      if (t.model.prototypes[p].owner_class != s.class_id) continue;
      for (std::size_t r = 0; r < s.height(); ++r) {
        for (std::size_t c = 0; c < s.width(); ++c) {
          want(r, c) += t.model.weight(p, s.class_id) * bilinear(l.similarity_maps[p].values, t.model.feature_bank.geometry, r, c);
        }
      }
    }
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(g.values.values()[k], std::max(0.0, want.values()[k]), 1e-9);
  }
}

TEST(Attribution, IndependentOfPrototypeOrder) {
  const auto& t = trained();
  Model perm = t.model;
  std::vector<std::size_t> order(perm.prototypes.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(1);
  std::shuffle(order.begin(), order.end(), rng);
  const auto C = static_cast<std::size_t>(perm.num_classes);
  for (std::size_t i = 0; i < order.size(); ++i) {
    perm.prototypes[i] = t.model.prototypes[order[i]];
    for (std::size_t c = 0; c < C; ++c) perm.class_weights[i * C + c] = t.model.class_weights[order[i] * C + c];
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const Scene& s = t.data.test[i];
    Logits la = forward(s.image, t.model), lb = forward(s.image, perm);
    for (Method m : {Method::kBoundingBox, Method::kSummedSimilarity}) {
      auto ga = explain(la, t.model, m, s.class_id, s.height(), s.width()).grid.values;
      auto gb = explain(lb, perm, m, s.class_id, s.height(), s.width()).grid.values;
      for (std::size_t k = 0; k < ga.size(); ++k) EXPECT_NEAR(ga.values()[k], gb.values()[k], 1e-12);
    }
  }
}

TEST(Attribution, GridsAreNonNegativeWithImageDims) {
  const auto& t = trained();
  const Scene& s = t.data.test[5];
  Logits l = forward(s.image, t.model);
  for (Method m : {Method::kBoundingBox, Method::kSummedSimilarity}) {
    for (int c = 0; c < t.model.num_classes; ++c) {
      auto g = explain(l, t.model, m, c, s.height(), s.width()).grid;
      EXPECT_EQ(g.values.rows(), s.height());
      EXPECT_EQ(g.values.cols(), s.width());
      EXPECT_EQ(g.class_id, c);
      for (double v : g.values.values()) EXPECT_GE(v, 0.0);
    }
  }
  EXPECT_THROW(explain(l, t.model, Method::kSummedSimilarity, 99, s.height(), s.width()), DataError);
}
