#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "test_util.hpp"
#include "ucount/data/crop.hpp"
#include "ucount/data/generator.hpp"
#include "ucount/data/io.hpp"

namespace ucount {
namespace {

TEST(DotSet, RejectsPointsOutsideImage) {
  EXPECT_THROW(DotSet(8, 8, {{8.0, 1.0}}), ArgumentError);
  EXPECT_THROW(DotSet(8, 8, {{1.0, -0.1}}), ArgumentError);
  EXPECT_NO_THROW(DotSet(8, 8, {{0.0, 7.999}}));
}

TEST(RenderDensity, EmptyDotSetIsZero) {
  DenseGrid g = render_density(DotSet(16, 24, {}), 16, 24, 4.0);
  EXPECT_EQ(g, DenseGrid(16, 24));
}

TEST(RenderDensity, SingleDotHasUnitMass) {
  for (double sigma : {0.01, 0.3, 1.0, 4.0, 20.0}) {
    DenseGrid g = render_density(DotSet(32, 32, {{16.0, 16.0}}), 32, 32, sigma);
    EXPECT_NEAR(g.sum(), 1.0, 1e-12) << "sigma " << sigma;
  }
}

TEST(RenderDensity, BorderDotsKeepUnitMass) {
  for (Point p : {Point{0.0, 0.0}, Point{31.9, 0.2}, Point{0.5, 31.5}, Point{31.99, 31.99}}) {
    DenseGrid g = render_density(DotSet(32, 32, {p}), 32, 32, 4.0);
    EXPECT_NEAR(g.sum(), 1.0, 1e-12);
  }
}

TEST(RenderDensity, CountIsPreservedForRandomDots) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(0.0, 40.0), uy(0.0, 24.0);
  std::vector<Point> pts;
  for (int k = 0; k < 7; ++k) pts.push_back({ux(rng), uy(rng)});
  DenseGrid g = render_density(DotSet(24, 40, pts), 24, 40, 2.0);
  double total = 0.0;  // summation oracle, independent of DenseGrid::sum
  for (std::size_t i = 0; i < g.height(); ++i)
    for (std::size_t j = 0; j < g.width(); ++j) {
      EXPECT_GE(g.at(i, j), 0.0);
      total += g.at(i, j);
    }
  EXPECT_NEAR(total, 7.0, 1e-3);
}

TEST(RenderDensity, KernelIsTruncatedAtFourSigma) {
  DenseGrid g = render_density(DotSet(64, 64, {{32.5, 32.5}}), 64, 64, 2.0);
  EXPECT_GT(g.at(32, 40), 0.0);     // distance 8 = 4 sigma
  EXPECT_EQ(g.at(32, 41), 0.0);     // distance 9
  EXPECT_EQ(g.at(38, 38), 0.0);     // distance 8.49
}

TEST(RenderDensity, RejectsNonPositiveSigma) {
  EXPECT_THROW(render_density(DotSet(8, 8, {}), 8, 8, 0.0), ArgumentError);
}

TEST(Generator, EmptyCrowd) {
  DomainConfig cfg;
  cfg.count_min = cfg.count_max = 0;
  for (const Sample& s : generate_domain(cfg, 3)) {
    EXPECT_EQ(s.dots.count(), 0u);
    EXPECT_EQ(s.gt_density.sum(), 0.0);
    EXPECT_GT(s.image.mean(), 0.0);
  }
}

TEST(Generator, Deterministic) {
  DomainConfig cfg;
  cfg.seed = 77;
  EXPECT_EQ(generate_domain(cfg, 4), generate_domain(cfg, 4));
  // Sample i does not depend on how many samples were requested.
  EXPECT_EQ(generate_domain(cfg, 2)[1], generate_domain(cfg, 5)[1]);
  cfg.seed = 78;
  EXPECT_NE(generate_domain(cfg, 1)[0], generate_domain(DomainConfig{}, 1)[0]);
}

TEST(Generator, CountsFollowConfiguredRange) {
  DomainConfig cfg;
  cfg.count_min = 50;
  cfg.count_max = 100;
  cfg.seed = 5;
  for (const Sample& s : generate_domain(cfg, 20)) {
    const double mass = s.gt_density.sum();
    EXPECT_NEAR(mass, static_cast<double>(s.dots.count()), 1e-3);
    EXPECT_GE(mass, 50.0 - 1e-3);
    EXPECT_LE(mass, 100.0 + 1e-3);
    for (double v : s.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(s.image.height(), 64u);
  }
}

TEST(Generator, RejectsUnsatisfiableConfig) {
  DomainConfig cfg;
  cfg.count_max = 5000;
  EXPECT_THROW(generate_domain(cfg, 1), ArgumentError);
  cfg = DomainConfig{};
  cfg.height = 60;
  EXPECT_THROW(generate_domain(cfg, 1), ArgumentError);
  EXPECT_THROW(generate_domain(DomainConfig{}, 0), ArgumentError);
}

TEST(Generator, ShiftedDomainDoublesCrowd) {
  DomainConfig src;
  DomainConfig tgt = src.shifted(9);
  EXPECT_EQ(tgt.count_min, 2 * src.count_min);
  EXPECT_EQ(tgt.count_max, 2 * src.count_max);
  EXPECT_LT(tgt.radius_max, src.radius_max);
  EXPECT_NO_THROW(tgt.validate());
}

Sample uniform_sample() {
  DenseGrid gt(64, 64, 160.0 / 4096.0);
  return Sample{"u", DenseGrid(64, 64, 0.5), DotSet(64, 64, {}), gt};
}

TEST(CropGrid, UniformMapSplitsEvenly) {
  Sample s = uniform_sample();
  auto crops = crop_grid(s);
  ASSERT_EQ(crops.size(), 16u);
  for (const Sample& c : crops) {
    EXPECT_EQ(c.image.height(), 16u);
    EXPECT_NEAR(c.count(), s.count() / 16.0, 1e-9);
  }
}

TEST(CropGrid, MassStaysInOccupiedQuadrant) {
  // Dots at least 4 sigma from the quadrant's outer edges, one in each of its four crops.
  std::vector<Point> pts = {{10.0, 10.0}, {20.0, 11.0}, {9.5, 21.0}, {22.0, 22.0}, {12.0, 13.0}};
  DotSet dots(64, 64, pts);
  Sample s{"q", DenseGrid(64, 64), dots, render_density(dots, 64, 64, 2.0)};
  auto crops = crop_grid(s);
  std::set<std::size_t> occupied;
  double total = 0.0;
  for (std::size_t k = 0; k < crops.size(); ++k) {
    if (crops[k].count() > 0.0) occupied.insert(k);
    total += crops[k].count();
  }
  EXPECT_EQ(occupied, (std::set<std::size_t>{0, 1, 4, 5}));
  EXPECT_NEAR(total, 5.0, 1e-9);
}

TEST(CropGrid, ReassemblesToParent) {
  DomainConfig cfg;
  Sample s = generate_domain(cfg, 1)[0];
  auto crops = crop_grid(s);
  std::vector<DenseGrid> img, gt;
  for (const Sample& c : crops) {
    img.push_back(c.image);
    gt.push_back(c.gt_density);
  }
  EXPECT_EQ(assemble_crops(img, 4, 4), s.image);
  EXPECT_EQ(assemble_crops(gt, 4, 4), s.gt_density);
}

TEST(CropGrid, PartitionPreservesCountAndDots) {
  DomainConfig cfg;
  cfg.seed = 3;
  for (const Sample& s : generate_domain(cfg, 5)) {
    double total = 0.0;
    std::size_t dots = 0;
    for (const Sample& c : crop_grid(s)) {
      total += c.count();
      dots += c.dots.count();
    }
    EXPECT_NEAR(total, s.count(), 1e-3);
    EXPECT_EQ(dots, s.dots.count());
  }
}

TEST(CropGrid, BorderDotBelongsToFloorPixelCrop) {
  DotSet dots(64, 64, {{16.0, 15.99}});
  Sample s{"b", DenseGrid(64, 64), dots, render_density(dots, 64, 64, 4.0)};
  auto crops = crop_grid(s);
  EXPECT_EQ(crops[1].dots.count(), 1u);
  EXPECT_EQ(crops[0].dots.count(), 0u);
  EXPECT_DOUBLE_EQ(crops[1].dots.points()[0].x, 0.0);
  EXPECT_EQ(crops[1].id, "b_c01");
}

TEST(CropGrid, RejectsIndivisibleExtents) {
  Sample s{"x", DenseGrid(30, 32), DotSet(30, 32, {}), DenseGrid(30, 32)};
  EXPECT_THROW(crop_grid(s), ShapeError);
}

class PersistTest : public ::testing::Test {
 protected:
  test::TempDir dir_;
};

TEST_F(PersistTest, GridRoundTripIsBitExact) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1e3);
  DenseGrid g(24, 40);
  for (double& v : g.data()) v = n(rng);
  g[3] = -0.0;
  g[4] = 5e-324;
  const auto path = dir_.path() / "g.grid";
  save_grid(path, g);
  const std::string first = detail::read_file(path);
  DenseGrid back = load_grid(path);
  ASSERT_TRUE(back.same_shape(g));
  EXPECT_EQ(0, std::memcmp(back.data().data(), g.data().data(), g.size() * sizeof(double)));
  save_grid(path, back);
  EXPECT_EQ(detail::read_file(path), first);
  EXPECT_EQ(first.size(), 8u + 4 + 4 + 4 + 2 * 8 + g.size() * 8);
}

TEST_F(PersistTest, DistinctDiagnostics) {
  const auto path = dir_.path() / "g.grid";
  save_grid(path, DenseGrid(4, 4, 1.0));
  std::string bytes = detail::read_file(path);

  auto kind_of = [&](std::string mutated) {
    detail::write_file(path, mutated);
    try {
      load_grid(path);
    } catch (const FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return FormatError::Kind::kIo;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), FormatError::Kind::kBadMagic);
  std::string bad_version = bytes;
  bad_version[8] = 7;
  EXPECT_EQ(kind_of(bad_version), FormatError::Kind::kVersionMismatch);
  EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() - 3)), FormatError::Kind::kTruncated);
  std::string bad_dtype = bytes;
  bad_dtype[12] = 9;
  EXPECT_EQ(kind_of(bad_dtype), FormatError::Kind::kMalformedHeader);
  EXPECT_EQ(kind_of(bytes + "zz"), FormatError::Kind::kMalformedHeader);
  EXPECT_THROW(load_grid(dir_.path() / "missing.grid"), FormatError);
}

TEST_F(PersistTest, ContainerRoundTrip) {
  TensorContainer c;
  c.metadata = "arch.beta=1\nseed=4\n";
  c.tensors["a.weight"] = Tensor(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6.5});
  c.tensors["b"] = Tensor(Shape{1}, 0.25);
  const auto path = dir_.path() / "m.ckpt";
  save_container(path, c);
  TensorContainer back = load_container(path);
  EXPECT_EQ(back.metadata, c.metadata);
  EXPECT_EQ(back.tensors, c.tensors);
  std::string bytes = detail::read_file(path);
  EXPECT_THROW(decode_container(bytes.substr(0, 30)), FormatError);
  EXPECT_THROW(decode_tensor(bytes), FormatError);  // container is not a grid
}

TEST_F(PersistTest, DotsAndSamplesRoundTrip) {
  DomainConfig cfg;
  auto samples = generate_domain(cfg, 3, "t");
  SampleStore store(dir_.path() / "store");
  store.save_all(samples);
  EXPECT_EQ(store.ids(), (std::vector<std::string>{"t0000", "t0001", "t0002"}));
  EXPECT_EQ(store.load_all(), samples);
}

TEST_F(PersistTest, SplitResolvesSubsetInFileOrder) {
  DomainConfig cfg;
  cfg.count_min = 1;
  cfg.count_max = 3;
  auto samples = generate_domain(cfg, 3);
  samples[0].id = "a";
  samples[1].id = "b";
  samples[2].id = "c";
  SampleStore store(dir_.path() / "store");
  store.save_all(samples);
  save_split(dir_.path() / "split.txt", {"b", "a"});
  auto got = store.resolve(load_split(dir_.path() / "split.txt"));
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].id, "b");
  EXPECT_EQ(got[1].id, "a");
  EXPECT_THROW(store.resolve({"zz"}), ArgumentError);
}

TEST_F(PersistTest, MalformedDotsReportLine) {
  detail::write_file(dir_.path() / "d.csv", "1,2\nfoo\n");
  try {
    load_dots(dir_.path() / "d.csv", 8, 8);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

}  // namespace
}  // namespace ucount
