#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dada/dataset.hpp"

using namespace dada;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dada_test_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

ChannelView view(std::vector<double> v) {
  ChannelView cv;
  cv.parent = "s";
  cv.values = std::move(v);
  return cv;
}

}  // namespace

TEST(Dataset, LoadCsvWithLabelsAndImputation) {
  const auto dir = temp_dir("load");
  write_text(dir / "a.csv", "c0,c1,label\n1,10,0\n,20,1\n3,NaN,0\n4,40,0\n");
  const auto ts = load_csv(dir / "a.csv");
  ASSERT_EQ(ts.length(), 4u);
  ASSERT_EQ(ts.channels(), 2u);
  EXPECT_DOUBLE_EQ(ts.values(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(ts.values(2, 1), 30.0);
  ASSERT_TRUE(ts.labels.has_value());
  EXPECT_EQ(*ts.labels, (Labels{0, 1, 0, 0}));
}

TEST(Dataset, LoadCsvErrors) {
  const auto dir = temp_dir("errors");
  write_text(dir / "ragged.csv", "c0,c1\n1,2\n3\n");
  write_text(dir / "empty.csv", "c0\n");
  write_text(dir / "badlabel.csv", "c0,label\n1,2\n");
  write_text(dir / "badcol.csv", "x,y\n1,2\n");
  const auto kind = [](const fs::path& p) {
    try {
      load_csv(p);
    } catch (const DataError& e) {
      return e.kind();
    }
    return std::string("none");
  };
  EXPECT_EQ(kind(dir / "ragged.csv"), "MalformedFile");
  EXPECT_EQ(kind(dir / "empty.csv"), "EmptySeries");
  EXPECT_EQ(kind(dir / "badlabel.csv"), "MalformedFile");
  EXPECT_EQ(kind(dir / "badcol.csv"), "MalformedFile");
  EXPECT_EQ(kind(dir / "missing.csv"), "MalformedFile");
}

TEST(Dataset, CsvRoundTripIsExact) {
  const auto dir = temp_dir("roundtrip");
  TimeSeries ts;
  ts.name = "r";
  ts.values = RowMatrix::Random(50, 3);
  ts.labels = Labels(50, 0);
  (*ts.labels)[7] = 1;
  write_csv(dir / "r.csv", ts);
  const auto back = load_csv(dir / "r.csv");
  EXPECT_EQ(back.values, ts.values);
  EXPECT_EQ(*back.labels, *ts.labels);
}

TEST(Dataset, ImputeHoldsEdges) {
  std::vector<double> x{NAN, 2.0, NAN, NAN, 8.0, NAN};
  impute_linear(x);
  EXPECT_EQ(x, (std::vector<double>{2, 2, 4, 6, 8, 8}));
  std::vector<double> bad{NAN, NAN};
  EXPECT_THROW(impute_linear(bad), DataError);
}

TEST(Dataset, SplitAndStackChannelsRoundTrip) {
  TimeSeries ts;
  ts.name = "m";
  ts.values = RowMatrix::Random(30, 4);
  const auto views = split_channels(ts);
  ASSERT_EQ(views.size(), 4u);
  EXPECT_EQ(views[2].channel_index, 2u);
  EXPECT_EQ(stack_channels(views), ts.values);
}

TEST(Dataset, WindowCountsAndStrides) {
  const auto cv = view(std::vector<double>(1000, 1.0));
  EXPECT_EQ(make_windows(cv, 100, 100).size(), 10u);
  EXPECT_EQ(make_windows(cv, 100, 50).size(), 19u);
  EXPECT_EQ(make_windows(cv, 100, 1).size(), 901u);
}

TEST(Dataset, TestModePadsTailWithLastValue) {
  std::vector<double> v(250);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto b = make_windows(view(v), 100, 7, WindowMode::kTest);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b.origin[2].start, 200u);
  EXPECT_EQ(b.origin[2].valid, 50u);
  EXPECT_TRUE(b.origin[2].padded);
  EXPECT_FALSE(b.origin[1].padded);
  EXPECT_EQ(b.windows(2, 49), 249.0);
  EXPECT_EQ(b.windows(2, 99), 249.0);
}

TEST(Dataset, StrideLargerThanWindowNeverStartsPastEnd) {
  const auto b = make_windows(view(std::vector<double>(250, 0.0)), 100, 200);
  for (const auto& o : b.origin) {
    EXPECT_LT(o.start, 250u);
    EXPECT_GE(o.valid, 1u);
  }
}

TEST(Dataset, SeriesTooShort) {
  try {
    make_windows(view(std::vector<double>(50, 0.0)), 100, 100);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), "SeriesTooShort");
  }
}

TEST(Dataset, NormalizeRoundTrip) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(5.0, 3.0);
  std::vector<double> v(500);
  for (auto& x : v) x = n(rng);
  const auto raw = make_windows(view(v), 100, 50);
  const auto b = normalize(raw);
  for (Eigen::Index k = 0; k < b.windows.rows(); ++k) {
    EXPECT_NEAR(b.windows.row(k).mean(), 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(b.windows.row(k).squaredNorm() / 100.0), 1.0, 1e-9);
  }
  const auto back = denormalize(b.windows, b.stats);
  EXPECT_LT((back - raw.windows).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Dataset, ConstantWindowUsesStdFloor) {
  const auto b = normalize(make_windows(view(std::vector<double>(100, 4.0)), 100, 100));
  EXPECT_EQ(b.stats[0].std, kStdFloor);
  EXPECT_EQ(b.windows.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Dataset, SeededOrderIsAPermutationAndDeterministic) {
  const auto a = seeded_order(100, 5);
  EXPECT_EQ(a, seeded_order(100, 5));
  EXPECT_NE(a, seeded_order(100, 6));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Dataset, ManifestRoundTripAndValidation) {
  const auto dir = temp_dir("manifest");
  write_text(dir / "n.csv", "c0\n1\n2\n");
  DatasetManifest m;
  m.seed = 4;
  m.entries.push_back({"n.csv", Role::kNormal, "d", "csv"});
  save_manifest(dir / "m.json", m);
  const auto back = load_manifest(dir / "m.json");
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(fs::path(back.entries[0].path), dir / "n.csv");
  EXPECT_EQ(back.seed, 4u);

  write_text(dir / "bad.json", R"({"entries": [], "extra": 1})");
  EXPECT_THROW(load_manifest(dir / "bad.json"), ConfigError);
  write_text(dir / "missing.json", R"({"entries": [{"path": "nope.csv", "role": "normal"}]})");
  EXPECT_THROW(load_manifest(dir / "missing.json"), ConfigError);
  write_text(dir / "role.json", R"({"entries": [{"path": "n.csv", "role": "weird"}]})");
  EXPECT_THROW(load_manifest(dir / "role.json"), ConfigError);
}

TEST(Dataset, TrainingWindowsByRole) {
  const auto dir = temp_dir("roles");
  TimeSeries a;
  a.values = RowMatrix::Random(300, 2);
  write_csv(dir / "a.csv", a);
  TimeSeries b;
  b.values = RowMatrix::Random(200, 1);
  b.labels = Labels(200, 0);
  write_csv(dir / "b.csv", b);
  DatasetManifest m;
  m.entries = {{(dir / "a.csv").string(), Role::kNormal, "x", "csv"}, {(dir / "b.csv").string(), Role::kAbnormal, "y", "csv"}};
  EXPECT_EQ(training_windows(m, Role::kNormal, 100, 100).size(), 6u);
  const auto ab = training_windows(m, Role::kAbnormal, 100, 100);
  EXPECT_EQ(ab.size(), 2u);
  EXPECT_TRUE(ab.labels.has_value());
}
