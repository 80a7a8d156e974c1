#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dada/pipeline.hpp"
#include "dada/synth.hpp"

using namespace dada;
using namespace dada::synth;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthConfig small() {
  SynthConfig c;
  c.length = 3000;
  c.series_per_family = 1;
  c.calibration_length = 1000;
  return c;
}

}  // namespace

TEST(Synth, FamilyNamesRoundTrip) {
  for (auto f : kFamilies) EXPECT_EQ(family_from_string(to_string(f)), f);
  EXPECT_THROW(family_from_string("square"), ConfigError);
}

TEST(Synth, GeneratorsAreDeterministicAndFinite) {
  for (auto f : kFamilies) {
    std::mt19937_64 a(3), b(3);
    const auto x = generate(f, 2000, 0.05, a);
    EXPECT_EQ(x, generate(f, 2000, 0.05, b));
    for (double v : x) EXPECT_TRUE(std::isfinite(v));
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    EXPECT_GT(*hi - *lo, 0.1) << to_string(f);
  }
}

TEST(Synth, CorpusIsByteIdenticalForTheSameSeed) {
  const auto a = fs::temp_directory_path() / "dada_synth_a";
  const auto b = fs::temp_directory_path() / "dada_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  write_corpus(a, small());
  write_corpus(b, small());
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 3u * 2u + 2u + 2u);
}

TEST(Synth, CorpusLayout) {
  const auto dir = fs::temp_directory_path() / "dada_synth_layout";
  fs::remove_all(dir);
  const auto c = write_corpus(dir, small());
  const auto train = load_manifest(c.train_manifest);
  const auto test = load_manifest(c.test_manifest);
  EXPECT_EQ(train.entries.size(), 6u);
  ASSERT_EQ(test.entries.size(), 2u);
  const auto streams = test_streams(test);
  ASSERT_EQ(streams.size(), 1u);
  EXPECT_EQ(streams[0].test.domain_tag, "am");
  ASSERT_TRUE(streams[0].calibration.has_value());
  EXPECT_EQ(fs::path(streams[0].calibration->path).filename(), "am_0_calib.csv");
  for (const auto& e : train.entries) EXPECT_NE(e.domain_tag, "am");

  ASSERT_EQ(c.held_out.size(), 1u);
  const auto calib = load_csv(c.held_out[0].calibration);
  EXPECT_EQ(calib.length(), 1000u);
  EXPECT_FALSE(calib.labels.has_value());
  const auto ts = load_csv(c.held_out[0].test);
  ASSERT_TRUE(ts.labels.has_value());
  const double ratio = std::accumulate(ts.labels->begin(), ts.labels->end(), 0.0) / 3000.0;
  EXPECT_GE(ratio, 0.05);
}

TEST(Synth, DifferentSeedsDiffer) {
  std::mt19937_64 a(stream_seed(1, Family::kSine, 0, 0)), b(stream_seed(2, Family::kSine, 0, 0));
  EXPECT_NE(generate(Family::kSine, 100, 0.05, a), generate(Family::kSine, 100, 0.05, b));
}
