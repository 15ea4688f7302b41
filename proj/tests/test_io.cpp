#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

#include "egcnn/egcnn.hpp"
#include "egcnn/run_config.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace egcnn;
using egcnn::testing::random_grid;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            ("egcnn_io_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

bool bitwise_equal(const GridF& a, const GridF& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (std::bit_cast<std::uint32_t>(a[k]) != std::bit_cast<std::uint32_t>(b[k])) return false;
  return true;
}

GridF integer_grid(Rng& rng, std::size_t h, std::size_t w, std::size_t c, int maxv) {
  GridF g(h, w, c);
  for (auto& v : g.values()) v = std::floor(static_cast<float>(rng.uniform(0.0, maxv + 0.999)));
  return g;
}

void truncate_file(const std::string& path, std::size_t drop) {
  const auto size = fs::file_size(path);
  fs::resize_file(path, size - drop);
}

}  // namespace

TEST(Pfm, RoundTripIsBitwiseForGrayAndRgb) {
  TempDir tmp;
  Rng rng(11);
  for (std::size_t c : {1u, 3u}) {
    GridF g = random_grid(rng, 7, 9, c, -1e6, 1e6);
    g[0] = 0.0f;
    g[1] = -0.0f;
    g[2] = std::numeric_limits<float>::denorm_min();
    g[3] = std::numeric_limits<float>::max();
    const std::string path = tmp.file("g" + std::to_string(c) + ".pfm");
    write_pfm(path, g);
    EXPECT_TRUE(bitwise_equal(read_pfm(path), g));
  }
}

TEST(Pfm, LayoutIsLittleEndianBottomUp) {
  TempDir tmp;
  GridF g = GridF::from_rows({{1.0f, 2.0f}, {3.0f, 4.0f}});
  const std::string path = tmp.file("layout.pfm");
  write_pfm(path, g);
  const auto bytes = detail::read_file(path);
  const std::string header = "Pf\n2 2\n-1.0\n";
  ASSERT_EQ(bytes.size(), header.size() + 16);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  auto at = [&](std::size_t k) {
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 8) | bytes[header.size() + 4 * k + b];
    return std::bit_cast<float>(v);
  };
  // first stored row is the bottom one
  EXPECT_EQ(at(0), 3.0f);
  EXPECT_EQ(at(1), 4.0f);
  EXPECT_EQ(at(2), 1.0f);
  EXPECT_EQ(at(3), 2.0f);
}

TEST(Pfm, ReadsBigEndianFiles) {
  TempDir tmp;
  std::string data = "Pf\n1 2\n1.0\n";
  for (float v : {5.5f, -2.25f}) {  // bottom row first
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int b = 3; b >= 0; --b) data.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
  }
  const std::string path = tmp.file("be.pfm");
  detail::write_file(path, data);
  const GridF g = read_pfm(path);
  ASSERT_EQ(g.height(), 2u);
  EXPECT_EQ(g(0, 0), -2.25f);
  EXPECT_EQ(g(1, 0), 5.5f);
}

TEST(Pfm, RejectsCorruptFiles) {
  TempDir tmp;
  Rng rng(3);
  const std::string path = tmp.file("t.pfm");
  write_pfm(path, random_grid(rng, 4, 4, 1, 0, 1));
  truncate_file(path, 3);
  EXPECT_THROW(read_pfm(path), IoError);

  detail::write_file(path, "P5\n2 2\n255\nabcd");
  EXPECT_THROW(read_pfm(path), IoError);
  detail::write_file(path, "Pf\n2 2\n0\n0000000000000000");
  EXPECT_THROW(read_pfm(path), IoError);

  GridF bad(1, 2, 1);
  bad[1] = std::numeric_limits<float>::quiet_NaN();
  write_pfm(path, bad);
  EXPECT_THROW(read_pfm(path), IoError);
  EXPECT_THROW(read_pfm(tmp.file("missing.pfm")), IoError);
}

TEST(Netpbm, BinaryRoundTrips) {
  TempDir tmp;
  Rng rng(5);
  const GridF g8 = integer_grid(rng, 6, 5, 1, 255);
  write_netpbm(tmp.file("a.pgm"), g8, 255);
  EXPECT_EQ(read_image(tmp.file("a.pgm")), g8);

  const GridF g16 = integer_grid(rng, 6, 5, 1, 65535);
  write_netpbm(tmp.file("b.pgm"), g16, 65535);
  EXPECT_EQ(read_image(tmp.file("b.pgm")), g16);

  const GridF rgb = integer_grid(rng, 4, 3, 3, 255);
  write_netpbm(tmp.file("c.ppm"), rgb, 255);
  EXPECT_EQ(read_image(tmp.file("c.ppm")), rgb);
}

TEST(Netpbm, ReadsAsciiWithComments) {
  TempDir tmp;
  detail::write_file(tmp.file("a.pgm"), "P2\n# comment\n3 2\n# more\n9\n0 1 2\n3 4 9\n");
  const GridF g = read_image(tmp.file("a.pgm"));
  ASSERT_EQ(g.height(), 2u);
  ASSERT_EQ(g.width(), 3u);
  EXPECT_EQ(g(1, 2), 9.0f);
  EXPECT_EQ(g(0, 1), 1.0f);

  detail::write_file(tmp.file("a.ppm"), "P3 1 1 255 10 20 30");
  const GridF c = read_image(tmp.file("a.ppm"));
  EXPECT_EQ(c.channels(), 3u);
  EXPECT_EQ(c(0, 0, 2), 30.0f);
}

TEST(Netpbm, WriteRoundsAndClamps) {
  TempDir tmp;
  GridF g = GridF::from_rows({{-4.0f, 2.4f, 2.6f, 300.0f}});
  write_netpbm(tmp.file("c.pgm"), g, 255);
  const GridF r = read_image(tmp.file("c.pgm"));
  EXPECT_EQ(r, GridF::from_rows({{0.0f, 2.0f, 3.0f, 255.0f}}));
}

TEST(Netpbm, RejectsCorruptFiles) {
  TempDir tmp;
  Rng rng(7);
  write_netpbm(tmp.file("t.pgm"), integer_grid(rng, 5, 5, 1, 65535), 65535);
  truncate_file(tmp.file("t.pgm"), 1);
  EXPECT_THROW(read_image(tmp.file("t.pgm")), IoError);
  detail::write_file(tmp.file("z.pgm"), "P5\n0 4\n255\n");
  EXPECT_THROW(read_image(tmp.file("z.pgm")), IoError);
  detail::write_file(tmp.file("u.pgm"), "P7\n1 1\n255\nx");
  EXPECT_THROW(read_image(tmp.file("u.pgm")), IoError);
  detail::write_file(tmp.file("h.pgm"), "P2\n2 2\n255\n1 2 3");
  EXPECT_THROW(read_image(tmp.file("h.pgm")), IoError);
  EXPECT_THROW(write_netpbm(tmp.file("x.pgm"), GridF(2, 2, 2), 255), IoError);
  EXPECT_THROW(write_netpbm(tmp.file("x.pgm"), GridF(2, 2, 1), 1000), IoError);
}

TEST(Png, RoundTrips8And16Bit) {
  TempDir tmp;
  Rng rng(9);
  for (std::size_t c : {1u, 3u}) {
    const GridF g8 = integer_grid(rng, 9, 7, c, 255);
    write_png(tmp.file("a.png"), g8, 8);
    EXPECT_EQ(read_image(tmp.file("a.png")), g8);
    const GridF g16 = integer_grid(rng, 9, 7, c, 65535);
    write_png(tmp.file("b.png"), g16, 16);
    EXPECT_EQ(read_image(tmp.file("b.png")), g16);
  }
}

TEST(Png, RejectsCorruptFiles) {
  TempDir tmp;
  Rng rng(13);
  write_png(tmp.file("t.png"), integer_grid(rng, 32, 32, 1, 255), 8);
  truncate_file(tmp.file("t.png"), fs::file_size(tmp.file("t.png")) / 2);
  EXPECT_THROW(read_image(tmp.file("t.png")), IoError);

  auto bytes = detail::read_file(tmp.file("t.png"));
  bytes.resize(12);
  detail::write_file(tmp.file("s.png"), std::string(bytes.begin(), bytes.end()));
  EXPECT_THROW(read_image(tmp.file("s.png")), IoError);

  detail::write_file(tmp.file("junk.img"), "hello world");
  EXPECT_THROW(read_image(tmp.file("junk.img")), IoError);
  EXPECT_THROW(write_png(tmp.file("x.png"), GridF(2, 2, 1), 12), IoError);
}

TEST(Depth, SixteenBitScaling) {
  TempDir tmp;
  GridF d = GridF::from_rows({{0.0f, 1.0f, 2.5f}, {10.0f, 100.25f, 255.99609375f}});
  for (const char* name : {"d.png", "d.pgm"}) {
    write_depth(tmp.file(name), d, 256.0);
    const GridF raw = read_image(tmp.file(name));
    EXPECT_EQ(raw(0, 2), 640.0f);
    EXPECT_EQ(raw(1, 2), 65535.0f);
    EXPECT_EQ(read_depth(tmp.file(name), 256.0), d);
  }
  // quantization error is at most half a step
  Rng rng(2);
  const GridF r = random_grid(rng, 5, 5, 1, 0.0, 200.0);
  write_depth(tmp.file("q.png"), r, 256.0);
  const GridF back = read_depth(tmp.file("q.png"), 256.0);
  for (std::size_t k = 0; k < r.size(); ++k) EXPECT_LE(std::abs(back[k] - r[k]), 0.5 / 256 + 1e-6);
}

TEST(Depth, PfmIsLosslessAndScaleIgnored) {
  TempDir tmp;
  Rng rng(4);
  const GridF d = random_grid(rng, 6, 6, 1, 0.1, 80.0);
  write_depth(tmp.file("d.pfm"), d, 256.0);
  EXPECT_TRUE(bitwise_equal(read_depth(tmp.file("d.pfm"), 1000.0), d));
}

TEST(Depth, Errors) {
  TempDir tmp;
  EXPECT_THROW(write_depth(tmp.file("d.tiff"), GridF(2, 2, 1)), IoError);
  write_png(tmp.file("rgb.png"), GridF(2, 2, 3), 16);
  EXPECT_THROW(read_depth(tmp.file("rgb.png")), IoError);
  write_png(tmp.file("g.png"), GridF(2, 2, 1), 16);
  EXPECT_THROW(read_depth(tmp.file("g.png"), 0.0), IoError);
  write_pfm(tmp.file("rgb.pfm"), GridF(2, 2, 3));
  EXPECT_THROW(read_depth(tmp.file("rgb.pfm")), IoError);
}

TEST(EdgeDistFiles, SixteenBitQuantization) {
  TempDir tmp;
  GridF f = GridF::from_rows({{0.1f, 0.46f, 1.0f}});
  write_edge_dist(tmp.file("f.pgm"), f);
  const GridF back = read_edge_dist(tmp.file("f.pgm"));
  for (std::size_t k = 0; k < f.size(); ++k) EXPECT_NEAR(back[k], f[k], 0.5 / 65535 + 1e-7);
  EXPECT_EQ(back[2], 1.0f);
}

TEST(RunConfigParse, KeysValuesAndComments) {
  std::istringstream in("# header\n\nrate = 0.05\n  seed=7  \nbranch=a\nbranch=b\nempty=\n");
  const RunConfig cfg = RunConfig::parse(in);
  EXPECT_EQ(cfg.get("rate"), "0.05");
  EXPECT_EQ(cfg.get("seed"), "7");
  EXPECT_EQ(cfg.get("branch"), "a\nb");
  EXPECT_TRUE(cfg.has("empty"));
  EXPECT_EQ(cfg.get("empty"), "");
  EXPECT_EQ(cfg.get("missing", "x"), "x");
  EXPECT_EQ(cfg.entries().size(), 4u);
}

TEST(RunConfigParse, RoundTripThroughText) {
  std::istringstream in("b=2\na=1\nbranch=x\nbranch=y\n");
  const RunConfig cfg = RunConfig::parse(in);
  std::istringstream again(cfg.to_string());
  EXPECT_EQ(RunConfig::parse(again), cfg);
}

TEST(RunConfigParse, Errors) {
  std::istringstream dup("rate=1\nrate=2\n");
  EXPECT_THROW(RunConfig::parse(dup), ConfigError);
  std::istringstream noeq("rate 1\n");
  EXPECT_THROW(RunConfig::parse(noeq), ConfigError);
  std::istringstream nokey("=1\n");
  EXPECT_THROW(RunConfig::parse(nokey), ConfigError);
  std::istringstream ok("rate=1\nbogus=2\n");
  const RunConfig cfg = RunConfig::parse(ok);
  EXPECT_THROW(cfg.require_known({"rate"}), ConfigError);
  EXPECT_NO_THROW(cfg.require_known({"rate", "bogus"}));
  EXPECT_THROW(RunConfig::load("/nonexistent/dir/cfg.txt"), ConfigError);
}
