#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "siflip/plot.hpp"

using namespace siflip;
using namespace siflip::plot;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("siflip_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Image, LineEndpointsAndClipping) {
  Image img(10, 10);
  img.line(1, 1, 8, 5, kBlack);
  EXPECT_EQ(img.get(1, 1), kBlack);
  EXPECT_EQ(img.get(8, 5), kBlack);
  EXPECT_EQ(img.get(0, 9), kWhite);
  img.line(-5, -5, 20, 20, kBlack);  // off-canvas parts are dropped
  EXPECT_EQ(img.get(9, 9), kBlack);
}

TEST(Colormap, EndsAndMiddle) {
  EXPECT_EQ(diverging(-1.0, -1.0, 1.0), (Rgb{33, 102, 172}));
  EXPECT_EQ(diverging(1.0, -1.0, 1.0), (Rgb{178, 24, 43}));
  EXPECT_EQ(diverging(0.0, -1.0, 1.0), (Rgb{247, 247, 247}));
  EXPECT_EQ(diverging(7.0, -1.0, 1.0), diverging(1.0, -1.0, 1.0));
}

TEST(Heatmap, CellColoursFollowValues) {
  const auto img = heatmap({1.0, -1.0, 0.0, 1.0}, 2, 2, 5);
  EXPECT_EQ(img.width, 2u * 5 + 8);
  EXPECT_EQ(img.get(4 + 2, 4 + 2), diverging(1.0, -1, 1));
  EXPECT_EQ(img.get(4 + 7, 4 + 2), diverging(-1.0, -1, 1));
  EXPECT_THROW(heatmap({1.0}, 2, 2), ShapeError);
}

TEST(LineChart, SkipsMissingPointsAndRejectsEmptyInput) {
  Series s{"a", {1, 2, 3, 4}, {1.0, std::nan(""), 3.0, 2.0}};
  EXPECT_NO_THROW(line_chart({s}));
  Series empty{"b", {1}, {std::nan("")}};
  EXPECT_THROW(line_chart({empty}), InputError);
}

TEST(Png, WritingIsDeterministic) {
  const auto dir = scratch("png");
  Series s{"loss", {1, 2, 3}, {3.0, 2.0, 1.5}};
  write_png(dir / "a.png", line_chart({s}));
  write_png(dir / "b.png", line_chart({s}));
  const auto a = slurp(dir / "a.png");
  EXPECT_EQ(a, slurp(dir / "b.png"));
  ASSERT_GT(a.size(), 8u);
  EXPECT_EQ(a.substr(1, 3), "PNG");
  fs::remove_all(dir);
}

TEST(Csv, ReadsNumbersLabelsAndEmptyCells) {
  const auto dir = scratch("csv");
  std::ofstream(dir / "m.csv") << "epoch,loss,cer\n1,2.5,\n2,1.5,0.25\n";
  const auto t = read_csv(dir / "m.csv");
  EXPECT_EQ(t.columns, (std::vector<std::string>{"epoch", "loss", "cer"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_TRUE(std::isnan(t.values("cer")[0]));
  EXPECT_EQ(t.values("cer")[1], 0.25);
  EXPECT_THROW(t.column("wer"), ParseError);

  std::ofstream(dir / "l.csv") << "cell,unseen\nBase,0.5\nSIFLip,0.25\n";
  std::vector<std::string> labels;
  const auto l = read_csv(dir / "l.csv", &labels);
  EXPECT_EQ(labels, (std::vector<std::string>{"Base", "SIFLip"}));
  EXPECT_EQ(l.values("unseen")[1], 0.25);

  std::ofstream(dir / "empty.csv");
  EXPECT_THROW(read_csv(dir / "empty.csv"), InputError);
  std::ofstream(dir / "header.csv") << "a,b\n";
  EXPECT_THROW(read_csv(dir / "header.csv"), InputError);
  EXPECT_THROW(read_csv(dir / "missing.csv"), InputError);
  fs::remove_all(dir);
}
