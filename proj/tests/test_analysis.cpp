#include <gtest/gtest.h>

#include <sstream>

#include "peakit/analysis.hpp"
#include "stubs.hpp"
#include "test_util.hpp"

using namespace peakit;
using peakit::testing::TempDir;

namespace {

SequenceMeta meta_of(const std::string& name, int w, int h, int frames, std::optional<int> qp = std::nullopt,
                     std::optional<CodingStructure> cs = std::nullopt, std::optional<std::string> ref = std::nullopt) {
  SequenceMeta m;
  m.name = name;
  m.class_label = "C";
  m.width = w;
  m.height = h;
  m.frame_count = frames;
  m.qp = qp;
  m.coding_structure = cs;
  m.reference = ref;
  return m;
}

SequenceReader flat_sequence(const TempDir& dir, const std::string& name, int w, int h, int frames, std::uint8_t luma = 200) {
  const auto m = peakit::testing::write_sequence(dir.path(), meta_of(name, w, h, frames), [&](int, int, int) { return luma; });
  return SequenceReader(dir / (name + ".yuv"), m);
}

IntensityReport report_with(const std::string& ref, CodingStructure cs, int qp, double rate) {
  IntensityReport r;
  r.sequence = ref + "_qp" + std::to_string(qp);
  r.reference = ref;
  r.qp = qp;
  r.coding_structure = cs;
  r.rates.fill(rate);
  r.overall = rate;
  r.patches = 4;
  return r;
}

}  // namespace

TEST(Pattern, IntensityIsPopcountOverSix) {
  EXPECT_EQ(patch_intensity(PeaPattern::from_string("111000")), 0.5);
  EXPECT_EQ(patch_intensity(PeaPattern::from_string("000111")), 0.5);
  EXPECT_EQ(patch_intensity(PeaPattern::from_string("111000")), patch_intensity(PeaPattern::from_string("000111")));
  EXPECT_EQ(patch_intensity(PeaPattern::from_string("000000")), 0.0);
  EXPECT_EQ(patch_intensity(PeaPattern::from_string("111111")), 1.0);
  EXPECT_DOUBLE_EQ(patch_intensity(PeaPattern::from_string("010000")), 1.0 / 6.0);
}

TEST(Pattern, StringFormUsesTypeOrder) {
  PeaPattern p;
  p[PeaType::Blurring] = true;
  p[PeaType::Floating] = true;
  EXPECT_EQ(p.str(), "100001");
  EXPECT_EQ(PeaPattern::from_string("100001"), p);
  for (const char* bad : {"10000", "1000011", "10a001", ""}) {
    try {
      PeaPattern::from_string(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ParseError);
    }
  }
}

TEST(Bank, MissingOrMisplacedDetector) {
  auto b = peakit::testing::const_bank({true, true, true, true, true, true});
  auto bank = b.bank;
  bank[index_of(PeaType::Ringing)] = nullptr;
  try {
    require_bank(bank);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingClassifier);
    EXPECT_NE(std::string(e.what()).find("ringing"), std::string::npos);
  }
  bank = b.bank;
  std::swap(bank[0], bank[1]);
  EXPECT_THROW(require_bank(bank), Error);
}

TEST(Grid, WindowsAreCentredClampedAndEven) {
  // 32-pixel window in a 72 grid: offset (72 - 32) / 2 = 20
  EXPECT_EQ(window_origin(0, 0, 72, 32, 144, 144), std::make_pair(20, 20));
  EXPECT_EQ(window_origin(1, 1, 72, 32, 144, 144), std::make_pair(92, 92));
  EXPECT_EQ(window_origin(1, 0, 72, 72, 144, 144), std::make_pair(72, 0));
  // 72-pixel window in a 32 grid is clamped into the frame
  EXPECT_EQ(window_origin(0, 0, 32, 72, 96, 96), std::make_pair(0, 0));
  EXPECT_EQ(window_origin(2, 2, 32, 72, 96, 96), std::make_pair(24, 24));
  // odd offsets round down to even
  EXPECT_EQ(window_origin(0, 0, 34, 32, 64, 64), std::make_pair(0, 0));
  EXPECT_EQ(window_origin(1, 0, 34, 32, 68, 68), std::make_pair(34, 0));
  EXPECT_EQ(window_origin(0, 0, 72, 72, 64, 64), std::nullopt);
  EXPECT_EQ(grid_for(200, 150, 72).cells(), 4);
  EXPECT_EQ(grid_for(200, 143, 72).cells(), 2);
  EXPECT_THROW(grid_for(100, 100, 0), Error);
  EXPECT_THROW(grid_for(100, 100, 7), Error);
}

TEST(PatchPattern, UsesEachDetector) {
  auto b = peakit::testing::const_bank({true, false, true, false, true, false});
  FrameBuffer cell(72, 72);
  const std::vector<FrameBuffer> cuboid(10, cell);
  EXPECT_EQ(patch_pattern(b.bank, cell, cuboid).str(), "101010");
  EXPECT_EQ(patch_pattern(b.bank, cell, {}).str(), "101000");  // no cuboid, no temporal flags
}

TEST(SequenceIntensity, ConstantStubsGiveConstantsExactly) {
  TempDir dir;
  const auto seq = flat_sequence(dir, "flat", 216, 144, 20);
  for (const auto& on : {std::array<bool, 6>{true, true, true, false, false, false},
                         std::array<bool, 6>{false, false, false, true, true, true},
                         std::array<bool, 6>{true, true, true, true, true, true},
                         std::array<bool, 6>{false, true, false, false, false, true}}) {
    auto b = peakit::testing::const_bank(on);
    const auto r = sequence_intensity(b.bank, seq);
    EXPECT_EQ(r.cols, 3);
    EXPECT_EQ(r.rows, 2);
    EXPECT_EQ(r.frames_evaluated, 20);
    EXPECT_EQ(r.spans, 2);
    EXPECT_EQ(r.patches, 120u);
    const int n = static_cast<int>(std::count(on.begin(), on.end(), true));
    EXPECT_EQ(r.overall, n / 6.0);
    for (PeaType t : kAllPeaTypes) EXPECT_EQ(r.rates[index_of(t)], on[index_of(t)] ? 1.0 : 0.0);
    EXPECT_TRUE(r.notes.empty());
  }
}

TEST(SequenceIntensity, EqualPopcountPatternsScoreTheSame) {
  TempDir dir;
  const auto seq = flat_sequence(dir, "flat", 144, 144, 10);
  auto a = peakit::testing::const_bank({true, true, true, false, false, false});
  auto b = peakit::testing::const_bank({false, false, false, true, true, true});
  EXPECT_EQ(sequence_intensity(a.bank, seq).overall, 0.5);
  EXPECT_EQ(sequence_intensity(b.bank, seq).overall, 0.5);
}

TEST(SequenceIntensity, RemainderFramesAreSkipped) {
  TempDir dir;
  const auto seq = flat_sequence(dir, "f23", 144, 72, 23);
  auto b = peakit::testing::const_bank({true, true, true, true, true, true});
  const auto r = sequence_intensity(b.bank, seq);
  EXPECT_EQ(r.spans, 2);
  EXPECT_EQ(r.frames_evaluated, 20);
  ASSERT_EQ(r.notes.size(), 1u);
  EXPECT_NE(r.notes[0].find("3 frame"), std::string::npos);
}

TEST(SequenceIntensity, ShortClipHasNoTemporalFlags) {
  TempDir dir;
  const auto seq = flat_sequence(dir, "f6", 144, 72, 6);
  auto b = peakit::testing::const_bank({true, true, true, true, true, true});
  const auto r = sequence_intensity(b.bank, seq);
  EXPECT_FALSE(r.temporal_available);
  EXPECT_EQ(r.frames_evaluated, 6);
  EXPECT_EQ(r.rates[index_of(PeaType::Flickering)], 0.0);
  EXPECT_EQ(r.rates[index_of(PeaType::Floating)], 0.0);
  EXPECT_EQ(r.spatial_mean(), 1.0);
  EXPECT_EQ(r.overall, 4.0 / 6.0);
  ASSERT_FALSE(r.notes.empty());
  EXPECT_EQ(r.notes[0].rfind("SequenceTooShort", 0), 0u);
}

TEST(SequenceIntensity, WindowsLargerThanFrameCountAsNegative) {
  TempDir dir;
  const auto seq = flat_sequence(dir, "small", 48, 48, 10);
  auto b = peakit::testing::const_bank({true, true, true, true, true, true});
  AnalysisOptions opt;
  opt.grid = 48;
  const auto r = sequence_intensity(b.bank, seq, opt);
  EXPECT_EQ(r.patches, 10u);
  EXPECT_EQ(r.rates[index_of(PeaType::Ringing)], 1.0);
  EXPECT_EQ(r.rates[index_of(PeaType::Blocking)], 0.0);
  EXPECT_EQ(r.unevaluable[index_of(PeaType::Blocking)], 10);
  EXPECT_EQ(r.unevaluable[index_of(PeaType::Floating)], 10);
  EXPECT_EQ(r.overall, 0.5);  // ringing, color bleeding, flickering
  EXPECT_EQ(r.notes.size(), 3u);
}

TEST(SequenceIntensity, TemporalFlagsHoldAcrossTheSpan) {
  TempDir dir;
  // frame 0 of each span decides the temporal stub; later frames are bright
  const auto m = peakit::testing::write_sequence(dir.path(), meta_of("pulse", 144, 72, 20),
                                                 [](int f, int x, int) -> std::uint8_t { return f == 0 && x < 72 ? 0 : 255; });
  SequenceReader seq(dir / "pulse.yuv", m);
  auto b = peakit::testing::dark_bank();
  std::vector<FramePatterns> seen;
  const auto r = sequence_intensity(b.bank, seq, {}, [&](const FramePatterns& fp) { seen.push_back(fp); });
  ASSERT_EQ(seen.size(), 20u);
  for (int k = 0; k < 10; ++k) {
    EXPECT_TRUE(seen[k].cells[0][PeaType::Flickering]) << k;
    EXPECT_TRUE(seen[k].cells[0][PeaType::Floating]) << k;
    EXPECT_FALSE(seen[k].cells[1][PeaType::Flickering]) << k;
    EXPECT_EQ(seen[k].cells[0][PeaType::Blurring], k == 0) << k;
  }
  for (int k = 10; k < 20; ++k) EXPECT_EQ(seen[k].cells[0].popcount(), 0) << k;
  EXPECT_EQ(r.rates[index_of(PeaType::Flickering)], 10.0 / 40.0);
  EXPECT_EQ(r.rates[index_of(PeaType::Blurring)], 1.0 / 40.0);
}

TEST(Maps, OnePixelPerCell) {
  FramePatterns fp{0, CellGrid{72, 2, 1}, {PeaPattern::from_string("111000"), PeaPattern::from_string("000000")}};
  const auto c = combined_map(fp);
  EXPECT_EQ(c.width, 2);
  EXPECT_EQ(c.height, 1);
  EXPECT_EQ(c.pixels, (std::vector<std::uint8_t>{128, 0}));
  EXPECT_EQ(pea_map(fp, PeaType::Blocking).pixels, (std::vector<std::uint8_t>{255, 0}));
  EXPECT_EQ(pea_map(fp, PeaType::Floating).pixels, (std::vector<std::uint8_t>{0, 0}));
  fp.cells[1] = PeaPattern::from_string("111111");
  EXPECT_EQ(combined_map(fp).pixels[1], 255);
}

TEST(Maps, SingleDetectorMap) {
  FrameBuffer f(144, 72);
  for (int y = 0; y < 72; ++y)
    for (int x = 0; x < 144; ++x) f.y[y * 144 + x] = x < 72 ? 10 : 250;
  peakit::testing::DarkCentreDetector d(PeaType::Ringing);
  EXPECT_EQ(pea_map(d, std::span<const FrameBuffer>(&f, 1)).pixels, (std::vector<std::uint8_t>{255, 0}));
}

TEST(QpReport, MonotoneStubGivesOne) {
  TempDir dir;
  std::vector<IntensityReport> reports;
  auto b = peakit::testing::dark_bank();
  const std::vector<int> qps{37, 22, 32, 27};  // order of input does not matter
  for (int qp : qps) {
    const int dark_cells = (qp - 22) / 5;  // 0..3 of the four cells
    const auto name = "src_qp" + std::to_string(qp);
    const auto m = peakit::testing::write_sequence(
        dir.path(), meta_of(name, 144, 144, 10, qp, CodingStructure::RandomAccess, "src"),
        [&](int, int x, int y) -> std::uint8_t { return (y / 72) * 2 + x / 72 < dark_cells ? 0 : 255; });
    reports.push_back(sequence_intensity(b.bank, SequenceReader(dir / (name + ".yuv"), m)));
  }
  const auto table = qp_report(reports);
  ASSERT_EQ(table.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(table.rows[i].qp, 22 + 5 * static_cast<int>(i));
    EXPECT_EQ(table.rows[i].overall, i / 4.0);
  }
  EXPECT_EQ(table.pairs_checked, 6u);
  ASSERT_TRUE(table.monotonicity);
  EXPECT_EQ(*table.monotonicity, 1.0);
}

TEST(QpReport, DecreasingSeriesAndGrouping) {
  std::vector<IntensityReport> r{report_with("a", CodingStructure::LowDelay, 22, 0.4),
                                 report_with("a", CodingStructure::LowDelay, 37, 0.2),
                                 report_with("b", CodingStructure::LowDelay, 22, 0.1),
                                 report_with("b", CodingStructure::LowDelay, 37, 0.3)};
  auto t = qp_report(r);
  EXPECT_EQ(t.pairs_checked, 12u);
  EXPECT_EQ(*t.monotonicity, 0.5);
  // same source coded with another structure forms its own series
  r.push_back(report_with("a", CodingStructure::AllIntra, 22, 0.9));
  t = qp_report(r);
  EXPECT_EQ(t.rows.size(), 5u);
  EXPECT_EQ(t.pairs_checked, 12u);
}

TEST(QpReport, AveragesRepeatedEntriesAndHandlesNoPairs) {
  std::vector<IntensityReport> r{report_with("a", CodingStructure::LowDelay, 22, 0.25),
                                 report_with("a", CodingStructure::LowDelay, 22, 0.75)};
  const auto t = qp_report(r);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].reports, 2u);
  EXPECT_EQ(t.rows[0].overall, 0.5);
  EXPECT_FALSE(t.monotonicity);
  std::ostringstream os;
  write_qp_csv(os, t);
  EXPECT_EQ(os.str().rfind("# monotonicity=n/a\n", 0), 0u);
}

TEST(ReportOutput, CsvLayout) {
  std::vector<IntensityReport> r{report_with("a", CodingStructure::LowDelay, 22, 0.25)};
  std::ostringstream os;
  write_report_csv(os, r, {"peakit test"});
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# peakit test");
  std::getline(in, line);
  EXPECT_EQ(line, kReportCsvHeader);
  std::getline(in, line);
  EXPECT_EQ(line, "a_qp22,22,low_delay,blurring,0.25,0.25,0.25,0.25,4");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);

  const auto j = to_json(r[0]);
  EXPECT_EQ(j.at("qp"), 22);
  EXPECT_EQ(j.at("rates").at("floating"), 0.25);
  EXPECT_EQ(j.at("coding_structure"), "low_delay");
}
