#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <random>

#include "lrinfer/io.hpp"
#include "oracles.hpp"

using namespace lrinfer;

namespace {

ErrorCode code_of(const std::function<void()>& fn, std::ptrdiff_t* index = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (index) *index = e.index();
    return e.code();
  }
  ADD_FAILURE() << "expected an lrinfer::Error";
  return ErrorCode::InvalidArgument;
}

std::filesystem::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "lrinfer_io_tests" / info->name();
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(ParsePanel, MissingCellIsUnobserved) {
  const LoadedPanel lp = parse_panel("unit,time,value\nu1,t1,1.5\nu1,t2,2\nu2,t1,-3\n");
  const auto& p = std::get<ObservedPanel>(lp.panel);
  EXPECT_EQ(p.n_units(), 2);
  EXPECT_EQ(p.n_periods(), 2);
  EXPECT_EQ((p.mask().array() == 0.0).count(), 1);
  EXPECT_EQ(p.mask()(1, 1), 0.0);
  EXPECT_EQ(p.values()(0, 0), 1.5);
  EXPECT_EQ(p.values()(1, 0), -3.0);
  EXPECT_EQ(lp.unit_ids, (std::vector<std::string>{"u1", "u2"}));
}

TEST(ParsePanel, DuplicateCell) {
  std::ptrdiff_t line = 0;
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value\nu1,t1,1\nu2,t1,2\nu1,t1,3\n"); }, &line),
            ErrorCode::DuplicateCell);
  EXPECT_EQ(line, 4);
}

TEST(ParsePanel, UnitsByFirstAppearanceTimesNaturalOrder) {
  const LoadedPanel lp = parse_panel("unit,time,value\nzeta,10,1\nalpha,9,2\nzeta,9,3\nalpha,100,4\n");
  EXPECT_EQ(lp.unit_ids, (std::vector<std::string>{"zeta", "alpha"}));
  EXPECT_EQ(lp.time_ids, (std::vector<std::string>{"9", "10", "100"}));
  const LoadedPanel q = parse_panel("unit,time,value\na,t10,1\na,t2,2\na,t1,3\n");
  EXPECT_EQ(q.time_ids, (std::vector<std::string>{"t1", "t2", "t10"}));
  const LoadedPanel r = parse_panel("unit,time,value\na,2.5,1\na,-1,2\na,1e1,3\n");
  EXPECT_EQ(r.time_ids, (std::vector<std::string>{"-1", "2.5", "1e1"}));
}

TEST(ParsePanel, HeaderFlexibility) {
  const LoadedPanel lp = parse_panel("\xEF\xBB\xBFValue;Time;Unit\r\n1;a;x\r\n2;b;x\r\n", {';'});
  const auto& p = std::get<ObservedPanel>(lp.panel);
  EXPECT_EQ(p.values()(0, 1), 2.0);
  EXPECT_EQ(lp.time_ids, (std::vector<std::string>{"a", "b"}));
}

TEST(ParsePanel, AbsentValuesAreUnobserved) {
  const LoadedPanel lp = parse_panel("unit,time,value\na,1,NA\na,2,4\nb,1,5\nb,2,\n");
  const auto& p = std::get<ObservedPanel>(lp.panel);
  EXPECT_EQ(p.mask()(0, 0), 0.0);
  EXPECT_EQ(p.mask()(1, 1), 0.0);
  EXPECT_EQ(p.n_observed(), 2.0);
}

TEST(ParsePanel, ParseErrorsCarryLineNumbers) {
  std::ptrdiff_t line = 0;
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value\na,1,2\na,2,abc\n"); }, &line), ErrorCode::ParseError);
  EXPECT_EQ(line, 3);
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value\na,1\n"); }, &line), ErrorCode::ParseError);
  EXPECT_EQ(line, 2);
  EXPECT_EQ(code_of([] { parse_panel("unit,period,value\na,1,2\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_panel(""); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value\n,1,2\n"); }), ErrorCode::ParseError);
}

TEST(ParsePanel, EmptyRowAndColumn) {
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value\na,1,1\nb,1,NA\n"); }), ErrorCode::EmptyRow);
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value\na,1,1\na,2,NA\n"); }), ErrorCode::EmptyColumn);
}

TEST(ParsePanel, TreatmentSchema) {
  const LoadedPanel lp = parse_panel("unit,time,value,treated\na,1,1,1\na,2,2,0\nb,1,3,0\nb,2,4,1\n");
  ASSERT_TRUE(lp.has_treatment());
  const auto& tp = std::get<TreatmentPanel>(lp.panel);
  EXPECT_EQ(tp.treat()(0, 0), 1.0);
  EXPECT_EQ(tp.treat()(1, 1), 1.0);
  EXPECT_EQ(tp.available(), Matrix::Ones(2, 2));
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value,treated\na,1,1,1\na,2,2,\n"); }),
            ErrorCode::MixedTreatmentSchema);
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value,treated\na,1,1,1\na,2,,1\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_panel("unit,time,value,treated\na,1,1,2\n"); }), ErrorCode::ParseError);
}

TEST(ParsePanel, EmpiricalShapedTreatmentFile) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 1.0);
  std::string text = "unit,time,value,treated\n";
  for (int s = 0; s < 51; ++s) {
    for (int year = 1953; year <= 2018; ++year) {
      text += "state" + std::to_string(s) + "," + std::to_string(year) + "," + format_double(z(rng)) + "," +
              ((s + year) % 3 == 0 ? "1" : "0") + "\n";
    }
  }
  const LoadedPanel lp = parse_panel(text);
  ASSERT_TRUE(lp.has_treatment());
  const auto& tp = std::get<TreatmentPanel>(lp.panel);
  EXPECT_EQ(tp.n_units(), 51);
  EXPECT_EQ(tp.n_periods(), 66);
  EXPECT_EQ(lp.time_ids.front(), "1953");
  EXPECT_EQ(lp.time_ids.back(), "2018");
}

TEST(SavePanel, RoundTripPreservesMaskAndObservedValues) {
  std::mt19937_64 rng(2);
  const Matrix w = oracle::random_mask(9, 7, 0.6, rng);
  Matrix y = oracle::random_normal(9, 7, rng);
  y(0, 0) = 1.0 / 3.0;
  y(1, 1) = -1e-300;
  y(2, 2) = 6.02214076e23;
  LoadedPanel lp{{}, {}, ObservedPanel(y, w)};
  for (int i = 0; i < 9; ++i) lp.unit_ids.push_back("u" + std::to_string(i));
  for (int t = 0; t < 7; ++t) lp.time_ids.push_back(std::to_string(2000 + t));
  const auto dir = scratch_dir();
  save_panel(dir / "panel.csv", lp);
  const LoadedPanel back = load_panel(dir / "panel.csv");
  const auto& a = std::get<ObservedPanel>(lp.panel);
  const auto& b = std::get<ObservedPanel>(back.panel);
  EXPECT_EQ(back.unit_ids, lp.unit_ids);
  EXPECT_EQ(back.time_ids, lp.time_ids);
  EXPECT_EQ(b.mask(), a.mask());
  EXPECT_EQ(b.values(), a.values());
  EXPECT_FALSE(std::filesystem::exists(dir / "panel.csv.tmp"));
}

TEST(SavePanel, TreatmentRoundTrip) {
  const LoadedPanel lp = parse_panel("unit,time,value,treated\na,1,0.1,1\na,2,0.2,0\nb,2,0.3,1\nb,1,NA,\n");
  const LoadedPanel back = parse_panel(format_panel(lp));
  const auto& a = std::get<TreatmentPanel>(lp.panel);
  const auto& b = std::get<TreatmentPanel>(back.panel);
  EXPECT_EQ(a.outcomes(), b.outcomes());
  EXPECT_EQ(a.treat(), b.treat());
  EXPECT_EQ(a.available(), b.available());
}

TEST(FormatDouble, SeventeenDigitsRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 1000; ++k) {
    const double x = u(rng) * std::pow(10.0, k % 40 - 20);
    EXPECT_EQ(std::stod(format_double(x)), x);
  }
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(FormatCompleted, FlagsImputedCells) {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  Matrix w(2, 2);
  w << 1, 0, 1, 1;
  const std::string out = format_completed(m, w, {"a", "b"}, {"1", "2"});
  EXPECT_EQ(out, "unit,time,value,imputed\na,1,1,0\na,2,2,1\nb,1,3,0\nb,2,4,0\n");
}

TEST(ParseGroup, Syntax) {
  const GroupSpec g = parse_group("units=1..3,7 periods=2", 10, 5);
  EXPECT_EQ(g.units(), (std::vector<Index>{0, 1, 2, 6}));
  EXPECT_EQ(g.periods(), (std::vector<Index>{1}));
  const GroupSpec all = parse_group("@all", 4, 3);
  EXPECT_EQ(all.size(), 12);
  const GroupSpec col = parse_group("periods=3", 4, 3);
  EXPECT_EQ(col.units().size(), 4u);
  const GroupSpec semi = parse_group("units=2;periods=1..3", 4, 3);
  EXPECT_EQ(semi.size(), 3);
}

TEST(ParseGroup, Errors) {
  EXPECT_EQ(code_of([] { parse_group("units=0", 3, 3); }), ErrorCode::OutOfRange);
  EXPECT_EQ(code_of([] { parse_group("units=4", 3, 3); }), ErrorCode::OutOfRange);
  EXPECT_EQ(code_of([] { parse_group("units=3..1", 3, 3); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_group("rows=1", 3, 3); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_group("units=1 units=2", 3, 3); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_group("units=x", 3, 3); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_group("units=1,1", 3, 3); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_group("", 3, 3); }), ErrorCode::InvalidArgument);
}

TEST(Files, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { load_panel("/nonexistent/dir/panel.csv"); }), ErrorCode::Io);
}

TEST(Files, Fnv1aReference) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
