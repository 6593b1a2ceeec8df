#include <gtest/gtest.h>

#include "itac/ingest.hpp"
#include "itac/random.hpp"

using namespace itac;

TEST(ParseRawSeries, MinimalFile) {
  const auto s = parse_raw_series("date,value\n2007-01,50\n2007-02,100");
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.max(), 100.0);
  EXPECT_EQ(s.span(), (MonthRange{{2007, 1}, {2007, 2}}));
}

TEST(ParseRawSeries, Errors) {
  try {
    parse_raw_series("date,value\n2007-01,101");
    FAIL();
  } catch (const RangeError& e) {
    EXPECT_EQ(e.row(), 1u);
  }
  try {
    parse_raw_series("date,value\n2007-01,1\n2007/02,3\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2u);
  }
  EXPECT_THROW(parse_raw_series("date,value\n2007-13,1\n"), ParseError);
  try {
    parse_raw_series("date,value\n2007-03,1\n2007-03,2\n");
    FAIL();
  } catch (const DuplicateError& e) {
    EXPECT_EQ(e.month(), "2007-03");
  }
  EXPECT_THROW(parse_raw_series("month,value\n2007-01,1\n"), ParseError);
  EXPECT_THROW(parse_raw_series("date,value\n2007-01,-0.5\n"), RangeError);
}

TEST(ParseRawSeries, SortsObservations) {
  const auto s = parse_raw_series("date,value\n2007-03,3\n2007-01,1\n2007-02,2\n");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.observations[0].month, (YearMonth{2007, 1}));
  EXPECT_EQ(s.observations[2].value, 3.0);
}

TEST(ParseRawSeries, BundledFixture) {
  const auto s = parse_raw_series(read_file(std::string(ITAC_FIXTURE_DIR) + "/restaurants.csv"), "restaurants", "Food");
  EXPECT_EQ(s.size(), 216u);
  EXPECT_EQ(s.span(), (MonthRange{{2007, 1}, {2024, 12}}));
}

TEST(ParseRawSeries, SerializeRoundTrip) {
  Rng rng(17);
  for (int rep = 0; rep < 25; ++rep) {
    RawSeries s{"t", "Food", {}};
    YearMonth m{2005, 1 + static_cast<int>(rng.below(12))};
    for (int i = 0; i < 30; ++i) {
      m = m.plus(1 + static_cast<int>(rng.below(3)));
      s.observations.push_back({m, std::round(rng.uniform(0, 100) * 1000.0) / 1000.0});
    }
    const auto text = serialize_raw_series(s);
    const auto back = parse_raw_series(text, "t", "Food");
    ASSERT_EQ(back.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_EQ(back.observations[i].month, s.observations[i].month);
      EXPECT_EQ(back.observations[i].value, s.observations[i].value);
    }
    EXPECT_EQ(serialize_raw_series(back), text);
  }
}

TEST(AssemblePanel, AlignsAndMasks) {
  const auto a = parse_raw_series("date,value\n2020-01,1\n2020-02,2\n2020-03,3\n2020-04,4\n", "a");
  const auto b = parse_raw_series("date,value\n2020-01,5\n2020-02,6\n2020-04,8\n", "b");
  const MonthRange span{{2020, 1}, {2020, 4}};
  const auto p = assemble_panel({a, b}, span);
  EXPECT_EQ(p.rows(), 4);
  EXPECT_EQ(p.terms, (std::vector<std::string>{"a", "b"}));
  EXPECT_FALSE(p.missing.col(0).any());
  EXPECT_TRUE(p.missing(2, 1));
  EXPECT_EQ(p.missing.col(1).count(), 1);

  const auto same = assemble_panel({a, a}, span);
  EXPECT_FALSE(same.missing.any());

  EXPECT_THROW(assemble_panel({}, span), EmptyPanelError);
}

TEST(AssemblePanel, PreservesSumsWithinSpan) {
  Rng rng(23);
  std::vector<RawSeries> series;
  for (int j = 0; j < 5; ++j) {
    RawSeries s{"t" + std::to_string(j), "Food", {}};
    for (YearMonth m{2006, 6}; m <= YearMonth{2012, 3}; m = m.plus(1))
      if (rng.uniform() > 0.1) s.observations.push_back({m, rng.uniform(0, 100)});
    series.push_back(std::move(s));
  }
  const MonthRange span{{2007, 1}, {2011, 12}};
  const auto p = assemble_panel(series, span);
  double input = 0.0, stored = 0.0;
  for (const auto& s : series)
    for (const auto& o : s.observations)
      if (span.contains(o.month)) input += o.value;
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      if (!p.missing(i, j)) stored += p.matrix(i, j);
  EXPECT_DOUBLE_EQ(stored, input);
}

TEST(AssemblePanel, ConsumptionVocabularyShape) {
  const auto vocab = builtin_vocabulary();
  const MonthRange span{{2007, 1}, {2024, 10}};
  EXPECT_EQ(span.size(), 214);
  std::vector<RawSeries> series;
  for (const auto& t : vocab.terms(Variant::itacons)) {
    RawSeries s{t, vocab.find(t)->category, {}};
    for (YearMonth m = span.first; m <= span.last; m = m.plus(1)) s.observations.push_back({m, 50.0});
    series.push_back(s);
  }
  const auto p = assemble_panel(series, span);
  EXPECT_EQ(p.rows(), 214);
  EXPECT_EQ(p.cols(), 26);
}

TEST(Vocabulary, BuiltinCounts) {
  const auto v = builtin_vocabulary();
  EXPECT_EQ(v.entries.size(), 32u);
  EXPECT_EQ(v.terms(Variant::itacons).size(), 26u);
  EXPECT_EQ(v.terms(Variant::itacome).size(), 23u);
  for (const auto& e : v.entries) EXPECT_TRUE(is_known_category(e.category)) << e.term;
}

TEST(Vocabulary, ShippedFileMatchesBuiltin) {
  const auto shipped = parse_vocabulary(read_file(std::string(ITAC_FIXTURE_DIR) + "/vocabulary.csv"));
  EXPECT_EQ(serialize_vocabulary(shipped), serialize_vocabulary(builtin_vocabulary()));
  EXPECT_EQ(shipped.hash(Variant::itacons), builtin_vocabulary().hash(Variant::itacons));
}

TEST(Vocabulary, RejectsUnknownCategory) {
  EXPECT_THROW(parse_vocabulary("term,category,itacons,itacome\nfoo,Gardening,1,0\n"), ParseError);
  EXPECT_THROW(parse_vocabulary("term,category,itacons,itacome\nfoo,Food,yes,0\n"), ParseError);
}

TEST(PanelCsv, RoundTripWithMissingCells) {
  const auto a = parse_raw_series("date,value\n2020-01,1.5\n2020-02,2\n2020-03,3\n", "restaurants");
  const auto b = parse_raw_series("date,value\n2020-01,5\n2020-03,7.25\n", "Pizza Hut");
  const auto p = assemble_panel({a, b}, {{2020, 1}, {2020, 3}});
  const auto text = serialize_panel(p);
  EXPECT_EQ(text, "date,restaurants,Pizza Hut\n2020-01,1.5,5\n2020-02,2,\n2020-03,3,7.25\n");
  const auto vocab = builtin_vocabulary();
  const auto back = parse_panel(text, &vocab);
  EXPECT_EQ(back.categories, (std::vector<std::string>{"Food", "Food"}));
  EXPECT_TRUE(back.missing(1, 1));
  EXPECT_EQ(serialize_panel(back), text);
}

TEST(PanelCsv, FilterByVariantAndCategory) {
  const auto vocab = builtin_vocabulary();
  std::vector<RawSeries> series;
  for (const auto& e : vocab.entries) series.push_back({e.term, e.category, {{{2020, 1}, 10.0}}});
  const auto p = assemble_panel(series, {{2020, 1}, {2020, 1}});
  EXPECT_EQ(p.filter(vocab, Variant::itacons).cols(), 26);
  EXPECT_EQ(p.filter(vocab, Variant::itacome).cols(), 23);
  EXPECT_EQ(p.filter_category("Tourism").cols(), 11);
}

TEST(YearMonthParse, Formats) {
  EXPECT_EQ(YearMonth::parse("2014m08"), (YearMonth{2014, 8}));
  EXPECT_EQ(YearMonth::parse("2008m1"), (YearMonth{2008, 1}));
  EXPECT_EQ(YearMonth::parse("2022-05"), (YearMonth{2022, 5}));
  EXPECT_THROW(YearMonth::parse("2022-5"), Error);
  EXPECT_EQ((YearMonth{2007, 12}).plus(1), (YearMonth{2008, 1}));
  EXPECT_EQ((YearMonth{2008, 1}).plus(-1), (YearMonth{2007, 12}));
}
