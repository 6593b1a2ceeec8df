#include <gtest/gtest.h>

#include "itac/fetch.hpp"
#include "itac/mock_trends.hpp"

#include <filesystem>

using namespace itac;
namespace fs = std::filesystem;

namespace {

const fs::path kMockDir = fs::path(ITAC_FIXTURE_DIR) / "mock";

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("itac_fetch_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

EndpointConfig endpoint(const MockTrendsServer& s) {
  EndpointConfig c;
  c.base_url = s.url();
  c.backoff_ms = 1;
  c.retries = 2;
  c.timeout_seconds = 2;
  return c;
}

}  // namespace

TEST(FetchSeries, MockServerSpan) {
  MockTrendsServer server(kMockDir);
  server.start();
  const auto s = fetch_series("restaurants", {{2007, 1}, {2024, 10}}, endpoint(server), "Food");
  EXPECT_EQ(s.size(), 214u);
  EXPECT_EQ(s.span(), (MonthRange{{2007, 1}, {2024, 10}}));
  EXPECT_EQ(s.category, "Food");
  EXPECT_LE(s.max(), 100.0);
}

TEST(FetchSeries, NonAsciiTerm) {
  MockTrendsServer server(kMockDir);
  server.start();
  const auto s = fetch_series("Jorge Chávez", {{2010, 1}, {2010, 12}}, endpoint(server));
  EXPECT_EQ(s.size(), 12u);
}

TEST(FetchSeries, ThrottledIsNotRetried) {
  MockTrendsServer server(kMockDir, {"restaurants"});
  server.start();
  EXPECT_THROW(fetch_series("restaurants", {{2007, 1}, {2007, 12}}, endpoint(server)), ThrottledError);
  EXPECT_EQ(server.requests(), 1);
}

TEST(FetchSeries, EmptySpan) {
  EXPECT_THROW(fetch_series("restaurants", {{2008, 1}, {2007, 12}}, EndpointConfig{}), InvalidSpanError);
}

TEST(FetchSeries, UnknownTermIsClientError) {
  MockTrendsServer server(kMockDir);
  server.start();
  EXPECT_THROW(fetch_series("no such term", {{2007, 1}, {2007, 12}}, endpoint(server)), FetchError);
  EXPECT_EQ(server.requests(), 1);
}

TEST(FetchSeries, UnreachableEndpointRetriesThenFails) {
  int port = 0;
  {
    MockTrendsServer probe(kMockDir);
    port = probe.start();
  }
  EndpointConfig c;
  c.base_url = "http://127.0.0.1:" + std::to_string(port);
  c.retries = 2;
  c.backoff_ms = 1;
  c.timeout_seconds = 1;
  try {
    fetch_series("restaurants", {{2007, 1}, {2007, 12}}, c);
    FAIL();
  } catch (const FetchError& e) {
    EXPECT_NE(std::string(e.what()).find("3 attempts"), std::string::npos) << e.what();
  }
}

TEST(FetchSeries, MalformedPayload) {
  const auto dir = scratch("bad");
  fs::create_directories(dir);
  write_file((dir / "broken.csv").string(), "date,value\n2007-01,abc\n");
  MockTrendsServer server(dir);
  server.start();
  EXPECT_THROW(fetch_series("broken", {{2007, 1}, {2007, 12}}, endpoint(server)), ParseError);
  fs::remove_all(dir);
}

TEST(FetchSeries, CacheHitIsByteIdenticalAndOffline) {
  const auto cache = scratch("cache");
  const MonthRange span{{2015, 1}, {2016, 6}};
  RawSeries first;
  std::string url;
  {
    MockTrendsServer server(kMockDir);
    server.start();
    auto c = endpoint(server);
    c.cache_dir = cache;
    first = fetch_series("hotels", span, c, "Tourism");
    url = c.base_url;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cache)) files.push_back(e.path());
  ASSERT_EQ(files.size(), 1u);
  const std::string stored = read_file(files.front().string());

  EndpointConfig offline;
  offline.base_url = url;  // server is gone
  offline.cache_dir = cache;
  offline.retries = 0;
  const auto second = fetch_series("hotels", span, offline, "Tourism");
  EXPECT_EQ(serialize_raw_series(second), serialize_raw_series(first));
  EXPECT_EQ(read_file(files.front().string()), stored);
  EXPECT_EQ(serialize_raw_series(first), stored);

  // a different geo is a different key
  offline.geo = "CL";
  EXPECT_THROW(fetch_series("hotels", span, offline), FetchError);
  fs::remove_all(cache);
}

TEST(TermSlug, Mapping) {
  EXPECT_EQ(term_slug("Pizza Hut"), "pizza_hut");
  EXPECT_EQ(term_slug("Despegar.com"), "despegar_com");
  EXPECT_EQ(term_slug("Jorge Chávez"), "jorge_ch__vez");
}
