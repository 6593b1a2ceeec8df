// Writes the bundled synthetic fixtures: search-volume files for the mock
// endpoint, the assembled panel, macro series and the vocabulary.
//
// Latent structure (monthly):
//   g      persistent general factor, AR(1) with phi 0.95
//   food   food demand, AR(1) with phi 0.6
//   c_k    one AR(1) factor per remaining category
// Term log-changes load on g and their category factor with idiosyncratic
// noise; Food terms follow demand = food + 0.5 g closely. Consumption growth
// is driven by employment and demand, commerce-and-services by employment
// and consumer credit.

#include "itac/ingest.hpp"
#include "itac/mock_trends.hpp"
#include "itac/random.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace itac;

namespace {

constexpr YearMonth kFirst{2007, 1};
constexpr YearMonth kLast{2024, 12};
constexpr YearMonth kPanelLast{2024, 10};
constexpr YearMonth kMacroFirst{2008, 1};

std::vector<double> ar1(Rng& rng, int n, double phi) {
  std::vector<double> x(static_cast<std::size_t>(n));
  const double innov = std::sqrt(1.0 - phi * phi);
  double v = rng.normal();
  for (auto& e : x) {
    e = v;
    v = phi * v + innov * rng.normal();
  }
  return x;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic fixture set"};
  std::string out = "fixtures";
  std::uint64_t seed = 20240101;
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "root seed");
  CLI11_PARSE(app, argc, argv);

  const MonthRange all{kFirst, kLast};
  const int n = all.size();
  Rng rng(seed);
  const auto g = ar1(rng, n, 0.95);
  const auto food = ar1(rng, n, 0.6);
  std::map<std::string, std::vector<double>> cat_factor;
  for (const char* c : {"Transport", "Tourism", "Recreation", "Personal care"}) cat_factor[c] = ar1(rng, n, 0.5);
  std::vector<double> demand(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) demand[t] = food[t] + 0.5 * g[t];

  const Vocabulary vocab = builtin_vocabulary();
  fs::create_directories(fs::path(out) / "mock");
  fs::create_directories(fs::path(out) / "macro");
  write_file((fs::path(out) / "vocabulary.csv").string(), serialize_vocabulary(vocab));

  std::vector<RawSeries> series;
  for (const auto& e : vocab.entries) {
    Rng trng(derive_seed(seed, "term/" + e.term));
    double a = 0.006, b = 0.012, s = 0.02;
    const std::vector<double>* driver = nullptr;
    if (e.category == "Food") {
      a = 0.0;
      b = e.term == "restaurants" ? 0.03 : 0.025;
      s = e.term == "restaurants" ? 0.004 : 0.006;
      driver = &demand;
    } else {
      driver = &cat_factor.at(e.category);
    }
    std::vector<double> level(static_cast<std::size_t>(n));
    double log_level = 0.0;
    for (int t = 0; t < n; ++t) {
      log_level += a * g[t] + b * (*driver)[t] + s * trng.normal();
      level[t] = log_level;
    }
    const double peak = *std::max_element(level.begin(), level.end());
    RawSeries rs{e.term, e.category, {}};
    for (int t = 0; t < n; ++t) {
      // a few terms have sporadic gaps, as thin Google series do
      if (e.term == "Westin" && t % 37 == 5) continue;
      if (e.term == "Montalvo" && t % 53 == 11) continue;
      rs.observations.push_back({kFirst.plus(t), round2(100.0 * std::exp(level[t] - peak))});
    }
    write_file((fs::path(out) / "mock" / (term_slug(e.term) + ".csv")).string(), serialize_raw_series(rs));
    if (e.term == "restaurants") write_file((fs::path(out) / "restaurants.csv").string(), serialize_raw_series(rs));
    series.push_back(std::move(rs));
  }
  write_file((fs::path(out) / "panel.csv").string(), serialize_panel(assemble_panel(series, {kFirst, kPanelLast})));

  // Macro growth rates from 2008-01, percent per month.
  Rng mrng(derive_seed(seed, "macro"));
  const auto employment = ar1(mrng, n, 0.5);
  const auto consumer_credit = ar1(mrng, n, 0.5);
  const auto mortgage_credit = ar1(mrng, n, 0.7);
  const auto cpi = ar1(mrng, n, 0.8);
  std::map<std::string, std::vector<double>> macro;
  for (int t = 0; t < n; ++t) {
    macro["employment"].push_back(0.2 + 0.5 * employment[t]);
    macro["consumer_credit"].push_back(0.8 + 0.6 * consumer_credit[t]);
    macro["mortgage_credit"].push_back(0.6 + 0.4 * mortgage_credit[t]);
    macro["cpi"].push_back(0.25 + 0.2 * cpi[t]);
    macro["commerce_services"].push_back(0.3 + 0.6 * employment[t] + 0.4 * consumer_credit[t] + 0.5 * mrng.normal());
    macro["consumption"].push_back(0.3 + 0.5 * employment[t] + demand[t] + 0.5 * mrng.normal());
  }
  const int skip = MonthRange{kFirst, kMacroFirst}.size() - 1;
  for (const auto& [name, v] : macro) {
    TimeSeries ts{kMacroFirst, {}, Frequency::monthly};
    for (int t = skip; t < MonthRange{kFirst, kPanelLast}.size(); ++t)
      ts.values.push_back(std::round(v[static_cast<std::size_t>(t)] * 1e6) / 1e6);
    write_file((fs::path(out) / "macro" / (name + ".csv")).string(), serialize_time_series(ts));
  }
  std::cout << "fixtures written to " << out << "\n";
  return 0;
}
