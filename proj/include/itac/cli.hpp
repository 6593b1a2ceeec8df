#pragma once

#include "itac/config.hpp"
#include "itac/fetch.hpp"
#include "itac/pipeline.hpp"
#include "itac/serialize.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace itac {

/// Exit codes: 0 success, 1 data error, 2 usage or configuration error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  CLI::App app{"Search-trend consumption indicators"};
  app.name("itac");
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  std::string method_flag, variant_flag, geo_flag;
  std::string out_dir = ".";

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "pipeline config file")->required();
    sub->add_option("--seed", seed_flag, "root seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory");
  };
  auto with_method = [&](CLI::App* sub) {
    sub->add_option("--method", method_flag, "pca, dfm, ann or rnn");
    sub->add_option("--variant", variant_flag, "itacons or itacome");
  };

  auto* fetch = app.add_subcommand("fetch", "download search volumes into the cache and write panel.csv");
  common(fetch);
  fetch->add_option("--variant", variant_flag, "restrict to one vocabulary variant");
  fetch->add_option("--geo", geo_flag, "region code");
  auto* build = app.add_subcommand("build", "build an indicator and write itac_<method>.csv");
  common(build);
  with_method(build);
  auto* search = app.add_subcommand("search", "grid-search hyperparameters and write a leaderboard");
  common(search);
  with_method(search);
  auto* evaluate = app.add_subcommand("evaluate", "two-stage evaluation, writes evaluation.csv and evaluation.json");
  common(evaluate);
  with_method(evaluate);
  auto* report = app.add_subcommand("report", "correlation and fold summaries");
  common(report);
  with_method(report);
  auto* plot = app.add_subcommand("plot", "indicator-vs-target SVG chart");
  common(plot);
  with_method(plot);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "itac: " << e.what() << "\n";
    return 2;
  }

  try {
    PipelineConfig cfg = load_config_file(config_path);
    const std::uint64_t seed = seed_flag.value_or(cfg.seed);
    if (!method_flag.empty()) cfg.evaluate.method = detail::parse_method(method_flag);
    const std::string method = cfg.evaluate.method;
    const Variant variant = variant_flag.empty() ? cfg.variant : detail::parse_variant_config(variant_flag);
    if (!variant_flag.empty()) cfg.evaluate.variant = variant;
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    auto emit = [&](const std::string& name, const std::string& content) {
      write_file((dir / name).string(), content);
      out << "wrote " << (dir / name).string() << "\n";
    };

    if (fetch->parsed()) {
      EndpointConfig ep = cfg.fetch;
      if (!geo_flag.empty()) ep.geo = geo_flag;
      if (ep.cache_dir) ep.cache_dir = cfg.resolve(*ep.cache_dir);
      const Vocabulary vocab = load_vocabulary(cfg);
      std::vector<RawSeries> series;
      for (const auto& e : vocab.entries) {
        if (!variant_flag.empty() && !(variant == Variant::itacons ? e.itacons : e.itacome)) continue;
        series.push_back(fetch_series(e.term, cfg.data.span(), ep, e.category));
      }
      emit("panel.csv", serialize_panel(assemble_panel(series, cfg.data.span())));
      return 0;
    }

    const Vocabulary vocab = load_vocabulary(cfg);
    const TermPanel panel = load_panel(cfg, vocab);
    const TimeSeries target = load_macro(cfg, cfg.data.target);

    if (build->parsed()) {
      const BuildOutput b = build_itac(panel, vocab, variant, method, cfg, target, seed);
      emit("itac_" + method + ".csv", indicator_csv(b.indicator));
      Json meta = to_json(b.indicator);
      meta["model"] = b.artifact;
      emit("itac_" + method + ".json", meta.dump(1) + "\n");
      return 0;
    }

    if (search->parsed()) {
      const TermPanel filtered = panel.filter(vocab, variant);
      const MonthRange common = detail::aligned_span(filtered, target, cfg.transform);
      const FoldPlan fp = make_folds(common, cfg.plan);
      const AlignedDataset data = align(filtered, target, cfg.transform, fp.training);
      const SearchResult res = search_method(method, cfg, fp, data, seed);
      emit("leaderboard_" + method + ".csv", leaderboard_csv(res));
      emit("leaderboard_" + method + ".json", to_json(res).dump(1) + "\n");
      out << "best: " << res.best.str() << "\n";
      return 0;
    }

    if (evaluate->parsed()) {
      const Evaluation ev = run_evaluation(cfg, seed);
      emit("evaluation.csv", report_csv(ev.report));
      Json j = to_json(ev.report);
      j["stage_one"] = to_json(ev.stage_one.trace);
      j["method"] = method;
      j["variant"] = to_string(cfg.evaluate.variant);
      j["seed"] = seed;
      emit("evaluation.json", j.dump(1) + "\n");
      for (const auto& row : ev.report.rows)
        for (const auto& w : row.warnings) err << "warning: " << row.category << ": " << w << "\n";
      return 0;
    }

    if (report->parsed()) {
      std::vector<NamedSeries> named;
      for (Variant v : {Variant::itacons, Variant::itacome})
        named.emplace_back(std::string(to_string(v)) + "_" + method,
                           build_itac(panel, vocab, v, method, cfg, target, seed).indicator.series);
      named.emplace_back(cfg.data.target, target);
      named.emplace_back(cfg.data.stage_one_target, load_macro(cfg, cfg.data.stage_one_target));
      const MonthRange span = detail::common_span(named);
      for (auto& [name, s] : named) s = s.sub(span);
      emit("correlations.csv", correlation_csv(correlation_report(named)));
      emit("folds.csv", folds_csv(make_folds(span, cfg.plan)));
      return 0;
    }

    if (plot->parsed()) {
      const IndicatorSeries ind = build_itac(panel, vocab, variant, method, cfg, target, seed).indicator;
      const MonthRange span = MonthRange::intersect(ind.span(), target.span());
      std::vector<NamedSeries> named{{std::string(to_string(variant)) + " " + method, ind.series.sub(span)},
                                     {cfg.data.target, target.sub(span)}};
      emit("plot_" + method + ".svg", svg_line_chart("Indicator vs " + cfg.data.target, named));
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "itac: configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "itac: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace itac
