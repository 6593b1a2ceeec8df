#pragma once

#include "itac/evalx.hpp"
#include "itac/factors.hpp"
#include "itac/neural.hpp"
#include "itac/select.hpp"

#include <json.hpp>

#include <string>

namespace itac {

using Json = nlohmann::json;

inline constexpr const char* kArtifactFormat = "itac-artifact";
inline constexpr int kArtifactVersion = 1;

namespace detail {

inline Json matrix_json(const Matrix& m) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix json_matrix(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols))
    throw ParseError(0, "matrix data does not match its shape");
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++].get<double>();
  return m;
}

inline Json vector_json(const Vector& v) { return Json(to_std(v)); }
inline Vector json_vector(const Json& j) { return to_vector(j.get<std::vector<double>>()); }

inline Json envelope(std::string_view kind) {
  return {{"format", kArtifactFormat}, {"version", kArtifactVersion}, {"kind", kind}};
}

inline const Json& check_envelope(const Json& j, std::string_view kind) {
  if (!j.is_object() || j.value("format", "") != kArtifactFormat) throw ParseError(0, "not an itac artifact");
  if (j.value("version", 0) != kArtifactVersion)
    throw ParseError(0, "unsupported artifact version " + j.value("version", Json()).dump());
  if (j.value("kind", "") != kind)
    throw ParseError(0, "artifact kind is '" + j.value("kind", "") + "', expected '" + std::string(kind) + "'");
  return j;
}

inline Json dense_json(const Dense& d) { return {{"W", matrix_json(d.W)}, {"b", matrix_json(d.b)}}; }
inline Dense json_dense(const Json& j) { return {json_matrix(j.at("W")), json_matrix(j.at("b"))}; }

inline Json record_json(const TrainingRecord& r) {
  return {{"loss_curve", r.loss_curve},   {"validation_curve", r.validation_curve},
          {"final_loss", r.final_loss},   {"epochs_run", r.epochs_run},
          {"best_epoch", r.best_epoch},   {"init_scheme", r.init_scheme}};
}
inline TrainingRecord json_record(const Json& j) {
  TrainingRecord r;
  r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  r.validation_curve = j.at("validation_curve").get<std::vector<double>>();
  r.final_loss = j.at("final_loss").get<double>();
  r.epochs_run = j.at("epochs_run").get<int>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.init_scheme = j.at("init_scheme").get<std::string>();
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model artifacts
// ---------------------------------------------------------------------------

inline Json to_json(const PcaModel& m) {
  Json j = detail::envelope("pca");
  j["loadings"] = detail::matrix_json(m.loadings);
  j["eigenvalues"] = detail::vector_json(m.eigenvalues);
  j["means"] = detail::vector_json(m.means);
  j["scales"] = detail::vector_json(m.scales);
  j["total_variance"] = m.total_variance;
  j["standardized"] = m.standardized;
  return j;
}

inline Json to_json(const DfmModel& m) {
  Json j = detail::envelope("dfm");
  j["loadings"] = detail::matrix_json(m.loadings);
  j["transition"] = detail::matrix_json(m.transition);
  j["factor_noise"] = detail::matrix_json(m.factor_noise);
  j["idiosyncratic"] = detail::vector_json(m.idiosyncratic);
  j["means"] = detail::vector_json(m.means);
  j["initial_mean"] = detail::vector_json(m.initial_mean);
  j["initial_cov"] = detail::matrix_json(m.initial_cov);
  j["log_likelihood"] = m.log_likelihood;
  j["loglik_history"] = m.loglik_history;
  j["iterations"] = m.iterations;
  j["converged"] = m.converged;
  j["series_length"] = m.series_length;
  j["warnings"] = m.warnings;
  return j;
}

inline Json to_json(const AnnArtifact& a) {
  Json j = detail::envelope("ann");
  Json hidden = Json::array();
  for (const auto& d : a.net.hidden) hidden.push_back(detail::dense_json(d));
  j["hidden"] = std::move(hidden);
  j["output"] = detail::dense_json(a.net.output);
  j["activation"] = to_string(a.net.activation);
  const auto& c = a.config;
  j["config"] = {{"hidden_layers", c.hidden_layers}, {"neurons", c.neurons},
                 {"activation", to_string(c.activation)}, {"learning_rate", c.learning_rate},
                 {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"seed", c.seed},
                 {"patience", c.patience}, {"layer_reading", to_string(c.layer_reading)}};
  j["target_mean"] = a.target_mean;
  j["target_scale"] = a.target_scale;
  j["record"] = detail::record_json(a.record);
  return j;
}

inline Json to_json(const RnnArtifact& a) {
  Json j = detail::envelope("rnn");
  Json layers = Json::array();
  for (const auto& L : a.net.layers)
    layers.push_back({{"Wx", detail::matrix_json(L.Wx)}, {"Wh", detail::matrix_json(L.Wh)}, {"b", detail::matrix_json(L.b)}});
  j["layers"] = std::move(layers);
  j["output"] = detail::dense_json(a.net.output);
  j["cell"] = to_string(a.net.cell);
  j["activation"] = to_string(a.net.activation);
  j["window"] = a.net.window;
  const auto& c = a.config;
  j["config"] = {{"cell", to_string(c.cell)}, {"hidden_layers", c.hidden_layers}, {"neurons", c.neurons},
                 {"window", c.window}, {"activation", to_string(c.activation)},
                 {"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
                 {"seed", c.seed}, {"patience", c.patience}, {"layer_reading", to_string(c.layer_reading)}};
  j["target_mean"] = a.target_mean;
  j["target_scale"] = a.target_scale;
  j["record"] = detail::record_json(a.record);
  return j;
}

inline Json to_json(const OlsModel& m) {
  Json j = detail::envelope("ols");
  j["coefficients"] = detail::vector_json(m.coefficients);
  j["residual_variance"] = m.residual_variance;
  j["r2"] = m.r2;
  j["rss"] = m.rss;
  j["observations"] = m.observations;
  j["included"] = m.included;
  return j;
}

template <class T>
T from_json(const Json& j);

template <>
inline PcaModel from_json<PcaModel>(const Json& j) {
  detail::check_envelope(j, "pca");
  try {
    PcaModel m;
    m.loadings = detail::json_matrix(j.at("loadings"));
    m.eigenvalues = detail::json_vector(j.at("eigenvalues"));
    m.means = detail::json_vector(j.at("means"));
    m.scales = detail::json_vector(j.at("scales"));
    m.total_variance = j.at("total_variance").get<double>();
    m.standardized = j.at("standardized").get<bool>();
    return m;
  } catch (const Json::exception& e) {
    throw ParseError(0, e.what());
  }
}

template <>
inline DfmModel from_json<DfmModel>(const Json& j) {
  detail::check_envelope(j, "dfm");
  try {
    DfmModel m;
    m.loadings = detail::json_matrix(j.at("loadings"));
    m.transition = detail::json_matrix(j.at("transition"));
    m.factor_noise = detail::json_matrix(j.at("factor_noise"));
    m.idiosyncratic = detail::json_vector(j.at("idiosyncratic"));
    m.means = detail::json_vector(j.at("means"));
    m.initial_mean = detail::json_vector(j.at("initial_mean"));
    m.initial_cov = detail::json_matrix(j.at("initial_cov"));
    m.log_likelihood = j.at("log_likelihood").get<double>();
    m.loglik_history = j.at("loglik_history").get<std::vector<double>>();
    m.iterations = j.at("iterations").get<int>();
    m.converged = j.at("converged").get<bool>();
    m.series_length = j.at("series_length").get<double>();
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
  } catch (const Json::exception& e) {
    throw ParseError(0, e.what());
  }
}

template <>
inline AnnArtifact from_json<AnnArtifact>(const Json& j) {
  detail::check_envelope(j, "ann");
  try {
    AnnArtifact a;
    for (const auto& d : j.at("hidden")) a.net.hidden.push_back(detail::json_dense(d));
    a.net.output = detail::json_dense(j.at("output"));
    a.net.activation = parse_activation(j.at("activation").get<std::string>());
    const auto& c = j.at("config");
    a.config.hidden_layers = c.at("hidden_layers").get<int>();
    a.config.neurons = c.at("neurons").get<int>();
    a.config.activation = parse_activation(c.at("activation").get<std::string>());
    a.config.learning_rate = c.at("learning_rate").get<double>();
    a.config.epochs = c.at("epochs").get<int>();
    a.config.batch_size = c.at("batch_size").get<int>();
    a.config.seed = c.at("seed").get<std::uint64_t>();
    a.config.patience = c.at("patience").get<int>();
    a.config.layer_reading = parse_layer_reading(c.at("layer_reading").get<std::string>());
    a.target_mean = j.at("target_mean").get<double>();
    a.target_scale = j.at("target_scale").get<double>();
    a.record = detail::json_record(j.at("record"));
    return a;
  } catch (const Json::exception& e) {
    throw ParseError(0, e.what());
  }
}

template <>
inline RnnArtifact from_json<RnnArtifact>(const Json& j) {
  detail::check_envelope(j, "rnn");
  try {
    RnnArtifact a;
    for (const auto& L : j.at("layers"))
      a.net.layers.push_back({detail::json_matrix(L.at("Wx")), detail::json_matrix(L.at("Wh")), detail::json_matrix(L.at("b"))});
    a.net.output = detail::json_dense(j.at("output"));
    a.net.cell = parse_cell(j.at("cell").get<std::string>());
    a.net.activation = parse_activation(j.at("activation").get<std::string>());
    a.net.window = j.at("window").get<int>();
    const auto& c = j.at("config");
    a.config.cell = parse_cell(c.at("cell").get<std::string>());
    a.config.hidden_layers = c.at("hidden_layers").get<int>();
    a.config.neurons = c.at("neurons").get<int>();
    a.config.window = c.at("window").get<int>();
    a.config.activation = parse_activation(c.at("activation").get<std::string>());
    a.config.learning_rate = c.at("learning_rate").get<double>();
    a.config.epochs = c.at("epochs").get<int>();
    a.config.batch_size = c.at("batch_size").get<int>();
    a.config.seed = c.at("seed").get<std::uint64_t>();
    a.config.patience = c.at("patience").get<int>();
    a.config.layer_reading = parse_layer_reading(c.at("layer_reading").get<std::string>());
    a.target_mean = j.at("target_mean").get<double>();
    a.target_scale = j.at("target_scale").get<double>();
    a.record = detail::json_record(j.at("record"));
    return a;
  } catch (const Json::exception& e) {
    throw ParseError(0, e.what());
  }
}

template <>
inline OlsModel from_json<OlsModel>(const Json& j) {
  detail::check_envelope(j, "ols");
  try {
    OlsModel m;
    m.coefficients = detail::json_vector(j.at("coefficients"));
    m.residual_variance = j.at("residual_variance").get<double>();
    m.r2 = j.at("r2").get<double>();
    m.rss = j.at("rss").get<double>();
    m.observations = j.at("observations").get<Eigen::Index>();
    m.included = j.at("included").get<std::vector<std::string>>();
    return m;
  } catch (const Json::exception& e) {
    throw ParseError(0, e.what());
  }
}

/// Parses artifact text; the envelope is checked against T's kind.
template <class T>
T load_artifact(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(0, e.what());
  }
  return from_json<T>(j);
}

template <class T>
std::string dump_artifact(const T& artifact) {
  return to_json(artifact).dump(1);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline Json to_json(const SelectionTrace& t) {
  Json steps = Json::array();
  for (const auto& s : t.steps) steps.push_back({{"add", s.add}, {"variable", s.variable}, {"criterion", s.criterion}});
  return {{"direction", t.direction == Direction::forward    ? "forward"
                        : t.direction == Direction::backward ? "backward"
                                                             : "bidirectional"},
          {"criterion", to_string(t.criterion)},
          {"initial_criterion", t.initial_criterion},
          {"steps", std::move(steps)},
          {"selected", t.selected},
          {"final", to_json(t.final)}};
}

/// `step,action,variable,criterion`; step 0 is the intercept-only start.
inline std::string trace_csv(const SelectionTrace& t) {
  std::string out = "step,action,variable,criterion\n0,start,," + detail::format_double(t.initial_criterion) + "\n";
  for (std::size_t i = 0; i < t.steps.size(); ++i)
    out += std::to_string(i + 1) + "," + (t.steps[i].add ? "add," : "drop,") + t.steps[i].variable + "," +
           detail::format_double(t.steps[i].criterion) + "\n";
  return out;
}

inline Json to_json(const InclusionRanking& r) {
  Json rhat = Json::array();
  for (double v : r.split_rhat) rhat.push_back(std::isfinite(v) ? Json(v) : Json());
  return {{"names", r.names}, {"probabilities", r.probabilities}, {"draws", r.draws}, {"burn_in", r.burn_in},
          {"seed", r.seed},   {"split_rhat", std::move(rhat)},     {"warnings", r.warnings}};
}

/// `rank,name,probability`, most probable first.
inline std::string ranking_csv(const InclusionRanking& r) {
  std::string out = "rank,name,probability\n";
  const auto ord = r.order();
  for (std::size_t i = 0; i < ord.size(); ++i)
    out += std::to_string(i + 1) + "," + r.names[ord[i]] + "," + detail::format_double(r.probabilities[ord[i]]) + "\n";
  return out;
}

inline Json to_json(const TestResult& t) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(); };
  return {{"statistic", num(t.statistic)},
          {"p_value", num(t.p_value)},
          {"T", t.T},
          {"correction", t.correction == Correction::harvey ? "harvey" : "none"},
          {"degrees_of_freedom", t.degrees_of_freedom},
          {"mean_differential", num(t.mean_differential)}};
}

inline Json to_json(const SearchResult& r) {
  Json board = Json::array();
  for (const auto& e : r.leaderboard) {
    Json point = Json::object();
    for (const auto& [n, v] : e.point.values) point[n] = v;
    board.push_back({{"point", std::move(point)},
                     {"mean_mse", std::isfinite(e.mean_mse) ? Json(e.mean_mse) : Json()},
                     {"fold_mse", e.fold_mse},
                     {"parameters", e.parameters},
                     {"failed", e.failed},
                     {"message", e.message}});
  }
  Json best = Json::object();
  for (const auto& [n, v] : r.best.values) best[n] = v;
  return {{"best", std::move(best)}, {"best_index", r.best_index}, {"leaderboard", std::move(board)}};
}

/// One row per grid point in grid order: dimensions, mean_mse, parameters, status.
inline std::string leaderboard_csv(const SearchResult& r) {
  if (r.leaderboard.empty()) return "mean_mse,parameters,status\n";
  std::string out;
  for (const auto& [n, v] : r.leaderboard.front().point.values) out += n + ",";
  out += "mean_mse,parameters,status\n";
  for (const auto& e : r.leaderboard) {
    for (const auto& [n, v] : e.point.values) out += detail::format_double(v) + ",";
    out += (e.failed ? std::string() : detail::format_double(e.mean_mse)) + "," + detail::format_double(e.parameters) +
           "," + (e.failed ? "failed" : "ok") + "\n";
  }
  return out;
}

}  // namespace itac
