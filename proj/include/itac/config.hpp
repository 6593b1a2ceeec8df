#pragma once

// Pipeline configuration: a small TOML subset (sections, scalar keys and
// single-line arrays) mapped onto typed settings. Unknown sections and keys
// are rejected so that typos cannot silently fall back to defaults.

#include "itac/evalx.hpp"
#include "itac/factors.hpp"
#include "itac/fetch.hpp"
#include "itac/ingest.hpp"
#include "itac/neural.hpp"
#include "itac/select.hpp"
#include "itac/transform.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace itac {

inline constexpr int kConfigVersion = 1;

struct TomlValue {
  std::variant<bool, std::int64_t, double, std::string, std::vector<TomlValue>> v;
  int line = 0;

  bool is_number() const { return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v); }
  std::string describe() const;
};

/// Flat view: "section.key" → value. Top-level keys have no prefix.
using TomlDocument = std::map<std::string, TomlValue>;

namespace detail {

[[noreturn]] inline void config_fail(int line, const std::string& what) {
  throw ConfigError("config line " + std::to_string(line) + ": " + what);
}

inline bool bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
}

class TomlReader {
 public:
  TomlReader(std::string_view s, int line) : s_(s), line_(line) {}

  TomlValue value() {
    skip_ws();
    if (at_end()) config_fail(line_, "missing value");
    const char c = s_[pos_];
    if (c == '"') return {string(), line_};
    if (c == '[') return array();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return {true, line_};
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return {false, line_};
    }
    return number();
  }

  void finish() {
    skip_ws();
    if (!at_end() && s_[pos_] != '#') config_fail(line_, "unexpected trailing text");
  }

 private:
  bool at_end() const { return pos_ >= s_.size(); }
  void skip_ws() {
    while (!at_end() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  std::string string() {
    ++pos_;
    std::string out;
    while (!at_end() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (at_end()) break;
        char e = s_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: config_fail(line_, std::string("unknown escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    if (at_end()) config_fail(line_, "unterminated string");
    ++pos_;
    return out;
  }

  TomlValue array() {
    ++pos_;
    std::vector<TomlValue> items;
    while (true) {
      skip_ws();
      if (at_end()) config_fail(line_, "unterminated array");
      if (s_[pos_] == ']') {
        ++pos_;
        break;
      }
      items.push_back(value());
      skip_ws();
      if (!at_end() && s_[pos_] == ',') ++pos_;
      else if (at_end() || s_[pos_] != ']') config_fail(line_, "expected ',' or ']' in array");
    }
    return {std::move(items), line_};
  }

  TomlValue number() {
    std::size_t end = pos_;
    while (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '.' ||
                               s_[end] == '-' || s_[end] == '+' || s_[end] == '_'))
      ++end;
    std::string tok(s_.substr(pos_, end - pos_));
    std::erase(tok, '_');
    pos_ = end;
    if (tok.empty()) config_fail(line_, "malformed value");
    if (tok.find_first_of(".eE") == std::string::npos || tok.starts_with("0x")) {
      std::int64_t i = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), i);
      if (ec == std::errc() && p == tok.data() + tok.size()) return {i, line_};
    }
    double d = 0.0;
    if (!parse_double(tok, d)) config_fail(line_, "malformed value '" + tok + "'");
    return {d, line_};
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int line_;
};

}  // namespace detail

inline std::string TomlValue::describe() const {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) return x ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(x);
        else if constexpr (std::is_same_v<T, double>) return detail::format_double(x);
        else if constexpr (std::is_same_v<T, std::string>) return "\"" + x + "\"";
        else return "[array]";
      },
      v);
}

/// Parses the TOML subset. Duplicate keys and malformed lines raise ConfigError.
inline TomlDocument parse_toml(std::string_view text) {
  TomlDocument doc;
  std::string section;
  int line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      const auto close = line.find(']');
      if (close == std::string_view::npos) detail::config_fail(line_no, "unterminated section header");
      auto rest = detail::trim(line.substr(close + 1));
      if (!rest.empty() && rest.front() != '#') detail::config_fail(line_no, "text after section header");
      section = std::string(detail::trim(line.substr(1, close - 1)));
      if (section.empty() || !std::all_of(section.begin(), section.end(), detail::bare_key_char))
        detail::config_fail(line_no, "malformed section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) detail::config_fail(line_no, "expected key = value");
    std::string key(detail::trim(line.substr(0, eq)));
    if (key.empty() || !std::all_of(key.begin(), key.end(), detail::bare_key_char))
      detail::config_fail(line_no, "malformed key");
    detail::TomlReader reader(line.substr(eq + 1), line_no);
    TomlValue v = reader.value();
    reader.finish();
    const std::string full = section.empty() ? key : section + "." + key;
    if (!doc.emplace(full, std::move(v)).second) detail::config_fail(line_no, "duplicate key '" + full + "'");
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Typed configuration
// ---------------------------------------------------------------------------

struct DataConfig {
  std::filesystem::path panel = "panel.csv";
  std::filesystem::path vocabulary;  // empty: builtin vocabulary
  std::filesystem::path macro_dir = "macro";
  std::string target = "consumption";
  std::string stage_one_target = "commerce_services";
  std::vector<std::string> stage_one_candidates{"employment", "consumer_credit", "mortgage_credit", "cpi"};
  YearMonth span_start{2007, 1};
  YearMonth span_end{2024, 10};

  MonthRange span() const { return {span_start, span_end}; }
};

struct EvaluateConfig {
  std::string method = "pca";
  Variant variant = Variant::itacons;
  int horizon = 1;
  Correction correction = Correction::harvey;
  Alternative alternative = Alternative::greater;
  int gw_window = 1;
  McmcConfig mcmc;
  unsigned parallelism = 1;
};

struct PipelineConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 20240101;
  std::filesystem::path base_dir = ".";

  DataConfig data;
  EndpointConfig fetch;
  TransformSpec transform;
  PlanSpec plan{{2014, 8}, {2022, 5}, 5};
  Variant variant = Variant::itacons;

  Eigen::Index pca_components = 6;
  PcaOptions pca;
  Eigen::Index dfm_factors = 4;
  EmConfig dfm{500, 1e-6, 1.2};
  AnnConfig ann{32, 64, Activation::tanh, 1e-3, 300, 32, 0, 50, LayerReading::count};
  RnnConfig rnn{CellType::lstm, 24, 32, 6, Activation::tanh, 1e-3, 100, 4, 0, 30, LayerReading::count};

  EvaluateConfig evaluate;
  unsigned search_parallelism = 1;
  std::map<std::string, GridSpec> grids = default_grids();

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : base_dir / p; }

  /// Default hyperparameter search ranges. The RNN batch size
  /// range is read in log2 units.
  static std::map<std::string, GridSpec> default_grids() {
    return {
        {"pca", {{{"components", 2, 12, Scale::integer, 0}}}},
        {"dfm", {{{"factors", 2, 10, Scale::integer, 0}, {"series_length", 0.01, 2.5, Scale::linear, 5}}}},
        {"ann", {{{"hidden_layers", 2, 64, Scale::integer, 3}, {"neurons", 6, 256, Scale::integer, 3}}}},
        {"rnn",
         {{{"hidden_layers", 2, 48, Scale::integer, 3},
           {"neurons", 6, 256, Scale::integer, 3},
           {"batch_size", 2.5, 6.5, Scale::log2, 3}}}},
    };
  }
};

namespace detail {

class ConfigBinder {
 public:
  explicit ConfigBinder(const TomlDocument& doc) : doc_(doc) {}

  template <class Fn>
  void on(const std::string& key, Fn fn) {
    handlers_[key] = [fn](const TomlValue& v) { fn(v); };
  }
  /// Keys under `prefix.` are passed to `fn` with their remaining name.
  void on_prefix(const std::string& prefix, std::function<void(const std::string&, const TomlValue&)> fn) {
    prefixes_.emplace_back(prefix + ".", std::move(fn));
  }

  void run() const {
    for (const auto& [key, value] : doc_) {
      if (auto it = handlers_.find(key); it != handlers_.end()) {
        it->second(value);
        continue;
      }
      bool handled = false;
      for (const auto& [prefix, fn] : prefixes_)
        if (key.starts_with(prefix)) {
          fn(key.substr(prefix.size()), value);
          handled = true;
          break;
        }
      if (!handled) config_fail(value.line, "unknown key '" + key + "'");
    }
  }

 private:
  const TomlDocument& doc_;
  std::map<std::string, std::function<void(const TomlValue&)>> handlers_;
  std::vector<std::pair<std::string, std::function<void(const std::string&, const TomlValue&)>>> prefixes_;
};

inline std::string as_string(const TomlValue& v) {
  if (auto* s = std::get_if<std::string>(&v.v)) return *s;
  config_fail(v.line, "expected a string, got " + v.describe());
}
inline double as_double(const TomlValue& v) {
  if (auto* d = std::get_if<double>(&v.v)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&v.v)) return static_cast<double>(*i);
  config_fail(v.line, "expected a number, got " + v.describe());
}
inline std::int64_t as_int(const TomlValue& v) {
  if (auto* i = std::get_if<std::int64_t>(&v.v)) return *i;
  config_fail(v.line, "expected an integer, got " + v.describe());
}
inline int as_int32(const TomlValue& v) {
  const auto i = as_int(v);
  if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max())
    config_fail(v.line, "integer out of range");
  return static_cast<int>(i);
}
inline bool as_bool(const TomlValue& v) {
  if (auto* b = std::get_if<bool>(&v.v)) return *b;
  config_fail(v.line, "expected true or false, got " + v.describe());
}
inline YearMonth as_month(const TomlValue& v) {
  try {
    return YearMonth::parse(as_string(v));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    config_fail(v.line, e.what());
  }
}
inline std::vector<std::string> as_strings(const TomlValue& v) {
  auto* a = std::get_if<std::vector<TomlValue>>(&v.v);
  if (!a) config_fail(v.line, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& x : *a) out.push_back(as_string(x));
  return out;
}
template <class Fn>
auto as_enum(const TomlValue& v, Fn parse) {
  try {
    return parse(as_string(v));
  } catch (const ConfigError& e) {
    config_fail(v.line, e.what());
  }
}

/// `["integer", lo, hi]` or `["log2", lo, hi, points]`.
inline GridDimension as_dimension(const std::string& name, const TomlValue& v) {
  auto* a = std::get_if<std::vector<TomlValue>>(&v.v);
  if (!a || a->size() < 3 || a->size() > 4) config_fail(v.line, "grid dimension must be [scale, lower, upper, points?]");
  GridDimension d;
  d.name = name;
  d.scale = as_enum((*a)[0], parse_scale);
  d.lower = as_double((*a)[1]);
  d.upper = as_double((*a)[2]);
  if (a->size() == 4) d.points = as_int32((*a)[3]);
  try {
    (void)d.values();
  } catch (const ConfigError& e) {
    config_fail(v.line, e.what());
  }
  return d;
}

inline Correction parse_correction(std::string_view s) {
  if (s == "harvey") return Correction::harvey;
  if (s == "none") return Correction::none;
  throw ConfigError("unknown correction '" + std::string(s) + "'");
}
inline Alternative parse_alternative(std::string_view s) {
  if (s == "greater") return Alternative::greater;
  if (s == "less") return Alternative::less;
  if (s == "two-sided" || s == "two_sided") return Alternative::two_sided;
  throw ConfigError("unknown alternative '" + std::string(s) + "'");
}
inline std::string parse_method(std::string_view s) {
  if (s == "pca" || s == "dfm" || s == "ann" || s == "rnn") return std::string(s);
  throw ConfigError("unknown method '" + std::string(s) + "'");
}
inline Variant parse_variant_config(std::string_view s) {
  try {
    return parse_variant(s);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

/// Builds a PipelineConfig from parsed TOML. `base_dir` anchors relative paths.
inline PipelineConfig load_config(const TomlDocument& doc, const std::filesystem::path& base_dir = ".") {
  using namespace detail;
  PipelineConfig c;
  c.base_dir = base_dir;
  auto version = doc.find("version");
  if (version == doc.end()) throw ConfigError("config is missing the top-level 'version' key");
  if (as_int(version->second) != kConfigVersion)
    config_fail(version->second.line, "unsupported config version " + version->second.describe());

  ConfigBinder b(doc);
  b.on("version", [](const TomlValue&) {});
  b.on("seed", [&](const TomlValue& v) { c.seed = static_cast<std::uint64_t>(as_int(v)); });
  b.on("variant", [&](const TomlValue& v) { c.variant = as_enum(v, parse_variant_config); });

  b.on("data.panel", [&](const TomlValue& v) { c.data.panel = as_string(v); });
  b.on("data.vocabulary", [&](const TomlValue& v) { c.data.vocabulary = as_string(v); });
  b.on("data.macro_dir", [&](const TomlValue& v) { c.data.macro_dir = as_string(v); });
  b.on("data.target", [&](const TomlValue& v) { c.data.target = as_string(v); });
  b.on("data.stage_one_target", [&](const TomlValue& v) { c.data.stage_one_target = as_string(v); });
  b.on("data.stage_one_candidates", [&](const TomlValue& v) { c.data.stage_one_candidates = as_strings(v); });
  b.on("data.span_start", [&](const TomlValue& v) { c.data.span_start = as_month(v); });
  b.on("data.span_end", [&](const TomlValue& v) { c.data.span_end = as_month(v); });

  b.on("fetch.base_url", [&](const TomlValue& v) {
    if (auto s = as_string(v); !s.empty()) c.fetch.base_url = s;
  });
  b.on("fetch.geo", [&](const TomlValue& v) { c.fetch.geo = as_string(v); });
  b.on("fetch.retries", [&](const TomlValue& v) { c.fetch.retries = as_int32(v); });
  b.on("fetch.backoff_ms", [&](const TomlValue& v) { c.fetch.backoff_ms = as_int32(v); });
  b.on("fetch.timeout_seconds", [&](const TomlValue& v) { c.fetch.timeout_seconds = as_int32(v); });
  b.on("fetch.cache_dir", [&](const TomlValue& v) { c.fetch.cache_dir = as_string(v); });

  b.on("transform.rescale", [&](const TomlValue& v) { c.transform.rescale = as_bool(v); });
  b.on("transform.log", [&](const TomlValue& v) { c.transform.log = as_bool(v); });
  b.on("transform.log_offset", [&](const TomlValue& v) { c.transform.log_offset = as_double(v); });
  b.on("transform.log_diff", [&](const TomlValue& v) { c.transform.log_diff = as_bool(v); });
  b.on("transform.impute_policy", [&](const TomlValue& v) { c.transform.impute_policy = as_enum(v, parse_impute_policy); });
  b.on("transform.max_missing_fraction", [&](const TomlValue& v) { c.transform.max_missing_fraction = as_double(v); });
  b.on("transform.standardize", [&](const TomlValue& v) { c.transform.standardize = as_bool(v); });

  b.on("plan.train_end", [&](const TomlValue& v) { c.plan.train_end = as_month(v); });
  b.on("plan.validation_end", [&](const TomlValue& v) { c.plan.validation_end = as_month(v); });
  b.on("plan.folds", [&](const TomlValue& v) { c.plan.k = as_int32(v); });

  b.on("pca.components", [&](const TomlValue& v) { c.pca_components = as_int(v); });
  b.on("pca.standardize", [&](const TomlValue& v) { c.pca.standardize = as_bool(v); });

  b.on("dfm.factors", [&](const TomlValue& v) { c.dfm_factors = as_int(v); });
  b.on("dfm.series_length", [&](const TomlValue& v) { c.dfm.series_length = as_double(v); });
  b.on("dfm.max_iter", [&](const TomlValue& v) { c.dfm.max_iter = as_int32(v); });
  b.on("dfm.tol", [&](const TomlValue& v) { c.dfm.tol = as_double(v); });

  b.on("ann.hidden_layers", [&](const TomlValue& v) { c.ann.hidden_layers = as_int32(v); });
  b.on("ann.neurons", [&](const TomlValue& v) { c.ann.neurons = as_int32(v); });
  b.on("ann.activation", [&](const TomlValue& v) { c.ann.activation = as_enum(v, parse_activation); });
  b.on("ann.learning_rate", [&](const TomlValue& v) { c.ann.learning_rate = as_double(v); });
  b.on("ann.epochs", [&](const TomlValue& v) { c.ann.epochs = as_int32(v); });
  b.on("ann.batch_size", [&](const TomlValue& v) { c.ann.batch_size = as_int32(v); });
  b.on("ann.patience", [&](const TomlValue& v) { c.ann.patience = as_int32(v); });
  b.on("ann.layer_reading", [&](const TomlValue& v) { c.ann.layer_reading = as_enum(v, parse_layer_reading); });

  b.on("rnn.cell", [&](const TomlValue& v) { c.rnn.cell = as_enum(v, parse_cell); });
  b.on("rnn.hidden_layers", [&](const TomlValue& v) { c.rnn.hidden_layers = as_int32(v); });
  b.on("rnn.neurons", [&](const TomlValue& v) { c.rnn.neurons = as_int32(v); });
  b.on("rnn.window", [&](const TomlValue& v) { c.rnn.window = as_int32(v); });
  b.on("rnn.activation", [&](const TomlValue& v) { c.rnn.activation = as_enum(v, parse_activation); });
  b.on("rnn.learning_rate", [&](const TomlValue& v) { c.rnn.learning_rate = as_double(v); });
  b.on("rnn.epochs", [&](const TomlValue& v) { c.rnn.epochs = as_int32(v); });
  b.on("rnn.batch_size", [&](const TomlValue& v) { c.rnn.batch_size = as_int32(v); });
  b.on("rnn.patience", [&](const TomlValue& v) { c.rnn.patience = as_int32(v); });
  b.on("rnn.layer_reading", [&](const TomlValue& v) { c.rnn.layer_reading = as_enum(v, parse_layer_reading); });

  b.on("evaluate.method", [&](const TomlValue& v) { c.evaluate.method = as_enum(v, parse_method); });
  b.on("evaluate.variant", [&](const TomlValue& v) { c.evaluate.variant = as_enum(v, parse_variant_config); });
  b.on("evaluate.horizon", [&](const TomlValue& v) { c.evaluate.horizon = as_int32(v); });
  b.on("evaluate.correction", [&](const TomlValue& v) { c.evaluate.correction = as_enum(v, parse_correction); });
  b.on("evaluate.alternative", [&](const TomlValue& v) { c.evaluate.alternative = as_enum(v, parse_alternative); });
  b.on("evaluate.gw_window", [&](const TomlValue& v) { c.evaluate.gw_window = as_int32(v); });
  b.on("evaluate.mcmc_draws", [&](const TomlValue& v) { c.evaluate.mcmc.draws = as_int32(v); });
  b.on("evaluate.mcmc_burn_in", [&](const TomlValue& v) { c.evaluate.mcmc.burn_in = as_int32(v); });
  b.on("evaluate.prior_inclusion", [&](const TomlValue& v) { c.evaluate.mcmc.prior_inclusion = as_double(v); });
  b.on("evaluate.parallelism", [&](const TomlValue& v) { c.evaluate.parallelism = static_cast<unsigned>(as_int32(v)); });

  b.on("search.parallelism", [&](const TomlValue& v) { c.search_parallelism = static_cast<unsigned>(as_int32(v)); });
  std::map<std::string, GridSpec> overrides;
  b.on_prefix("grid", [&](const std::string& rest, const TomlValue& v) {
    const auto dot = rest.find('.');
    if (dot == std::string::npos) config_fail(v.line, "grid keys live in [grid.<method>] sections");
    const std::string method = rest.substr(0, dot);
    try {
      parse_method(method);
    } catch (const ConfigError& e) {
      config_fail(v.line, e.what());
    }
    overrides[method].dimensions.push_back(as_dimension(rest.substr(dot + 1), v));
  });

  b.run();
  for (auto& [method, spec] : overrides) c.grids[method] = std::move(spec);

  if (!(c.data.span_start <= c.data.span_end)) throw ConfigError("data.span_start must not follow data.span_end");
  if (c.pca_components < 1) throw ConfigError("pca.components must be positive");
  if (c.dfm_factors < 1) throw ConfigError("dfm.factors must be positive");
  if (c.evaluate.horizon < 1) throw ConfigError("evaluate.horizon must be positive");
  if (c.evaluate.gw_window < 1) throw ConfigError("evaluate.gw_window must be positive");
  if (c.evaluate.parallelism < 1 || c.search_parallelism < 1) throw ConfigError("parallelism must be positive");
  c.ann.validate();
  c.rnn.validate();
  return c;
}

inline PipelineConfig load_config_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path.string());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return load_config(parse_toml(text), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace itac
