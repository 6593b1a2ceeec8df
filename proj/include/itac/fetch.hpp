#pragma once

#include "itac/core.hpp"
#include "itac/ingest.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>

namespace itac {

/// Where and how to reach the search-volume endpoint.
struct EndpointConfig {
  /// `scheme://host:port`; defaults to $ITAC_TRENDS_URL.
  std::string base_url = [] {
    const char* v = std::getenv("ITAC_TRENDS_URL");
    return std::string(v ? v : "");
  }();
  std::string geo = "PE";
  int retries = 3;
  int backoff_ms = 200;
  std::optional<std::filesystem::path> cache_dir;
  int timeout_seconds = 10;
};

namespace detail {

inline std::string cache_key(std::string_view term, const MonthRange& span, std::string_view geo) {
  std::string key(term);
  key += '\x1f';
  key += span.str();
  key += '\x1f';
  key += geo;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return buf;
}

inline void write_atomic(const std::filesystem::path& path, std::string_view body) {
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FetchError("cannot write cache file " + tmp.string());
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
  }
  std::filesystem::rename(tmp, path);
}

inline RawSeries parse_payload(const std::string& body, std::string_view term, std::string_view category,
                               const MonthRange& span) {
  RawSeries s = parse_raw_series(body, std::string(term), std::string(category));
  std::erase_if(s.observations, [&](const Observation& o) { return !span.contains(o.month); });
  return s;
}

}  // namespace detail

/// Downloads the monthly search volume of `term` over `span`.
///
/// Sends `GET /trends?term=..&geo=..&start=YYYY-MM&end=YYYY-MM` and expects a
/// `date,value` CSV body. 429 fails immediately; 5xx and connection failures
/// are retried with exponential backoff. With a cache directory the raw body
/// is stored and later calls are served from disk.
inline RawSeries fetch_series(const std::string& term, const MonthRange& span, const EndpointConfig& cfg,
                              const std::string& category = {}) {
  if (span.empty()) throw InvalidSpanError("empty fetch span " + span.str());

  std::optional<std::filesystem::path> cached;
  if (cfg.cache_dir) {
    cached = *cfg.cache_dir / (detail::cache_key(term, span, cfg.geo) + ".csv");
    if (std::filesystem::exists(*cached)) return detail::parse_payload(read_file(cached->string()), term, category, span);
  }
  if (cfg.base_url.empty()) throw FetchError("no endpoint configured (set ITAC_TRENDS_URL)");

  httplib::Client client(cfg.base_url);
  client.set_connection_timeout(cfg.timeout_seconds, 0);
  client.set_read_timeout(cfg.timeout_seconds, 0);
  const httplib::Params params{{"term", term}, {"geo", cfg.geo}, {"start", span.first.str()}, {"end", span.last.str()}};

  std::string last_failure;
  for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(cfg.backoff_ms << (attempt - 1)));
    auto res = client.Get("/trends", params, httplib::Headers{});
    if (!res) {
      last_failure = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429) throw ThrottledError("endpoint throttled request for '" + term + "'");
    if (res->status >= 500) {
      last_failure = "server error " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw FetchError("request for '" + term + "' failed with status " + std::to_string(res->status));
    RawSeries s = detail::parse_payload(res->body, term, category, span);
    if (cached) detail::write_atomic(*cached, res->body);
    return s;
  }
  throw FetchError("request for '" + term + "' failed after " + std::to_string(cfg.retries + 1) +
                   " attempts (" + last_failure + ")");
}

}  // namespace itac
