#pragma once

// Local stand-in for the search-volume endpoint, serving fixture CSVs.

#include "itac/core.hpp"
#include "itac/ingest.hpp"

#include <httplib.h>

#include <atomic>
#include <cctype>
#include <filesystem>
#include <set>
#include <string>
#include <thread>

namespace itac {

/// File stem for a term: lowercase ASCII alphanumerics, everything else `_`.
inline std::string term_slug(std::string_view term) {
  std::string out;
  for (unsigned char c : term) out += std::isalnum(c) && c < 128 ? static_cast<char>(std::tolower(c)) : '_';
  return out;
}

class MockTrendsServer {
 public:
  explicit MockTrendsServer(std::filesystem::path dir, std::set<std::string> throttled = {})
      : dir_(std::move(dir)), throttled_(std::move(throttled)) {
    server_.Get("/trends", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
  }
  ~MockTrendsServer() { stop(); }
  MockTrendsServer(const MockTrendsServer&) = delete;
  MockTrendsServer& operator=(const MockTrendsServer&) = delete;

  /// Binds to `port` (0 picks a free one) and serves in a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("mock server could not bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }
  /// Blocking variant for the standalone tool.
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw Error("mock server could not listen on " + host + ":" + std::to_string(port));
  }
  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int requests() const { return requests_.load(); }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    const auto term = req.get_param_value("term");
    if (throttled_.count(term)) {
      res.status = 429;
      return;
    }
    const auto path = dir_ / (term_slug(term) + ".csv");
    if (term.empty() || !std::filesystem::exists(path)) {
      res.status = 404;
      return;
    }
    std::string body;
    try {
      body = read_file(path.string());
    } catch (const Error&) {
      res.status = 500;
      return;
    }
    if (req.has_param("start") && req.has_param("end")) {
      MonthRange span;
      try {
        span = {YearMonth::parse(req.get_param_value("start")), YearMonth::parse(req.get_param_value("end"))};
      } catch (const Error&) {
        res.status = 400;
        return;
      }
      try {
        RawSeries s = parse_raw_series(body, term);
        std::erase_if(s.observations, [&](const Observation& o) { return !span.contains(o.month); });
        body = serialize_raw_series(s);
      } catch (const Error&) {
        // malformed fixtures are passed through so clients see the bad payload
      }
    }
    res.set_content(body, "text/csv");
  }

  std::filesystem::path dir_;
  std::set<std::string> throttled_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<int> requests_{0};
};

}  // namespace itac
