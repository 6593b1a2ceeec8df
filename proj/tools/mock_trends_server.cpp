// Serves <dir>/<slug>.csv at GET /trends?term=..&start=..&end=.. for local runs.

#include "itac/mock_trends.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Mock search-volume endpoint"};
  std::string dir = "fixtures/mock", host = "127.0.0.1";
  int port = 8765;
  std::vector<std::string> throttled;
  app.add_option("--dir", dir, "directory of <slug>.csv files");
  app.add_option("--host", host);
  app.add_option("--port", port);
  app.add_option("--throttle", throttled, "terms answered with 429");
  CLI11_PARSE(app, argc, argv);

  itac::MockTrendsServer server(dir, {throttled.begin(), throttled.end()});
  std::cout << "serving " << dir << " on http://" << host << ":" << port << std::endl;
  try {
    server.run(host, port);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
