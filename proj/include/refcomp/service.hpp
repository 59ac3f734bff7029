#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "refcomp/model.hpp"

namespace refcomp {

struct ServiceConfig {
  std::filesystem::path checkpoint;     // empty: completion answers 503
  std::filesystem::path benchmark_dir;  // empty: benchmark endpoints answer 404
  int port = 8080;
  int queue_depth = 4;
  std::string host = "0.0.0.0";

  /// REFCOMPLETE_CHECKPOINT, REFCOMPLETE_BENCHMARK_DIR, REFCOMPLETE_PORT,
  /// REFCOMPLETE_QUEUE_DEPTH over the given defaults.
  static ServiceConfig from_env(ServiceConfig defaults);
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// JSON API over a loaded model and a benchmark directory. handle() is the
/// transport-free entry point; listen() serves it over HTTP.
class Service {
 public:
  explicit Service(const ServiceConfig& cfg);
  Service(std::shared_ptr<const Denoiser> model, const ServiceConfig& cfg);
  ~Service();

  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

  /// Blocks until stop(). Returns false if the socket could not be bound.
  bool listen();
  /// Binds an ephemeral port and serves on a background thread; returns the port.
  int start_background();
  void stop();

  int in_flight() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace refcomp
