#include "refcomp/service.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "refcomp/benchmark.hpp"
#include "refcomp/checkpoint.hpp"
#include "refcomp/diffusion.hpp"

namespace refcomp {

namespace fs = std::filesystem;
using nlohmann::json;

ServiceConfig ServiceConfig::from_env(ServiceConfig cfg) {
  auto env = [](const char* name) -> const char* {
    const char* v = std::getenv(name);
    return v && *v ? v : nullptr;
  };
  auto to_int = [](const char* name, const char* v) {
    try {
      size_t used = 0;
      const int n = std::stoi(v, &used);
      if (v[used] != '\0') throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw ConfigError(std::string(name) + ": '" + v + "' is not an integer");
    }
  };
  if (const char* v = env("REFCOMPLETE_CHECKPOINT")) cfg.checkpoint = v;
  if (const char* v = env("REFCOMPLETE_BENCHMARK_DIR")) cfg.benchmark_dir = v;
  if (const char* v = env("REFCOMPLETE_PORT")) cfg.port = to_int("REFCOMPLETE_PORT", v);
  if (const char* v = env("REFCOMPLETE_QUEUE_DEPTH")) cfg.queue_depth = to_int("REFCOMPLETE_QUEUE_DEPTH", v);
  if (cfg.port < 0 || cfg.port > 65535) throw ConfigError("port outside [0, 65535]");
  if (cfg.queue_depth < 1) throw ConfigError("queue depth must be positive");
  return cfg;
}

namespace {

ServiceResponse error(int status, const std::string& code, const std::string& detail) {
  return {status, json{{"error", code}, {"detail", detail}}};
}

/// Thrown inside handlers; mapped to an error response.
struct ApiError {
  int status;
  std::string code;
  std::string detail;
};

std::vector<std::uint8_t> decode_b64_field(const json& obj, const std::string& key) {
  if (!obj.contains(key) || !obj[key].is_string()) throw ApiError{400, "malformed_payload", "missing field '" + key + "'"};
  try {
    return base64_decode(obj[key].get<std::string>());
  } catch (const std::exception& e) {
    throw ApiError{400, "malformed_payload", key + ": " + e.what()};
  }
}

Raster decode_raster_field(const json& obj, const std::string& key) {
  const auto bytes = decode_b64_field(obj, key);
  try {
    return decode_png_raster(bytes);
  } catch (const std::exception& e) {
    throw ApiError{400, "malformed_payload", key + ": " + e.what()};
  }
}

Mask decode_mask_field(const json& obj, const std::string& key) {
  const auto bytes = decode_b64_field(obj, key);
  try {
    return decode_png_mask(bytes);
  } catch (const std::exception& e) {
    throw ApiError{400, "malformed_payload", key + ": " + e.what()};
  }
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else if (c == '?') {
      break;
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

struct GroupFiles {
  fs::path source, mask, ground_truth;
  std::optional<std::string> prompt;
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> references;  // label -> (image, mask)
  std::map<std::string, std::string> captions;
};

}  // namespace

struct Service::Impl {
  std::shared_ptr<const Denoiser> model;
  ServiceConfig cfg;
  NoiseSchedule schedule = make_schedule();
  std::map<std::string, GroupFiles> groups;
  std::vector<std::string> group_order;
  std::atomic<int> in_flight{0};
  std::mutex inference;
  mutable std::mutex mask_locks_guard;
  mutable std::map<std::string, std::unique_ptr<std::mutex>> mask_locks;
  httplib::Server server;
  std::thread thread;

  void load_index();
  ServiceResponse complete(const std::string& body);
  ServiceResponse list_groups() const;
  ServiceResponse group_metadata(const std::string& id) const;
  ServiceResponse group_asset(const std::string& id, const std::vector<std::string>& rest) const;
  ServiceResponse put_mask(const std::string& id, const std::string& body);
  std::mutex& mask_lock(const std::string& id) const;
  void install_routes(Service& owner);
};

void Service::Impl::load_index() {
  if (cfg.benchmark_dir.empty()) return;
  const fs::path manifest_path = cfg.benchmark_dir / kManifestName;
  const auto bytes = read_file(manifest_path);
  json manifest;
  try {
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  // Validates every group once; the service afterwards reads files on demand.
  load_benchmark(manifest_path);
  for (const auto& entry : manifest.at("groups")) {
    GroupFiles f;
    const auto id = entry.at("group_id").get<std::string>();
    f.source = cfg.benchmark_dir / entry.at("source").get<std::string>();
    f.mask = cfg.benchmark_dir / entry.at("mask").get<std::string>();
    f.ground_truth = cfg.benchmark_dir / entry.at("ground_truth").get<std::string>();
    if (entry.contains("prompt") && entry["prompt"].is_string()) f.prompt = entry["prompt"].get<std::string>();
    for (const auto& r : entry.at("references")) {
      const auto label = r.at("label").get<std::string>();
      f.references.push_back({label,
                              {cfg.benchmark_dir / r.at("image").get<std::string>(),
                               cfg.benchmark_dir / r.at("mask").get<std::string>()}});
      f.captions[label] = r.value("caption", std::string{});
    }
    groups.emplace(id, std::move(f));
    group_order.push_back(id);
  }
  std::sort(group_order.begin(), group_order.end());
}

std::mutex& Service::Impl::mask_lock(const std::string& id) const {
  std::lock_guard lock(mask_locks_guard);
  auto& m = mask_locks[id];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

ServiceResponse Service::Impl::complete(const std::string& body) {
  if (!model) return error(503, "model_unavailable", "no checkpoint loaded");
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return error(400, "malformed_payload", e.what());
  }
  if (!req.is_object()) return error(400, "malformed_payload", "request must be a JSON object");

  const Raster source = decode_raster_field(req, "source");
  const Mask mask = decode_mask_field(req, "mask");
  std::vector<ReferencePart> refs;
  if (req.contains("references")) {
    if (!req["references"].is_array()) return error(400, "malformed_payload", "references must be a list");
    for (const auto& r : req["references"]) {
      if (!r.is_object() || !r.contains("label") || !r["label"].is_string())
        return error(400, "malformed_payload", "reference without a label");
      ReferencePart part;
      try {
        part.label = parse_part(r["label"].get<std::string>());
      } catch (const std::exception& e) {
        return error(422, "invalid_reference", e.what());
      }
      part.image = decode_raster_field(r, "image");
      part.mask = decode_mask_field(r, "mask");
      refs.push_back(std::move(part));
    }
  }
  std::optional<std::string> prompt;
  if (req.contains("prompt") && !req["prompt"].is_null()) {
    if (!req["prompt"].is_string()) return error(400, "malformed_payload", "prompt must be a string");
    prompt = req["prompt"].get<std::string>();
  }
  std::uint64_t seed = 0;
  int steps = 50;
  double guidance = 7.5;
  try {
    if (req.contains("seed")) seed = req["seed"].get<std::uint64_t>();
    if (req.contains("steps")) steps = req["steps"].get<int>();
    if (req.contains("guidance")) guidance = req["guidance"].get<double>();
  } catch (const json::exception& e) {
    return error(400, "malformed_payload", e.what());
  }
  if (steps < 1 || steps > 250) return error(422, "invalid_steps", "steps must lie in [1, 250]");
  if (!(guidance >= 0.0 && guidance <= 30.0)) return error(422, "invalid_guidance", "guidance must lie in [0, 30]");
  if (mask.empty()) return error(422, "empty_mask", "the source mask selects no pixels");
  const int size = model->config().image_size;
  if (source.height != size || source.width != size)
    return error(422, "size_mismatch",
                 "source is " + std::to_string(source.height) + "x" + std::to_string(source.width) +
                     ", model expects " + std::to_string(size));
  if (mask.height != size || mask.width != size) return error(422, "size_mismatch", "mask and source sizes differ");

  const int depth = ++in_flight;
  struct Release {
    std::atomic<int>& n;
    ~Release() { --n; }
  } release{in_flight};
  if (depth > cfg.queue_depth) return error(503, "busy", "inference queue is full");

  std::lock_guard lock(inference);
  const auto t0 = std::chrono::steady_clock::now();
  Raster out;
  try {
    const auto cache = model->reference_encode(refs, prompt);
    SamplerConfig sampler;
    sampler.steps = steps;
    sampler.guidance_scale = guidance;
    out = sample_completion(*model, cache, source, mask, sampler, seed, schedule);
  } catch (const std::invalid_argument& e) {
    return error(422, "invalid_reference", e.what());
  }
  const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {200, json{{"image", base64_encode(encode_png(out))},
                    {"duration_ms", ms},
                    {"seed", seed},
                    {"steps", steps},
                    {"guidance", guidance}}};
}

ServiceResponse Service::Impl::list_groups() const {
  if (cfg.benchmark_dir.empty()) return error(404, "no_benchmark", "no benchmark directory configured");
  json list = json::array();
  for (const auto& id : group_order) {
    const auto& g = groups.at(id);
    json labels = json::array();
    for (const auto& r : g.references) labels.push_back(r.first);
    list.push_back({{"group_id", id}, {"prompt", g.prompt ? json(*g.prompt) : json(nullptr)}, {"references", labels}});
  }
  return {200, json{{"groups", list}, {"count", list.size()}}};
}

ServiceResponse Service::Impl::group_metadata(const std::string& id) const {
  const auto it = groups.find(id);
  if (it == groups.end()) return error(404, "unknown_group", "no group '" + id + "'");
  const auto& g = it->second;
  json refs = json::array();
  json assets = {{"source", "source"}, {"mask", "mask"}, {"ground_truth", "gt"}};
  for (const auto& r : g.references) {
    refs.push_back({{"label", r.first},
                    {"caption", g.captions.at(r.first)},
                    {"image", "refs/" + r.first},
                    {"mask", "refs/" + r.first + "_mask"}});
  }
  const Raster source = read_png_raster(g.source);
  return {200, json{{"group_id", id},
                    {"prompt", g.prompt ? json(*g.prompt) : json(nullptr)},
                    {"height", source.height},
                    {"width", source.width},
                    {"assets", assets},
                    {"references", refs}}};
}

ServiceResponse Service::Impl::group_asset(const std::string& id, const std::vector<std::string>& rest) const {
  const auto it = groups.find(id);
  if (it == groups.end()) return error(404, "unknown_group", "no group '" + id + "'");
  const auto& g = it->second;
  fs::path file;
  std::string name;
  if (rest.size() == 1) {
    name = rest[0];
    if (name == "source") file = g.source;
    if (name == "mask") file = g.mask;
    if (name == "gt") file = g.ground_truth;
  } else if (rest.size() == 2 && rest[0] == "refs") {
    name = "refs/" + rest[1];
    for (const auto& r : g.references) {
      if (rest[1] == r.first) file = r.second.first;
      if (rest[1] == r.first + "_mask") file = r.second.second;
    }
  }
  if (file.empty()) return error(404, "unknown_asset", "no asset '" + name + "' in group '" + id + "'");
  std::vector<std::uint8_t> bytes;
  {
    std::lock_guard lock(mask_lock(id));
    bytes = read_file(file);
  }
  return {200, json{{"group_id", id}, {"name", name}, {"content_type", "image/png"}, {"png", base64_encode(bytes)}}};
}

ServiceResponse Service::Impl::put_mask(const std::string& id, const std::string& body) {
  const auto it = groups.find(id);
  if (it == groups.end()) return error(404, "unknown_group", "no group '" + id + "'");
  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return error(400, "malformed_payload", e.what());
  }
  if (!req.is_object()) return error(400, "malformed_payload", "request must be a JSON object");
  const auto bytes = decode_b64_field(req, "mask");
  Mask mask;
  try {
    mask = decode_png_mask(bytes);
  } catch (const std::exception& e) {
    return error(400, "malformed_payload", std::string("mask: ") + e.what());
  }
  const Raster source = read_png_raster(it->second.source);
  if (mask.height != source.height || mask.width != source.width)
    return error(409, "dimension_mismatch",
                 "mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + ", group images are " +
                     std::to_string(source.height) + "x" + std::to_string(source.width));
  {
    std::lock_guard lock(mask_lock(id));
    write_file_atomic(it->second.mask, bytes);
  }
  json out{{"stored", true}, {"group_id", id}, {"pixels", mask.count()}};
  if (mask.empty()) out["warning"] = "empty_mask";
  return {200, out};
}

Service::Service(const ServiceConfig& cfg) : impl_(std::make_unique<Impl>()) {
  impl_->cfg = cfg;
  if (!cfg.checkpoint.empty()) impl_->model = std::shared_ptr<const Denoiser>(load_checkpoint(cfg.checkpoint).model);
  impl_->load_index();
  impl_->install_routes(*this);
}

Service::Service(std::shared_ptr<const Denoiser> model, const ServiceConfig& cfg) : impl_(std::make_unique<Impl>()) {
  impl_->cfg = cfg;
  impl_->model = std::move(model);
  impl_->load_index();
  impl_->install_routes(*this);
}

Service::~Service() { stop(); }

int Service::in_flight() const { return impl_->in_flight.load(); }

ServiceResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  const auto parts = split_path(path);
  try {
    if (parts.size() < 2 || parts[0] != "v1") return error(404, "not_found", "no route " + path);
    if (parts[1] == "health" && parts.size() == 2 && method == "GET")
      return {200, json{{"status", "ok"}, {"model_loaded", impl_->model != nullptr}, {"groups", impl_->groups.size()}}};
    if (parts[1] == "complete" && parts.size() == 2) {
      if (method != "POST") return error(405, "method_not_allowed", "use POST");
      return impl_->complete(body);
    }
    if (parts[1] == "benchmark" && parts.size() >= 3 && parts[2] == "groups") {
      if (parts.size() == 3) {
        if (method != "GET") return error(405, "method_not_allowed", "use GET");
        return impl_->list_groups();
      }
      const std::string& id = parts[3];
      if (parts.size() == 4) {
        if (method != "GET") return error(405, "method_not_allowed", "use GET");
        return impl_->group_metadata(id);
      }
      if (parts.size() == 5 && parts[4] == "mask" && method == "PUT") return impl_->put_mask(id, body);
      if (parts.size() >= 6 && parts[4] == "assets") {
        if (method != "GET") return error(405, "method_not_allowed", "use GET");
        return impl_->group_asset(id, std::vector<std::string>(parts.begin() + 5, parts.end()));
      }
      if (parts.size() == 5 && parts[4] == "mask") return error(405, "method_not_allowed", "use PUT");
    }
    return error(404, "not_found", "no route " + method + " " + path);
  } catch (const ApiError& e) {
    return error(e.status, e.code, e.detail);
  } catch (const IoError& e) {
    return error(500, "io_error", e.what());
  } catch (const std::exception& e) {
    return error(500, "internal_error", e.what());
  }
}

void Service::Impl::install_routes(Service& owner) {
  auto forward = [&owner](const httplib::Request& req, httplib::Response& res) {
    const auto r = owner.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(R"(/.*)", forward);
  server.Post(R"(/.*)", forward);
  server.Put(R"(/.*)", forward);
  server.Delete(R"(/.*)", forward);
  server.set_payload_max_length(64 * 1024 * 1024);
}

bool Service::listen() { return impl_->server.listen(impl_->cfg.host, impl_->cfg.port); }

int Service::start_background() {
  const int port = impl_->server.bind_to_any_port("127.0.0.1");
  if (port <= 0) throw IoError("cannot bind a local port");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace refcomp
