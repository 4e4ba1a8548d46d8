#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "dgsr/inference.hpp"

namespace httplib {
class Server;
}

// HTTP/JSON front end over an immutable model bundle. All routes live under /v1.
namespace dgsr::service {

inline constexpr const char* kBundleEnv = "DGSR_BUNDLE";

struct ServiceConfig {
    int max_width = 1024;   // LR input limits; larger images get 413
    int max_height = 1024;
    std::size_t max_body_bytes = 64u << 20;
};

struct HttpResponse {
    int status = 200;
    std::string body;  // JSON
};

class Service {
public:
    // `bundle` may be null; inference routes then answer 503.
    Service(std::shared_ptr<const inference::ModelBundle> bundle, ServiceConfig config = {});
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Transport-independent handlers. `content_type` selects JSON or multipart
    // parsing; multipart bodies are parsed by the HTTP layer and passed as
    // already-extracted fields through handle_fields().
    HttpResponse health() const;
    HttpResponse infer_json(const std::string& body);
    HttpResponse estimate_json(const std::string& body);

    void bind_routes(httplib::Server& server);

    // Blocking; returns false if the socket could not be bound.
    bool listen(const std::string& host, int port);
    // Binds to an ephemeral port and serves on a background thread.
    int start_background(const std::string& host = "127.0.0.1");
    void stop();

    std::uint64_t requests() const { return requests_.load(); }
    const ServiceConfig& config() const { return config_; }

    // Used by both the JSON and the multipart paths.
    HttpResponse infer_fields(const nlohmann::json& fields);
    HttpResponse estimate_fields(const nlohmann::json& fields);

private:
    std::shared_ptr<const inference::ModelBundle> bundle_;
    ServiceConfig config_;
    std::atomic<std::uint64_t> requests_{0};
    std::unique_ptr<httplib::Server> server_;
    struct Worker;
    std::unique_ptr<Worker> worker_;
};

// Loads the bundle from `path`, or from $DGSR_BUNDLE when `path` is empty.
// Returns null when neither is set.
std::shared_ptr<const inference::ModelBundle> load_bundle_or_env(const std::string& path);

} // namespace dgsr::service
