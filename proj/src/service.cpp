#include "dgsr/service.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "dgsr/base64.hpp"
#include "dgsr/png_io.hpp"

namespace dgsr::service {

namespace {

HttpResponse error(int status, const std::string& msg) { return {status, nlohmann::json{{"error", msg}}.dump()}; }

struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::optional<double> number_field(const nlohmann::json& f, const char* key) {
    if (!f.contains(key) || f.at(key).is_null()) return std::nullopt;
    const auto& v = f.at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        char* end = nullptr;
        const double d = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size()) throw BadRequest(std::string("field '") + key + "' is not a number");
        return d;
    }
    throw BadRequest(std::string("field '") + key + "' is not a number");
}

std::optional<std::uint64_t> seed_field(const nlohmann::json& f) {
    if (!f.contains("seed") || f.at("seed").is_null()) return std::nullopt;
    const auto& v = f.at("seed");
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (!s.empty() && s.find_first_not_of("0123456789") == std::string::npos) return std::stoull(s);
    }
    throw BadRequest("field 'seed' must be a non-negative integer");
}

nlohmann::json parse_body(const std::string& body) {
    try {
        auto j = nlohmann::json::parse(body);
        if (!j.is_object()) throw BadRequest("request body must be a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw BadRequest(std::string("malformed JSON: ") + e.what());
    }
}

nlohmann::json d_json(const data::DegradationVector& d) { return {{"d_n", d.d_n}, {"d_b", d.d_b}}; }

} // namespace

struct Service::Worker {
    std::thread thread;
};

Service::Service(std::shared_ptr<const inference::ModelBundle> bundle, ServiceConfig config)
    : bundle_(std::move(bundle)), config_(config) {}

Service::~Service() { stop(); }

HttpResponse Service::health() const {
    if (!bundle_) return {503, nlohmann::json{{"status", "no bundle"}}.dump()};
    nlohmann::json j{{"status", "ok"},
                     {"bundle", bundle_->info()},
                     {"version", bundle_->version()},
                     {"requests", requests_.load()},
                     {"max_width", config_.max_width},
                     {"max_height", config_.max_height}};
    return {200, j.dump()};
}

namespace {

Image decode_image(const nlohmann::json& f, const ServiceConfig& cfg) {
    if (!f.contains("image") || !f.at("image").is_string()) throw BadRequest("missing 'image' (base64 PNG)");
    std::vector<std::uint8_t> bytes;
    try {
        bytes = base64::decode(f.at("image").get<std::string>());
    } catch (const InputError& e) {
        throw BadRequest(e.what());
    }
    Image img;
    try {
        img = png::decode(bytes);
    } catch (const std::exception& e) {
        throw BadRequest(std::string("image is not a readable PNG: ") + e.what());
    }
    if (img.width > cfg.max_width || img.height > cfg.max_height) {
        throw TooLarge("image " + std::to_string(img.width) + "x" + std::to_string(img.height) + " exceeds the " +
                       std::to_string(cfg.max_width) + "x" + std::to_string(cfg.max_height) + " limit");
    }
    return img;
}

template <typename F>
HttpResponse guarded(F&& f) {
    try {
        return f();
    } catch (const BadRequest& e) {
        return error(400, e.what());
    } catch (const TooLarge& e) {
        return error(413, e.what());
    } catch (const InputError& e) {
        return error(400, e.what());
    } catch (const StateError& e) {
        return error(503, e.what());
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
}

} // namespace

HttpResponse Service::infer_fields(const nlohmann::json& f) {
    ++requests_;
    return guarded([&]() -> HttpResponse {
        if (!bundle_) return error(503, "no model bundle loaded");
        inference::InferenceRequest req;
        req.lr = decode_image(f, config_);
        if (auto v = number_field(f, "lambda_cfg")) req.lambda_cfg = *v;
        if (auto v = number_field(f, "noise_sigma_start")) req.noise_sigma_start = *v;
        req.seed = seed_field(f);
        const auto dn = number_field(f, "d_n");
        const auto db = number_field(f, "d_b");
        if ((dn && !std::isfinite(*dn)) || (db && !std::isfinite(*db))) throw BadRequest("d_n and d_b must be finite");
        std::optional<data::DegradationVector> estimated;
        if (dn && db) {
            req.d_override = data::DegradationVector{*dn, *db};
        } else if (dn || db) {
            // Partial override: the missing component comes from the estimator.
            estimated = inference::estimate(*bundle_, req.lr);
            req.d_override = data::DegradationVector{dn.value_or(estimated->d_n), db.value_or(estimated->d_b)};
        }
        const auto res = inference::super_resolve(*bundle_, req);
        auto report = res.report.to_json();
        if (estimated) {
            report["d_estimated"] = d_json(*estimated);
            report["estimator_calls"] = report["estimator_calls"].get<int>() + 1;
        }
        nlohmann::json out{{"image", base64::encode(png::encode(res.sr))}, {"report", report}};
        return {200, out.dump()};
    });
}

HttpResponse Service::estimate_fields(const nlohmann::json& f) {
    ++requests_;
    return guarded([&]() -> HttpResponse {
        if (!bundle_) return error(503, "no model bundle loaded");
        const auto img = decode_image(f, config_);
        const auto d = inference::estimate(*bundle_, img);
        return {200, nlohmann::json{{"d", d_json(d)}, {"d_n", d.d_n}, {"d_b", d.d_b}}.dump()};
    });
}

HttpResponse Service::infer_json(const std::string& body) {
    try {
        return infer_fields(parse_body(body));
    } catch (const BadRequest& e) {
        return error(400, e.what());
    }
}

HttpResponse Service::estimate_json(const std::string& body) {
    try {
        return estimate_fields(parse_body(body));
    } catch (const BadRequest& e) {
        return error(400, e.what());
    }
}

namespace {

// Multipart form: the image as a file part named "image", scalars as plain parts.
nlohmann::json fields_from_multipart(const httplib::Request& req) {
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [name, part] : req.files) {
        if (name == "image") {
            f["image"] = base64::encode(std::vector<std::uint8_t>(part.content.begin(), part.content.end()));
        } else {
            f[name] = part.content;
        }
    }
    return f;
}

void reply(httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
}

} // namespace

void Service::bind_routes(httplib::Server& server) {
    server.set_payload_max_length(config_.max_body_bytes);
    server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) { reply(res, health()); });
    auto infer = [this](const httplib::Request& req, httplib::Response& res) {
        if (req.is_multipart_form_data()) {
            reply(res, infer_fields(fields_from_multipart(req)));
        } else {
            reply(res, infer_json(req.body));
        }
    };
    auto estimate = [this](const httplib::Request& req, httplib::Response& res) {
        if (req.is_multipart_form_data()) {
            reply(res, estimate_fields(fields_from_multipart(req)));
        } else {
            reply(res, estimate_json(req.body));
        }
    };
    server.Post("/v1/infer", infer);
    server.Post("/v1/estimate", estimate);
    server.Get("/v1/estimate", estimate);
}

bool Service::listen(const std::string& host, int port) {
    server_ = std::make_unique<httplib::Server>();
    bind_routes(*server_);
    return server_->listen(host, port);
}

int Service::start_background(const std::string& host) {
    server_ = std::make_unique<httplib::Server>();
    bind_routes(*server_);
    const int port = server_->bind_to_any_port(host);
    if (port <= 0) throw StateError("could not bind an HTTP port");
    worker_ = std::make_unique<Worker>();
    worker_->thread = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void Service::stop() {
    if (server_) server_->stop();
    if (worker_ && worker_->thread.joinable()) worker_->thread.join();
    worker_.reset();
}

std::shared_ptr<const inference::ModelBundle> load_bundle_or_env(const std::string& path) {
    std::string p = path;
    if (p.empty()) {
        if (const char* env = std::getenv(kBundleEnv)) p = env;
    }
    if (p.empty()) return nullptr;
    return std::make_shared<const inference::ModelBundle>(inference::ModelBundle::load(p));
}

} // namespace dgsr::service
