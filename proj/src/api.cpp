#include "refground/api.hpp"

#include <cstdio>
#include <stdexcept>
#include <thread>

#include <httplib.h>

namespace refground {

ApiResponse api_error(int status, std::string code, std::string message) {
    return {status, {{"code", std::move(code)}, {"message", std::move(message)}}};
}

GroundingService::GroundingService(std::shared_ptr<const GroundingEngine> engine,
                                   std::vector<AnnotatedScene> scenes, ApiConfig config, Clock clock)
    : engine_(std::move(engine)), config_(config), clock_(std::move(clock)), id_rng_(std::random_device{}()) {
    if (!engine_) {
        throw std::invalid_argument("grounding service needs an engine");
    }
    if (!clock_) {
        clock_ = [] { return std::chrono::steady_clock::now(); };
    }
    for (auto& scene : scenes) {
        const std::string id = scene.scene.id;
        if (!scenes_.emplace(id, std::move(scene)).second) {
            throw std::invalid_argument("duplicate scene id: " + id);
        }
    }
}

ApiResponse GroundingService::health() const {
    return {200, {{"status", "ok"}, {"scenes", scenes_.size()}}};
}

ApiResponse GroundingService::list_scenes() const {
    auto list = nlohmann::ordered_json::array();
    for (const auto& [id, annotated] : scenes_) {
        list.push_back({{"id", id},
                        {"width", annotated.scene.width},
                        {"height", annotated.scene.height},
                        {"objects", annotated.scene.objects.size()}});
    }
    return {200, std::move(list)};
}

ApiResponse GroundingService::get_scene(std::string_view scene_id) const {
    const auto it = scenes_.find(scene_id);
    if (it == scenes_.end()) {
        return api_error(404, "not_found", "unknown scene '" + std::string(scene_id) + "'");
    }
    return {200, to_json(it->second)};
}

namespace {

nlohmann::ordered_json candidate_json(const RankedBox& entry) {
    return {{"box", to_json(entry.box)}, {"score", entry.score}};
}

}  // namespace

ApiResponse GroundingService::ground(const nlohmann::json& request) {
    if (!request.is_object()) {
        return api_error(400, "bad_request", "request body must be a JSON object");
    }
    const auto scene_field = request.find("scene_id");
    const auto query_field = request.find("query");
    if (scene_field == request.end() || !scene_field->is_string()) {
        return api_error(400, "bad_request", "scene_id must be a string");
    }
    if (query_field == request.end() || !query_field->is_string()) {
        return api_error(400, "bad_request", "query must be a string");
    }
    const auto scene_id = scene_field->get<std::string>();
    const auto query = query_field->get<std::string>();
    const auto it = scenes_.find(scene_id);
    if (it == scenes_.end()) {
        return api_error(404, "not_found", "unknown scene '" + scene_id + "'");
    }
    if (!Expression(query).has_content()) {
        return api_error(400, "empty_query", "query is empty");
    }
    Aggregation aggregation = engine_->config().aggregation;
    if (const auto agg = request.find("aggregation"); agg != request.end() && !agg->is_null()) {
        try {
            aggregation = parse_aggregation(agg->get<std::string>());
        } catch (const std::exception& error) {
            return api_error(400, "bad_request", error.what());
        }
    }
    const Scene& scene = it->second.scene;
    GroundingResult result;
    try {
        const auto proposals = make_proposals(scene, config_.proposals, 0);
        result = engine_->ground(scene, proposals, query, aggregation);
    } catch (const std::exception& error) {
        return api_error(500, "grounding_failed", error.what());
    }

    const auto now = clock_();
    nlohmann::ordered_json body;
    std::lock_guard lock(mutex_);
    expire_sessions(now);
    const auto session_id = new_session_id();
    body["session_id"] = session_id;
    body["candidate"] = candidate_json(result.ranked.front());
    body["rank"] = 1;
    body["ranked_count"] = result.ranked.size();
    body["diagnostics"] = to_json(result)["diagnostics"];
    sessions_.emplace(session_id, Session{scene_id, std::move(result), {}, now, now});
    return {200, std::move(body)};
}

ApiResponse GroundingService::feedback(const nlohmann::json& request) {
    if (!request.is_object()) {
        return api_error(400, "bad_request", "request body must be a JSON object");
    }
    const auto id_field = request.find("session_id");
    const auto verdict_field = request.find("verdict");
    if (id_field == request.end() || !id_field->is_string()) {
        return api_error(400, "bad_request", "session_id must be a string");
    }
    if (verdict_field == request.end() || !verdict_field->is_string() ||
        (*verdict_field != "accept" && *verdict_field != "reject")) {
        return api_error(400, "bad_request", "verdict must be 'accept' or 'reject'");
    }
    const auto session_id = id_field->get<std::string>();
    const auto now = clock_();
    std::lock_guard lock(mutex_);
    expire_sessions(now);
    const auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        return api_error(404, "session_not_found", "unknown or expired session '" + session_id + "'");
    }
    Session& session = it->second;
    session.last_used = now;
    const auto current = next_candidate(session.result, session.rejected);
    if (*verdict_field == "accept") {
        nlohmann::ordered_json body{{"session_id", session_id}, {"status", "confirmed"}};
        if (current) {
            body["candidate"] = candidate_json(session.result.ranked[*current]);
            body["rank"] = *current + 1;
        }
        sessions_.erase(it);
        return {200, std::move(body)};
    }
    if (current) {
        session.rejected.insert(*current);
    }
    const auto next = next_candidate(session.result, session.rejected);
    if (!next) {
        sessions_.erase(it);
        return {200, {{"session_id", session_id}, {"status", "exhausted"}}};
    }
    return {200,
            {{"session_id", session_id},
             {"status", "candidate"},
             {"candidate", candidate_json(session.result.ranked[*next])},
             {"rank", *next + 1}}};
}

ApiResponse GroundingService::handle(std::string_view method, std::string_view path,
                                     std::string_view body) {
    auto parse_body = [&](nlohmann::json& out) {
        try {
            out = nlohmann::json::parse(body);
            return true;
        } catch (const nlohmann::json::exception&) {
            return false;
        }
    };
    constexpr std::string_view scenes_prefix = "/api/scenes/";
    if (method == "GET" && path == "/api/health") {
        return health();
    }
    if (method == "GET" && path == "/api/scenes") {
        return list_scenes();
    }
    if (method == "GET" && path.starts_with(scenes_prefix) && path.size() > scenes_prefix.size()) {
        return get_scene(path.substr(scenes_prefix.size()));
    }
    if (method == "POST" && (path == "/api/ground" || path == "/api/feedback")) {
        nlohmann::json request;
        if (!parse_body(request)) {
            return api_error(400, "bad_request", "request body is not valid JSON");
        }
        return path == "/api/ground" ? ground(request) : feedback(request);
    }
    return api_error(404, "not_found", "no route for " + std::string(method) + " " + std::string(path));
}

std::size_t GroundingService::session_count() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

void GroundingService::expire_sessions(std::chrono::steady_clock::time_point now) {
    std::erase_if(sessions_, [&](const auto& entry) {
        return now - entry.second.last_used > config_.session_timeout;
    });
}

std::string GroundingService::new_session_id() {
    std::string id;
    do {
        char buffer[17];
        std::snprintf(buffer, sizeof buffer, "%016llx",
                      static_cast<unsigned long long>(id_rng_()));
        id = buffer;
    } while (sessions_.contains(id));
    return id;
}

struct ApiServer::Impl {
    GroundingService& service;
    httplib::Server server;
    std::thread worker;

    explicit Impl(GroundingService& s) : service(s) {}
};

ApiServer::ApiServer(GroundingService& service, std::string static_dir)
    : impl_(std::make_unique<Impl>(service)) {
    auto& server = impl_->server;
    auto reply = [](httplib::Response& res, const ApiResponse& response) {
        res.status = response.status;
        res.set_content(response.body.dump(), "application/json");
    };
    auto route = [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, impl_->service.handle(req.method, req.path, req.body));
    };
    server.Get("/api/health", route);
    server.Get("/api/scenes", route);
    server.Get(R"(/api/scenes/([^/]+))", route);
    server.Post("/api/ground", route);
    server.Post("/api/feedback", route);
    if (!static_dir.empty() && !server.set_mount_point("/", static_dir)) {
        throw std::runtime_error("static asset directory not found: " + static_dir);
    }
    server.set_error_handler([reply](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty()) {
            reply(res, api_error(res.status, res.status == 404 ? "not_found" : "http_error",
                                 "request failed: " + req.method + " " + req.path));
        }
    });
    server.set_exception_handler(
        [reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string message = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& error) {
                message = error.what();
            } catch (...) {
            }
            reply(res, api_error(500, "internal_error", message));
        });
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start(const std::string& host, int port) {
    auto& server = impl_->server;
    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    impl_->worker = std::thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();
    return bound;
}

void ApiServer::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) {
        throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    }
}

void ApiServer::stop() {
    if (!impl_) {
        return;
    }
    impl_->server.stop();
    if (impl_->worker.joinable()) {
        impl_->worker.join();
    }
}

}  // namespace refground
