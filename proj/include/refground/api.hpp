#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "refground/pipeline.hpp"
#include "refground/scene.hpp"

namespace refground {

struct ApiResponse {
    int status = 200;
    nlohmann::ordered_json body;
};

struct ApiConfig {
    std::chrono::steady_clock::duration session_timeout = std::chrono::minutes(30);
    ProposalMode proposals = ProposalMode::ground_truth;
};

/// Scene catalogue plus the accept/reject correction loop over grounding
/// results. Handlers are safe to call from concurrent request threads.
class GroundingService {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    GroundingService(std::shared_ptr<const GroundingEngine> engine, std::vector<AnnotatedScene> scenes,
                     ApiConfig config = {}, Clock clock = {});

    ApiResponse health() const;
    ApiResponse list_scenes() const;
    ApiResponse get_scene(std::string_view scene_id) const;
    ApiResponse ground(const nlohmann::json& request);
    ApiResponse feedback(const nlohmann::json& request);

    /// Routes a request the way the HTTP server does; used by tests too.
    ApiResponse handle(std::string_view method, std::string_view path, std::string_view body);

    std::size_t session_count() const;

private:
    struct Session {
        std::string scene_id;
        GroundingResult result;
        std::set<std::size_t> rejected;
        std::chrono::steady_clock::time_point created_at;
        std::chrono::steady_clock::time_point last_used;
    };

    void expire_sessions(std::chrono::steady_clock::time_point now);
    std::string new_session_id();

    std::shared_ptr<const GroundingEngine> engine_;
    std::map<std::string, AnnotatedScene, std::less<>> scenes_;
    ApiConfig config_;
    Clock clock_;
    mutable std::mutex mutex_;
    std::map<std::string, Session, std::less<>> sessions_;
    std::mt19937_64 id_rng_;
};

ApiResponse api_error(int status, std::string code, std::string message);

/// HTTP front end. start() binds (port 0 picks a free port) and serves on a
/// background thread; stop() joins it.
class ApiServer {
public:
    ApiServer(GroundingService& service, std::string static_dir = {});
    ~ApiServer();
    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    int start(const std::string& host, int port);
    /// Blocks until the server stops.
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace refground
