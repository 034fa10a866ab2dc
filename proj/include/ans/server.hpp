#pragma once

// HTTP/JSON front end for the registry.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "ans/alerts.hpp"
#include "ans/attestation.hpp"
#include "ans/metrics.hpp"
#include "ans/registry.hpp"

namespace httplib {
class Server;
}

namespace ans {

using Clock = std::function<UnixSeconds()>;
UnixSeconds system_now();

struct ServerConfig {
    std::string listen = "127.0.0.1:8080";  // host:port, port 0 picks a free one
    std::optional<std::filesystem::path> anchors_path;
    std::optional<std::filesystem::path> policy_path;
    std::optional<std::filesystem::path> log_path;
    std::optional<std::filesystem::path> snapshot_path;
    std::int64_t record_ttl = kDefaultRecordTtl;
    std::int64_t challenge_ttl = kDefaultChallengeTtl;
    bool fsync = true;
    std::size_t worker_threads = 96;
    AlertConfig alerts;

    // Used when the corresponding path is unset (embedding, tests).
    std::vector<Certificate> anchors;
    PolicySetPtr policies;
};

/// Reads a JSON config file; unknown keys are rejected (MALFORMED).
ServerConfig load_server_config(const std::filesystem::path& path);
/// ANS_LISTEN, ANS_LOG_PATH, ANS_SNAPSHOT_PATH, ANS_POLICY_PATH, ANS_ANCHORS_PATH.
void apply_env_overrides(ServerConfig& config);

/// Query-string parameters to a NameQuery. Bad protocol → INVALID_PROTOCOL,
/// anything else unparsable or an empty query → INVALID_NAME.
NameQuery query_from_params(const std::multimap<std::string, std::string>& params);

/// Admission pipeline shared by the endpoint and the CLI. Never mutates state.
Json admission_decision(const AgentManifest& manifest, std::span<const Certificate> anchors,
                        const PolicySet& policies, UnixSeconds now, Metrics* metrics = nullptr);

Json error_body(const Error& e);

class Server {
public:
    /// Loads anchors/policies and recovers persisted state. Throws Error
    /// (LOG_CORRUPT, POLICY_PARSE, MALFORMED) on bad startup inputs.
    explicit Server(ServerConfig config, Clock clock = system_now);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and starts serving on a background thread; returns the port.
    int start();
    /// Stops accepting, drains, and writes the snapshot. Idempotent.
    void stop();

    int port() const noexcept { return port_; }
    std::string base_url() const;

    Registry& registry() noexcept { return *registry_; }
    Metrics& metrics() noexcept { return metrics_; }
    UnixSeconds now() const { return clock_(); }

private:
    void install_routes();

    ServerConfig config_;
    Clock clock_;
    Metrics metrics_;
    std::unique_ptr<Registry> registry_;
    ChallengeStore challenges_;
    std::unique_ptr<httplib::Server> http_;
    std::thread thread_;
    int port_ = 0;
    bool stopped_ = false;
};

}  // namespace ans
