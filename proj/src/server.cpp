#include "ans/server.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ans {
namespace {

std::string read_file(const std::filesystem::path& path, std::string_view what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Malformed, "cannot read " + std::string(what) + " " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(canonical(body), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
    send_json(res, http_status(e.code()), error_body(e));
}

template <class F>
httplib::Server::Handler guarded(F handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
        try {
            handler(req, res);
        } catch (const Error& e) {
            send_error(res, e);
        } catch (const Json::exception& e) {
            send_error(res, Error(ErrorCode::Malformed, e.what()));
        } catch (const std::exception& e) {
            send_error(res, Error(ErrorCode::Internal, e.what()));
        }
    };
}

crypto::Signature body_signature(const httplib::Request& req) {
    Json body = parse_document(req.body);
    return require_hex<64>(body, "signature");
}

std::pair<std::string, int> split_listen(const std::string& listen) {
    auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::Malformed, "listen must be host:port");
    std::string host = listen.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(listen.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error(ErrorCode::Malformed, "listen port in '" + listen + "' is not a number");
    }
    if (port < 0 || port > 65535) throw Error(ErrorCode::Malformed, "listen port out of range");
    return {host.empty() ? "0.0.0.0" : host, port};
}

}  // namespace

UnixSeconds system_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

ServerConfig load_server_config(const std::filesystem::path& path) {
    Json doc = parse_document(read_file(path, "config"));
    if (!doc.is_object()) throw Error(ErrorCode::Malformed, "config must be an object");
    ServerConfig c;
    for (const auto& [key, value] : doc.items()) {
        if (key == "listen") {
            c.listen = value.get<std::string>();
        } else if (key == "anchors_path") {
            c.anchors_path = value.get<std::string>();
        } else if (key == "policy_path") {
            c.policy_path = value.get<std::string>();
        } else if (key == "log_path") {
            c.log_path = value.get<std::string>();
        } else if (key == "snapshot_path") {
            c.snapshot_path = value.get<std::string>();
        } else if (key == "record_ttl_seconds") {
            c.record_ttl = value.get<std::int64_t>();
        } else if (key == "challenge_ttl_seconds") {
            c.challenge_ttl = value.get<std::int64_t>();
        } else if (key == "fsync") {
            c.fsync = value.get<bool>();
        } else if (key == "worker_threads") {
            c.worker_threads = value.get<std::size_t>();
        } else if (key == "alerts") {
            for (const auto& [ak, av] : value.items()) {
                if (ak == "error_rate_threshold") {
                    c.alerts.error_rate_threshold = av.get<double>();
                } else if (ak == "cert_expiry_warning_seconds") {
                    c.alerts.cert_expiry_warning = av.get<std::int64_t>();
                } else if (ak == "resource_usage_threshold") {
                    c.alerts.resource_usage_threshold = av.get<double>();
                } else {
                    throw Error(ErrorCode::Malformed, "unknown config key 'alerts." + ak + "'");
                }
            }
        } else {
            throw Error(ErrorCode::Malformed, "unknown config key '" + key + "'");
        }
    }
    return c;
}

void apply_env_overrides(ServerConfig& config) {
    auto env = [](const char* name) -> std::optional<std::string> {
        const char* v = std::getenv(name);
        if (!v || !*v) return std::nullopt;
        return std::string(v);
    };
    if (auto v = env("ANS_LISTEN")) config.listen = *v;
    if (auto v = env("ANS_LOG_PATH")) config.log_path = *v;
    if (auto v = env("ANS_SNAPSHOT_PATH")) config.snapshot_path = *v;
    if (auto v = env("ANS_POLICY_PATH")) config.policy_path = *v;
    if (auto v = env("ANS_ANCHORS_PATH")) config.anchors_path = *v;
}

NameQuery query_from_params(const std::multimap<std::string, std::string>& params) {
    NameQuery q;
    for (const auto& [key, value] : params) {
        if (key == "protocol") {
            q.protocol = parse_protocol(value);
            continue;
        }
        try {
            if (key == "capability") {
                q.capability = Label::parse(value);
            } else if (key == "provider") {
                q.provider = Label::parse(value);
            } else if (key == "env") {
                q.extension = Label::parse(value);
            } else if (key == "agent") {
                q.agent_id = Label::parse(value);
            } else if (key == "version") {
                q.version_req = parse_version_req(value);
            } else {
                throw Error(ErrorCode::InvalidName, "unknown query parameter '" + key + "'");
            }
        } catch (const Error& e) {
            if (e.code() == ErrorCode::InvalidName) throw;
            throw Error(ErrorCode::InvalidName, key + ": " + e.detail());
        }
    }
    if (q.empty()) throw Error(ErrorCode::InvalidName, "resolve needs at least one query parameter");
    return q;
}

Json admission_decision(const AgentManifest& manifest, std::span<const Certificate> anchors,
                        const PolicySet& policies, UnixSeconds now, Metrics* metrics) {
    Json reasons = Json::array();
    Json codes = Json::array();
    Json matched = Json::array();

    auto deny = [&](ErrorCode code, const std::string& why) {
        reasons.push_back(std::string(to_string(code)) + ": " + why);
        if (std::find(codes.begin(), codes.end(), to_string(code)) == codes.end()) {
            codes.push_back(to_string(code));
        }
    };

    for (const auto& issue : check_consistency(manifest)) deny(issue.code, issue.message);

    if (codes.empty() && manifest.chain) {
        ScopedTimer timer(metrics, Operation::ChainValidation);
        if (auto err = check_chain(*manifest.chain, anchors, now)) deny(err->code(), err->detail());
    }

    if (codes.empty()) {
        PolicyDecision d = [&] {
            ScopedTimer timer(metrics, Operation::PolicyEval);
            return evaluate(EvaluationContext{manifest, Phase::Admission, now}, policies);
        }();
        Json dj = to_json(d);
        matched = dj["matched_rules"];
        if (d.allowed) {
            reasons = dj["reasons"];
        } else {
            for (const auto& r : d.reasons) reasons.push_back(r);
            codes.push_back(to_string(ErrorCode::PolicyDenied));
        }
    }

    return Json{{"allowed", codes.empty()},
                {"codes", codes},
                {"reasons", reasons},
                {"matched_rules", matched}};
}

Json error_body(const Error& e) {
    if (e.code() == ErrorCode::PolicyDenied) {
        return Json{{"error", to_string(e.code())},
                    {"message", "denied by policy"},
                    {"details", Json{{"explain", e.detail()}}}};
    }
    return Json{{"error", to_string(e.code())}, {"message", e.detail()}};
}

Server::Server(ServerConfig config, Clock clock)
    : config_(std::move(config)),
      clock_(std::move(clock)),
      challenges_(config_.challenge_ttl) {
    std::vector<Certificate> anchors = config_.anchors;
    if (config_.anchors_path) {
        anchors = anchors_from_json(parse_document(read_file(*config_.anchors_path, "anchors")));
    }
    PolicySetPtr policies = config_.policies;
    if (config_.policy_path) {
        policies = std::make_shared<const PolicySet>(
            load_policies(read_file(*config_.policy_path, "policy file")));
    }
    RegistryOptions options;
    options.record_ttl = config_.record_ttl;
    options.log_path = config_.log_path;
    options.snapshot_path = config_.snapshot_path;
    options.fsync = config_.fsync;
    registry_ = std::make_unique<Registry>(options, std::move(anchors), std::move(policies), &metrics_);

    http_ = std::make_unique<httplib::Server>();
    http_->set_tcp_nodelay(true);
    std::size_t threads = config_.worker_threads;
    http_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    install_routes();
}

Server::~Server() { stop(); }

int Server::start() {
    auto [host, port] = split_listen(config_.listen);
    if (port == 0) {
        port_ = http_->bind_to_any_port(host);
    } else {
        port_ = http_->bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw Error(ErrorCode::Internal, "cannot bind " + config_.listen);
    thread_ = std::thread([this] { http_->listen_after_bind(); });
    http_->wait_until_ready();
    return port_;
}

void Server::stop() {
    if (stopped_) return;
    stopped_ = true;
    if (http_) http_->stop();
    if (thread_.joinable()) thread_.join();
    if (registry_) registry_->snapshot();
}

std::string Server::base_url() const {
    auto [host, _] = split_listen(config_.listen);
    if (host == "0.0.0.0") host = "127.0.0.1";
    return "http://" + host + ":" + std::to_string(port_);
}

void Server::install_routes() {
    httplib::Server& s = *http_;

    s.Get("/v1/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ok", "text/plain");
    });

    s.Post("/v1/agents", guarded([this](const httplib::Request& req, httplib::Response& res) {
        ScopedTimer timer(&metrics_, Operation::Registration);
        RegistrationRequest r = registration_request_from_json(parse_document(req.body));
        try {
            AgentRecord rec = registry_->register_agent(r, now());
            ++metrics_.registrations_total;
            send_json(res, 201, to_json(rec));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::PolicyDenied) ++metrics_.policy_violations_total;
            throw;
        }
    }));

    s.Post(R"(/v1/agents/(.+)/renew)",
           guarded([this](const httplib::Request& req, httplib::Response& res) {
               std::string name = req.matches[1];
               AgentRecord rec = registry_->renew(name, body_signature(req), now());
               send_json(res, 200, to_json(rec));
           }));

    s.Delete(R"(/v1/agents/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::string name = req.matches[1];
                 registry_->revoke(name, body_signature(req), now());
                 send_json(res, 200, Json{{"name", name}, {"status", "revoked"}});
             }));

    s.Get("/v1/resolve", guarded([this](const httplib::Request& req, httplib::Response& res) {
              ++metrics_.discovery_queries_total;
              ScopedTimer timer(&metrics_, Operation::Discovery);
              std::multimap<std::string, std::string> params(req.params.begin(), req.params.end());
              NameQuery q = query_from_params(params);
              Json out = Json::array();
              for (const auto& rec : registry_->resolve(q, now())) out.push_back(to_json(rec));
              send_json(res, 200, out);
          }));

    s.Post("/v1/challenge", guarded([this](const httplib::Request& req, httplib::Response& res) {
               Json body = parse_document(req.body);
               AnsName agent = parse_name(require_string(body, "agent"));
               UnixSeconds t = now();
               if (!registry_->find_live(format_name(agent), t)) {
                   throw Error(ErrorCode::UnknownAgent, "no live registration for " + format_name(agent));
               }
               send_json(res, 200, to_json(challenges_.issue(agent, t)));
           }));

    s.Post("/v1/attest", guarded([this](const httplib::Request& req, httplib::Response& res) {
               ScopedTimer timer(&metrics_, Operation::Attestation);
               CapabilityProof proof = proof_from_json(parse_document(req.body));
               ++metrics_.attestations_total;
               UnixSeconds t = now();
               AttestationResult result = [&] {
                   auto rec = registry_->find_live(format_name(proof.agent_name), t);
                   if (!rec) {
                       return AttestationResult::deny(ErrorCode::UnknownAgent,
                                                      "no live registration for " +
                                                          format_name(proof.agent_name));
                   }
                   auto it = std::find_if(rec->commitments.begin(), rec->commitments.end(),
                                          [&](const CapabilityCommitment& c) {
                                              return c.capability == proof.capability;
                                          });
                   if (it == rec->commitments.end()) {
                       return AttestationResult::deny(ErrorCode::CapabilityMismatch,
                                                      "no commitment for '" + proof.capability.str() + "'");
                   }
                   return verify(proof, *it, rec->chain, registry_->anchors(), t, challenges_);
               }();
               if (!result.granted) {
                   ++metrics_.auth_failures_total;
                   throw Error(*result.reason, result.message);
               }
               send_json(res, 200,
                         Json{{"granted", true},
                              {"agent", format_name(proof.agent_name)},
                              {"capability", proof.capability.str()}});
           }));

    s.Post("/v1/admission/validate",
           guarded([this](const httplib::Request& req, httplib::Response& res) {
               AgentManifest m = parse_manifest_text(req.body);
               PolicySetPtr policies = registry_->policies();
               Json decision = admission_decision(m, registry_->anchors(), *policies, now(), &metrics_);
               if (!decision["allowed"].get<bool>()) ++metrics_.policy_violations_total;
               send_json(res, 200, decision);
           }));

    s.Get("/v1/metrics", guarded([this](const httplib::Request&, httplib::Response& res) {
              UnixSeconds t = now();
              MetricsSnapshot snap = metrics_.snapshot(
                  registry_->live_count(t),
                  registry_->expiring_within(config_.alerts.cert_expiry_warning, t));
              std::string text = render_metrics(snap);
              std::vector<AgentRecord> live = registry_->live_records(t);
              for (const Alert& a : evaluate_alerts(snap, live, config_.alerts, t)) {
                  text += "ans_alert{rule=\"" + a.rule_id + "\",severity=\"" + a.severity +
                          "\",subject=\"" + a.subject + "\"} 1\n";
              }
              res.set_content(text, "text/plain");
          }));
}

}  // namespace ans
