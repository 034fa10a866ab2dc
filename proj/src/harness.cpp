#include "ans/harness.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace ans::harness {
namespace {

using SteadyClock = std::chrono::steady_clock;

constexpr std::array<const char*, 10> kCapabilities = {
    "concept-drift-detection", "sentiment-analysis", "translation",    "summarization",
    "code-review",             "image-tagging",      "fraud-scoring",  "route-planning",
    "anomaly-detection",       "speech-to-text"};
constexpr std::array<const char*, 5> kProviders = {"acme", "globex", "initech", "umbrella", "hooli"};
constexpr std::array<Protocol, 3> kProtocols = {Protocol::A2a, Protocol::Mcp, Protocol::Acp};
constexpr std::array<const char*, 2> kEnvironments = {"prod", "staging"};

double ms_since(SteadyClock::time_point start) {
    return std::chrono::duration<double, std::milli>(SteadyClock::now() - start).count();
}

class TempDir {
public:
    explicit TempDir(std::string_view tag) {
        path_ = std::filesystem::temp_directory_path() /
                (std::string(tag) + "-" + std::to_string(crypto::random_u64()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

AnsName agent_name(int i, int version_minor = 0, std::string_view env = {}) {
    char id[32];
    std::snprintf(id, sizeof id, "agent-%02d", i);
    std::string extension = env.empty() ? kEnvironments[static_cast<std::size_t>(i) % 2] : std::string(env);
    return AnsName{kProtocols[static_cast<std::size_t>(i) % kProtocols.size()],
                   Label::parse(id),
                   Label::parse(kCapabilities[static_cast<std::size_t>(i) % kCapabilities.size()]),
                   Label::parse(kProviders[static_cast<std::size_t>(i) % kProviders.size()]),
                   Version{1, static_cast<std::uint64_t>(version_minor), std::nullopt},
                   Label::parse(extension)};
}

Label namespace_label(int i, int n_namespaces) {
    return Label::parse("ns-" + std::to_string(i % n_namespaces));
}

std::string endpoint_for(const AnsName& name) {
    return "http://" + name.agent_id.str() + ".local:8443/" + std::string(to_string(name.protocol));
}

PolicySetPtr shared(PolicySet p) { return std::make_shared<const PolicySet>(std::move(p)); }

class ScheduleStream {
public:
    ScheduleStream(const BenchConfig& c, int agent)
        : rng_(c.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(agent + 1))),
          think_(1.0 / c.think_ms_mean),
          cap_ms_(c.think_ms_mean * 10.0) {}

    PlannedOp next() {
        double u = unit_(rng_);
        PlannedOp op;
        op.kind = u < 0.75 ? WorkKind::Resolve
                  : u < 0.90 ? WorkKind::Attest
                  : u < 0.99 ? WorkKind::Renew
                             : WorkKind::Reregister;
        op.think_ms = std::min(think_(rng_), cap_ms_);
        op.query = static_cast<std::uint32_t>(rng_());
        return op;
    }

private:
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::exponential_distribution<double> think_;
    double cap_ms_;
};

std::multimap<std::string, std::string> bench_query(std::uint32_t q, int n_agents) {
    std::multimap<std::string, std::string> p;
    std::uint32_t pick = q >> 2;
    switch (q & 3u) {
        case 0:
            p.emplace("capability", kCapabilities[pick % kCapabilities.size()]);
            break;
        case 1:
            p.emplace("capability", kCapabilities[pick % kCapabilities.size()]);
            p.emplace("version", "latest");
            break;
        case 2:
            p.emplace("provider", kProviders[pick % kProviders.size()]);
            p.emplace("env", kEnvironments[pick % kEnvironments.size()]);
            break;
        default: {
            char id[32];
            std::snprintf(id, sizeof id, "agent-%02u", pick % static_cast<std::uint32_t>(n_agents));
            p.emplace("agent", id);
            p.emplace("version", ">=1.0");
        }
    }
    return p;
}

struct AgentSamples {
    std::vector<double> registration, discovery, attestation;
    std::uint64_t errors = 0;
    std::vector<std::string> error_samples;
};

}  // namespace

void validate(const BenchConfig& c) {
    if (c.n_namespaces < 1 || c.n_agents < c.n_namespaces) {
        throw Error(ErrorCode::Malformed, "need n_agents >= n_namespaces >= 1");
    }
    if (c.duration_seconds < 1 || c.warmup_seconds < 0 || c.think_ms_mean <= 0.0) {
        throw Error(ErrorCode::Malformed, "duration must be positive and warmup non-negative");
    }
}

std::string_view to_string(WorkKind k) noexcept {
    switch (k) {
        case WorkKind::Resolve: return "resolve";
        case WorkKind::Attest: return "attest";
        case WorkKind::Renew: return "renew";
        case WorkKind::Reregister: return "reregister";
    }
    return "resolve";
}

std::vector<PlannedOp> workload_schedule(const BenchConfig& c, int agent, std::size_t count) {
    ScheduleStream s(c, agent);
    std::vector<PlannedOp> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(s.next());
    return out;
}

OpStats summarize(std::vector<double> samples) {
    OpStats s;
    if (samples.empty()) return s;
    std::sort(samples.begin(), samples.end());
    s.count = samples.size();
    s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    s.p50_ms = percentile(samples, 0.50);
    s.p95_ms = percentile(samples, 0.95);
    s.p99_ms = percentile(samples, 0.99);
    s.max_ms = samples.back();
    return s;
}

PolicySet benchmark_policies() {
    Json doc = {
        {"policies",
         Json::array(
             {{{"id", "baseline"},
               {"description", "environment and capability guard rails"},
               {"rules",
                Json::array(
                    {{{"id", "allow-known-environments"},
                      {"effect", "allow"},
                      {"match", Json::object()},
                      {"conditions",
                       {{"allowed_environments", {"prod", "staging"}},
                        {"max_cert_validity_seconds", 90 * 86'400}}}},
                     {{"id", "deny-dev"}, {"effect", "deny"}, {"match", {{"environment", "dev"}}}},
                     {{"id", "deny-exfiltration"},
                      {"effect", "deny"},
                      {"match", {{"capability", "*-exfiltration"}}}},
                     {{"id", "deny-shell"},
                      {"effect", "deny"},
                      {"match", Json::object()},
                      {"conditions", {{"capability_denylist", {"shell-*", "root-*"}}}}}})}},
              {{"id", "providers"},
               {"description", "provider allow list"},
               {"rules",
                Json::array(
                    {{{"id", "allow-acme"}, {"effect", "allow"}, {"match", {{"provider", "acme"}}}},
                     {{"id", "allow-globex"}, {"effect", "allow"}, {"match", {{"provider", "globex"}}}},
                     {{"id", "deny-blocked"}, {"effect", "deny"}, {"match", {{"provider", "blocked-corp"}}}},
                     {{"id", "allow-mcp-listed"},
                      {"effect", "allow"},
                      {"match", {{"protocol", "mcp"}}},
                      {"conditions",
                       {{"provider_allowlist", {"acme", "globex", "initech", "umbrella", "hooli"}}}}}})}},
              {{"id", "resources"},
               {"description", "admission resource ceilings"},
               {"rules",
                Json::array({{{"id", "cpu-ceiling"},
                              {"effect", "deny"},
                              {"match", Json::object()},
                              {"conditions", {{"max_cpu_millicores", 4'000}}}},
                             {{"id", "memory-ceiling"},
                              {"effect", "deny"},
                              {"match", Json::object()},
                              {"conditions", {{"max_memory_mebibytes", 8'192}}}}})}}})}};
    return load_policies(doc.dump());
}

PolicySet demo_policies() {
    Json doc = {
        {"policies",
         Json::array({{{"id", "demo-baseline"},
                       {"description", "prod and staging agents only"},
                       {"rules",
                        Json::array({{{"id", "allow-prod-staging"},
                                      {"effect", "allow"},
                                      {"match", Json::object()},
                                      {"conditions", {{"allowed_environments", {"prod", "staging"}}}}},
                                     {{"id", "deny-dev-environment"},
                                      {"effect", "deny"},
                                      {"match", {{"environment", "dev"}}}}})}}})}};
    return load_policies(doc.dump());
}

AgentManifest manifest_for_identity(const AgentIdentity& id, const std::string& namespace_) {
    AgentManifest m;
    m.name = id.name.agent_id.str();
    m.namespace_ = namespace_;
    m.ans_name = format_name(id.name);
    for (const auto& c : id.chain.agent.capability_commitments) m.capabilities.push_back(c.capability.str());
    m.provider = id.name.provider.str();
    m.version = format_version(id.name.version);
    m.environment = id.name.extension.str();
    m.certificate_issuer = id.chain.intermediate.subject_did.str();
    m.certificate_validity =
        std::to_string((id.chain.agent.not_after - id.chain.agent.not_before) / 86'400) + "d";
    m.chain = id.chain;
    return m;
}

// ---------------------------------------------------------------------------
// Latency benchmark

BenchReport run_benchmark(const BenchConfig& config) {
    validate(config);
    TempDir dir("ans-bench");
    UnixSeconds t0 = system_now();
    CertificateAuthority ca = CertificateAuthority::create(t0 - 3'600);

    ServerConfig sc;
    sc.listen = "127.0.0.1:0";
    sc.log_path = dir.path() / "events.log";
    sc.snapshot_path = dir.path() / "snapshot.json";
    sc.anchors = ca.anchors();
    sc.policies = shared(benchmark_policies());
    sc.worker_threads = static_cast<std::size_t>(config.n_agents) + 16;
    Server server(sc);
    server.start();
    std::string url = server.base_url();

    std::vector<AgentSamples> samples(static_cast<std::size_t>(config.n_agents));
    auto start = SteadyClock::now();
    auto warm_end = start + std::chrono::seconds(config.warmup_seconds);
    auto end = warm_end + std::chrono::seconds(config.duration_seconds);

    auto agent_task = [&](int i) {
        AgentSamples& out = samples[static_cast<std::size_t>(i)];
        auto fail = [&](const std::string& what) {
            ++out.errors;
            if (out.error_samples.size() < 5) out.error_samples.push_back(what);
        };
        std::mt19937_64 jitter(config.seed + static_cast<std::uint64_t>(i));
        auto stagger_ms = std::uniform_int_distribution<int>(
            0, std::max(1, std::min(2'000, config.warmup_seconds * 500)))(jitter);
        std::this_thread::sleep_for(std::chrono::milliseconds(stagger_ms));

        RegistryClient client(url);
        Label ns = namespace_label(i, config.n_namespaces);
        int minor = 0;
        AgentIdentity id = ca.enroll(agent_name(i, minor), {}, endpoint_for(agent_name(i)), t0 - 60);
        try {
            auto s = SteadyClock::now();
            client.register_with(id, ns);
            out.registration.push_back(ms_since(s));
        } catch (const std::exception& e) {
            fail(std::string("register: ") + e.what());
            return;
        }

        ScheduleStream plan(config, i);
        while (SteadyClock::now() < end) {
            PlannedOp op = plan.next();
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(op.think_ms));
            if (SteadyClock::now() >= end) break;
            bool measured = SteadyClock::now() >= warm_end;
            try {
                switch (op.kind) {
                    case WorkKind::Resolve: {
                        auto params = bench_query(op.query, config.n_agents);
                        auto s = SteadyClock::now();
                        client.discover(params);
                        if (measured) out.discovery.push_back(ms_since(s));
                        break;
                    }
                    case WorkKind::Attest: {
                        auto s = SteadyClock::now();
                        client.prove_capability(id, id.name.capability, system_now());
                        if (measured) out.attestation.push_back(ms_since(s));
                        break;
                    }
                    case WorkKind::Renew:
                        client.renew(id, system_now());
                        break;
                    case WorkKind::Reregister: {
                        AgentIdentity next =
                            ca.enroll(agent_name(i, ++minor), {}, endpoint_for(agent_name(i)), t0 - 60);
                        auto s = SteadyClock::now();
                        client.register_with(next, ns);
                        out.registration.push_back(ms_since(s));
                        client.revoke(format_name(id.name),
                                      sign_revocation(id.identity_keys, format_name(id.name), system_now()));
                        id = std::move(next);
                        break;
                    }
                }
            } catch (const std::exception& e) {
                fail(std::string(to_string(op.kind)) + ": " + e.what());
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(config.n_agents));
    for (int i = 0; i < config.n_agents; ++i) threads.emplace_back(agent_task, i);
    for (auto& t : threads) t.join();

    BenchReport report;
    report.config = config;
    report.wall_seconds = ms_since(start) / 1'000.0;
    std::vector<double> reg, disc, att;
    for (auto& s : samples) {
        reg.insert(reg.end(), s.registration.begin(), s.registration.end());
        disc.insert(disc.end(), s.discovery.begin(), s.discovery.end());
        att.insert(att.end(), s.attestation.begin(), s.attestation.end());
        report.unexpected_errors += s.errors;
        for (auto& e : s.error_samples) {
            if (report.error_samples.size() < 10) report.error_samples.push_back(e);
        }
    }
    auto idx = [](Operation op) { return static_cast<std::size_t>(op); };
    report.ops[idx(Operation::Registration)] = summarize(std::move(reg));
    report.ops[idx(Operation::Discovery)] = summarize(std::move(disc));
    report.ops[idx(Operation::Attestation)] = summarize(std::move(att));
    report.ops[idx(Operation::PolicyEval)] =
        summarize(server.metrics().histogram(Operation::PolicyEval).sorted_samples());
    report.ops[idx(Operation::ChainValidation)] =
        summarize(server.metrics().histogram(Operation::ChainValidation).sorted_samples());
    server.stop();

    report.pass = report.unexpected_errors == 0;
    for (Operation op : kAllOperations) {
        const OpStats& s = report.stats(op);
        bool ok = s.count > 0 && s.p99_ms <= p99_bound(op);
        report.within_bound[idx(op)] = ok;
        report.pass = report.pass && ok;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Throughput

ThroughputReport run_throughput(const ThroughputConfig& config) {
    ThroughputReport report;
    UnixSeconds t0 = system_now();
    CertificateAuthority ca = CertificateAuthority::create(t0 - 3'600);
    PolicySetPtr policies = shared(benchmark_policies());

    {
        TempDir dir("ans-throughput");
        ServerConfig sc;
        sc.listen = "127.0.0.1:0";
        sc.log_path = dir.path() / "events.log";
        sc.anchors = ca.anchors();
        sc.policies = policies;
        sc.worker_threads = static_cast<std::size_t>(config.workers) + 8;
        Server server(sc);
        server.start();

        auto total = static_cast<std::uint64_t>(config.registration_seconds * config.offered_per_second);
        double window_s = std::min(60.0, static_cast<double>(config.registration_seconds));
        auto n_windows = static_cast<std::size_t>(config.registration_seconds / window_s);
        std::vector<std::atomic<std::uint64_t>> windows(n_windows);
        std::atomic<std::uint64_t> next{0}, done{0}, errors{0};
        auto start = SteadyClock::now() + std::chrono::milliseconds(200);

        auto worker = [&] {
            RegistryClient client(server.base_url());
            for (;;) {
                std::uint64_t k = next.fetch_add(1);
                if (k >= total) return;
                auto due = start + std::chrono::duration_cast<SteadyClock::duration>(
                                       std::chrono::duration<double>(static_cast<double>(k) /
                                                                     config.offered_per_second));
                char id[32];
                std::snprintf(id, sizeof id, "load-%07llu", static_cast<unsigned long long>(k));
                AnsName name{kProtocols[k % 3], Label::parse(id),
                             Label::parse(kCapabilities[k % kCapabilities.size()]),
                             Label::parse(kProviders[k % kProviders.size()]), Version{1, 0, std::nullopt},
                             Label::parse("prod")};
                AgentIdentity agent = ca.enroll(name, {}, endpoint_for(name), t0 - 60);
                std::this_thread::sleep_until(due);
                try {
                    client.register_with(agent, namespace_label(static_cast<int>(k % 5), 5));
                    double at = std::chrono::duration<double>(SteadyClock::now() - start).count();
                    auto w = static_cast<std::size_t>(at / window_s);
                    if (w < n_windows) ++windows[w];
                    ++done;
                } catch (const std::exception&) {
                    ++errors;
                }
            }
        };
        std::vector<std::thread> threads;
        for (int w = 0; w < config.workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        server.stop();

        report.registrations_total = done.load();
        report.registration_errors = errors.load();
        double scale = 60.0 / window_s;
        for (auto& w : windows) {
            report.registrations_per_minute.push_back(
                static_cast<std::uint64_t>(std::llround(static_cast<double>(w.load()) * scale)));
        }
        report.min_registrations_per_min =
            report.registrations_per_minute.empty()
                ? 0.0
                : static_cast<double>(*std::min_element(report.registrations_per_minute.begin(),
                                                        report.registrations_per_minute.end()));
        report.registration_floor_met = !report.registrations_per_minute.empty() &&
                                        report.min_registrations_per_min >= 1'000.0 &&
                                        report.registration_errors == 0;
    }

    {
        Registry registry(RegistryOptions{}, ca.anchors(), policies);
        for (std::size_t k = 0; k < config.resolve_records; ++k) {
            char id[32];
            std::snprintf(id, sizeof id, "agent-%04zu", k);
            AnsName name{kProtocols[k % 3], Label::parse(id),
                         Label::parse(kCapabilities[k % kCapabilities.size()]),
                         Label::parse(kProviders[(k / kCapabilities.size()) % kProviders.size()]),
                         Version{1, k % 4, std::nullopt},
                         Label::parse(kEnvironments[k % 2])};
            AgentIdentity agent = ca.enroll(name, {}, endpoint_for(name), t0 - 60);
            registry.register_agent(make_registration_request(agent.identity_keys, agent.chain,
                                                              agent.endpoint,
                                                              namespace_label(static_cast<int>(k), 5)),
                                    t0);
        }
        std::vector<NameQuery> queries;
        for (std::uint32_t q = 0; q < 64; ++q) {
            queries.push_back(query_from_params(bench_query(q * 2'654'435'761u, 50)));
        }
        std::uint64_t n = 0;
        std::size_t sink = 0;
        auto s = SteadyClock::now();
        auto stop = s + std::chrono::duration<double>(config.resolve_seconds);
        while (SteadyClock::now() < stop) {
            for (int b = 0; b < 64; ++b) sink += registry.resolve(queries[n++ % queries.size()], t0).size();
        }
        report.resolves_per_sec = static_cast<double>(n) / (ms_since(s) / 1'000.0);
        report.resolve_floor_met = report.resolves_per_sec >= 10'000.0 && sink > 0;
    }

    {
        AgentManifest m;
        m.name = "agent-00";
        m.namespace_ = "ns-0";
        m.ans_name = "mcp://agent-00.translation.acme.v1.0.prod";
        m.capabilities = {"translation"};
        m.provider = "acme";
        m.version = "1.0";
        m.environment = "prod";
        m.certificate_issuer = "did:ans:issuer";
        m.certificate_validity = "90d";
        PolicySet set = benchmark_policies();
        std::uint64_t n = 0, allowed = 0;
        auto s = SteadyClock::now();
        auto stop = s + std::chrono::duration<double>(config.policy_seconds);
        while (SteadyClock::now() < stop) {
            for (int b = 0; b < 256; ++b, ++n) {
                allowed += evaluate(EvaluationContext{m, Phase::Admission, t0}, set).allowed;
            }
        }
        report.policy_evals_per_sec = static_cast<double>(n) / (ms_since(s) / 1'000.0);
        report.policy_floor_met = report.policy_evals_per_sec >= 100'000.0 && allowed == n;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Security scenarios

namespace {

struct PeerRun {
    std::optional<Session> initiator_session;
    std::optional<Error> initiator_error;
    std::optional<Error> responder_error;
    std::optional<AttestationResult> capability;
    std::optional<CapabilityVerdict> verdict;
};

// One connection: handshake, then optionally one capability request from the
// initiator (prover) to the responder (verifier).
PeerRun run_peers(const AgentIdentity& initiator, const AgentIdentity& responder,
                  std::span<const Certificate> anchors, UnixSeconds now,
                  std::optional<Label> capability = std::nullopt,
                  std::optional<CapabilityProof> substitute = std::nullopt,
                  ChallengeStore* verifier_store = nullptr) {
    auto [ti, tr] = make_loopback_pair();
    PeerRun run;
    ChallengeStore local_store;
    ChallengeStore& store = verifier_store ? *verifier_store : local_store;
    HandshakeOptions opts{anchors, now, std::chrono::milliseconds(2'000)};

    std::thread responder_thread([&] {
        try {
            Session s = handshake_respond(responder, *tr, opts);
            if (capability) run.verdict = serve_capability_request(s, *tr, anchors, store, now, opts.timeout);
        } catch (const Error& e) {
            run.responder_error = e;
        } catch (const std::exception& e) {
            run.responder_error = Error(ErrorCode::Internal, e.what());
        }
    });
    try {
        run.initiator_session = handshake_initiate(initiator, nullptr, *ti, opts);
        if (capability) {
            run.capability = request_capability(*run.initiator_session, *ti, *capability, initiator, now,
                                                substitute, opts.timeout);
        }
    } catch (const Error& e) {
        run.initiator_error = e;
    } catch (const std::exception& e) {
        run.initiator_error = Error(ErrorCode::Internal, e.what());
    }
    responder_thread.join();
    return run;
}

std::string code_of(const std::optional<Error>& e) {
    return e ? std::string(to_string(e->code())) : std::string("none");
}

ScenarioResult finish(std::string id, std::string expected, std::string observed, std::string evidence) {
    bool pass = expected == observed;
    return ScenarioResult{std::move(id), std::move(expected), std::move(observed), pass, std::move(evidence)};
}

template <class F>
ScenarioResult guarded_scenario(const char* id, const char* expected, F body) {
    try {
        return body();
    } catch (const std::exception& e) {
        return ScenarioResult{id, expected, "exception", false, e.what()};
    }
}

std::optional<Error> try_register(Registry& registry, const RegistrationRequest& req, UnixSeconds now) {
    try {
        registry.register_agent(req, now);
        return std::nullopt;
    } catch (const Error& e) {
        return e;
    }
}

}  // namespace

std::vector<ScenarioResult> run_security_suite() {
    UnixSeconds now = system_now();
    CertificateAuthority ca = CertificateAuthority::create(now - 3'600);
    AgentIdentity alice = ca.enroll(parse_name("a2a://alice.translation.acme.v1.0.prod"),
                                    {Label::parse("summarization")}, "http://alice.local:8443", now - 60);
    AgentIdentity bob = ca.enroll(parse_name("a2a://bob.code-review.globex.v2.1.prod"), {},
                                  "http://bob.local:8443", now - 60);
    auto anchors = ca.anchors();
    std::vector<ScenarioResult> results;

    results.push_back(guarded_scenario("S1", "BAD_SIGNATURE", [&] {
        PeerRun control = run_peers(alice, bob, anchors, now);
        AgentIdentity impostor{alice.name, generate_keypair(), alice.chain, {}, alice.endpoint};
        PeerRun attack = run_peers(impostor, bob, anchors, now);
        std::string observed = control.responder_error || control.initiator_error
                                   ? "control handshake failed"
                                   : code_of(attack.responder_error);
        std::string evidence = attack.responder_error
                                   ? std::string(to_string(attack.responder_error->code())) +
                                         (attack.responder_error->detail().find("message 3") != std::string::npos
                                              ? " at handshake message 3"
                                              : ": " + attack.responder_error->detail())
                                   : "impostor was accepted";
        return finish("S1", "BAD_SIGNATURE", observed, evidence);
    }));

    results.push_back(guarded_scenario("S2", "UNKNOWN_CAPABILITY", [&] {
        Label escalated = Label::parse("payment-authorization");
        PeerRun run = run_peers(alice, bob, anchors, now, escalated);
        std::string observed = run.capability && !run.capability->granted && run.capability->reason
                                   ? std::string(to_string(*run.capability->reason))
                                   : run.capability ? "granted" : code_of(run.initiator_error);
        return finish("S2", "UNKNOWN_CAPABILITY", observed,
                      "request for '" + escalated.str() + "' refused: " +
                          (run.capability ? run.capability->message : std::string("no verdict")));
    }));

    results.push_back(guarded_scenario("S3", "CERT_EXPIRED/CERT_EXPIRED", [&] {
        constexpr std::int64_t day = 86'400;
        CertificateAuthority old_ca = CertificateAuthority::create(now - 200 * day);
        AgentIdentity stale = old_ca.enroll(parse_name("mcp://stale.translation.acme.v1.0.prod"), {},
                                            "http://stale.local:8443", now - 100 * day, 90 * day);
        AgentIdentity peer = old_ca.enroll(parse_name("mcp://peer.translation.acme.v1.0.prod"), {},
                                           "http://peer.local:8443", now - 60);
        Registry registry(RegistryOptions{}, old_ca.anchors(), shared(demo_policies()));
        auto reg_err = try_register(
            registry,
            make_registration_request(stale.identity_keys, stale.chain, stale.endpoint, Label::parse("ns-0")),
            now);
        PeerRun run = run_peers(stale, peer, old_ca.anchors(), now);
        std::string observed = code_of(reg_err) + "/" + code_of(run.responder_error);
        return finish("S3", "CERT_EXPIRED/CERT_EXPIRED", observed,
                      "registration: " + (reg_err ? reg_err->detail() : std::string("accepted")) +
                          "; handshake: " +
                          (run.responder_error ? run.responder_error->detail() : std::string("accepted")));
    }));

    results.push_back(guarded_scenario("S4", "NONCE_REPLAY", [&] {
        ChallengeStore verifier_store;
        Label cap = alice.name.capability;
        PeerRun first = run_peers(alice, bob, anchors, now, cap, std::nullopt, &verifier_store);
        if (!first.capability || !first.capability->granted || !first.verdict || !first.verdict->proof) {
            return finish("S4", "NONCE_REPLAY", "first proof not granted", "honest capability check failed");
        }
        PeerRun replay = run_peers(alice, bob, anchors, now, cap, first.verdict->proof, &verifier_store);
        std::string observed = replay.capability && replay.capability->reason
                                   ? std::string(to_string(*replay.capability->reason))
                                   : replay.capability ? "granted" : code_of(replay.initiator_error);
        return finish("S4", "NONCE_REPLAY", observed,
                      "first submission granted; second submission rejected: " +
                          (replay.capability ? replay.capability->message : std::string("no verdict")));
    }));

    results.push_back(guarded_scenario("S5", "POLICY_DENIED", [&] {
        AgentIdentity dev = ca.enroll(parse_name("a2a://devbot.translation.acme.v1.0.dev"), {},
                                      "http://devbot.local:8443", now - 60);
        PolicySet policies = demo_policies();
        Registry registry(RegistryOptions{}, anchors, shared(policies));
        AgentManifest manifest = manifest_for_identity(dev, "ns-0");
        Json admission = admission_decision(manifest, anchors, policies, now);
        auto reg_err = try_register(
            registry, make_registration_request(dev.identity_keys, dev.chain, dev.endpoint, Label::parse("ns-0")),
            now);
        std::string rule = "none";
        for (const auto& m : admission["matched_rules"]) {
            if (m["effect"] == "deny") rule = m["policy"].get<std::string>() + "/" + m["rule"].get<std::string>();
        }
        bool rule_in_explain = reg_err && reg_err->detail().find(rule) != std::string::npos;
        std::string observed = admission["allowed"].get<bool>() ? "admitted"
                               : !rule_in_explain               ? code_of(reg_err) + " without rule"
                                                                : code_of(reg_err);
        return finish("S5", "POLICY_DENIED", observed, "matched deny rule " + rule);
    }));

    results.push_back(guarded_scenario("S6", "CHAIN_INVALID/CHAIN_INVALID", [&] {
        AgentIdentity forged = alice;
        auto [secret, commitment] = create_capability(Label::parse("payment-authorization"));
        forged.chain.agent.capability_commitments.push_back(commitment);
        forged.capabilities.emplace(secret.capability.str(), secret);
        Registry registry(RegistryOptions{}, anchors, shared(demo_policies()));
        auto reg_err = try_register(
            registry,
            make_registration_request(forged.identity_keys, forged.chain, forged.endpoint, Label::parse("ns-0")),
            now);
        PeerRun run = run_peers(forged, bob, anchors, now);
        std::string observed = code_of(reg_err) + "/" + code_of(run.responder_error);
        return finish("S6", "CHAIN_INVALID/CHAIN_INVALID", observed,
                      "agent certificate with an added commitment: " +
                          (reg_err ? reg_err->detail() : std::string("accepted")));
    }));

    return results;
}

// ---------------------------------------------------------------------------
// Demo

namespace {

std::vector<std::multimap<std::string, std::string>> sweep_queries(int n_agents) {
    std::vector<std::multimap<std::string, std::string>> qs;
    for (const char* c : kCapabilities) {
        qs.push_back({{"capability", c}});
        qs.push_back({{"capability", c}, {"version", "latest"}});
    }
    for (const char* p : kProviders) qs.push_back({{"provider", p}});
    for (const char* e : {"prod", "staging", "dev"}) qs.push_back({{"env", e}});
    for (Protocol p : kProtocols) qs.push_back({{"protocol", std::string(to_string(p))}});
    for (int i = 0; i <= n_agents; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "agent-%02d", i);
        qs.push_back({{"agent", id}});
    }
    qs.push_back({{"agent", "rogue"}});
    qs.push_back({{"version", ">=0.0"}});
    return qs;
}

std::vector<std::string> sweep(RegistryClient& client, const std::vector<std::multimap<std::string, std::string>>& qs) {
    std::vector<std::string> out;
    out.reserve(qs.size());
    for (const auto& q : qs) {
        Json arr = Json::array();
        for (const auto& r : client.discover(q)) arr.push_back(to_json(r));
        out.push_back(canonical(arr));
    }
    return out;
}

}  // namespace

DemoReport run_demo(const DemoConfig& config) {
    if (config.n_namespaces < 1 || config.n_agents < std::max(2, config.n_namespaces)) {
        throw Error(ErrorCode::Malformed, "demo needs n_agents >= max(2, n_namespaces) >= 1");
    }
    TempDir dir("ans-demo");
    UnixSeconds now = system_now();
    CertificateAuthority ca = CertificateAuthority::create(now - 3'600);

    ServerConfig sc;
    sc.listen = "127.0.0.1:0";
    sc.log_path = dir.path() / "events.log";
    sc.anchors = ca.anchors();
    sc.policies = shared(demo_policies());
    Server server(sc);
    server.start();
    RegistryClient client(server.base_url());

    const auto n = static_cast<std::size_t>(config.n_agents);
    std::mt19937_64 rng(config.seed);
    std::vector<AgentIdentity> ids;
    std::vector<std::string> namespaces;
    for (int i = 0; i < config.n_agents; ++i) {
        AnsName name = agent_name(i, static_cast<int>(rng() % 3));
        ids.push_back(ca.enroll(name, {}, endpoint_for(name), now - 60));
        namespaces.push_back(namespace_label(i, config.n_namespaces).str());
    }

    DemoReport report;
    report.agents = config.n_agents;
    std::vector<bool> ok(n, true);
    std::vector<std::optional<AgentRecord>> records(n);
    const char* phase_names[] = {"admission", "register", "discover", "handshake", "capability", "renew"};
    std::vector<std::vector<double>> latencies(std::size(phase_names));
    std::vector<std::uint64_t> succeeded(std::size(phase_names), 0);

    auto step = [&](std::size_t phase, std::size_t i, auto&& body) {
        if (!ok[i]) return;
        auto s = SteadyClock::now();
        try {
            body();
            latencies[phase].push_back(ms_since(s));
            ++succeeded[phase];
        } catch (const std::exception& e) {
            ok[i] = false;
            report.failures.push_back(std::string(phase_names[phase]) + " " + format_name(ids[i].name) + ": " +
                                      e.what());
        }
    };

    for (std::size_t i = 0; i < n; ++i) {
        step(0, i, [&] {
            Json d = client.admission(to_json(manifest_for_identity(ids[i], namespaces[i])).dump());
            if (!d["allowed"].get<bool>()) throw std::runtime_error("admission denied: " + d["reasons"].dump());
        });
    }
    for (std::size_t i = 0; i < n; ++i) {
        step(1, i, [&] { records[i] = client.register_with(ids[i], Label::parse(namespaces[i])); });
    }
    for (std::size_t i = 0; i < n; ++i) {
        step(2, i, [&] {
            const AgentIdentity& peer = ids[(i + 1) % n];
            NameQuery q;
            q.capability = peer.name.capability;
            q.agent_id = peer.name.agent_id;
            auto found = client.discover(q);
            bool seen = std::any_of(found.begin(), found.end(),
                                    [&](const AgentRecord& r) { return r.did == peer.chain.agent.subject_did; });
            if (!seen) throw std::runtime_error("peer not discoverable");
        });
    }

    auto anchors = ca.anchors();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = (i + 1) % n;
        if (!ok[i] || !records[j]) {
            ok[i] = false;
            continue;
        }
        TcpListener listener;
        ChallengeStore store;
        std::optional<std::string> responder_failure;
        std::thread responder([&] {
            try {
                auto conn = listener.accept(kHandshakeTimeout);
                Session s = handshake_respond(ids[j], *conn, HandshakeOptions{anchors, now});
                serve_capability_request(s, *conn, anchors, store, now);
            } catch (const std::exception& e) {
                responder_failure = e.what();
            }
        });
        std::unique_ptr<TcpTransport> conn;
        std::optional<Session> session;
        step(3, i, [&] {
            conn = TcpTransport::connect("127.0.0.1", listener.port());
            session = handshake_initiate(ids[i], &*records[j], *conn, HandshakeOptions{anchors, now});
        });
        step(4, i, [&] {
            AttestationResult r = request_capability(*session, *conn, ids[i].name.capability, ids[i], now);
            if (!r.granted) throw std::runtime_error("capability denied: " + r.message);
        });
        if (conn) conn->close();
        responder.join();
        if (responder_failure && ok[i]) {
            ok[i] = false;
            report.failures.push_back("responder " + format_name(ids[j].name) + ": " + *responder_failure);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        step(5, i, [&] { client.renew(ids[i], system_now()); });
    }

    // Injected failure: a dev-environment agent the policy forbids.
    auto queries = sweep_queries(config.n_agents);
    std::vector<std::string> before = sweep(client, queries);
    std::uint64_t seq_before = server.registry().last_seq();
    AgentIdentity rogue = ca.enroll(parse_name("a2a://rogue.translation.acme.v1.0.dev"), {},
                                    "http://rogue.local:8443", now - 60);
    try {
        Json d = client.admission(to_json(manifest_for_identity(rogue, "ns-0")).dump());
        report.invalid_manifest_rejected = !d["allowed"].get<bool>();
    } catch (const std::exception&) {
        report.invalid_manifest_rejected = true;
    }
    try {
        client.register_with(rogue, Label::parse("ns-0"));
    } catch (const ApiError& e) {
        report.invalid_registration_rejected = e.code() == ErrorCode::PolicyDenied;
    }
    std::vector<std::string> after = sweep(client, queries);
    report.rollback_queries = queries.size();
    report.rollback_state_equal = before == after && server.registry().last_seq() == seq_before;

    server.stop();
    {
        std::ifstream log(*sc.log_path);
        std::string line;
        while (std::getline(log, line)) {
            if (!line.empty()) report.event_kinds.push_back(Json::parse(line)["kind"].get<std::string>());
        }
    }

    for (std::size_t p = 0; p < std::size(phase_names); ++p) {
        report.phases.push_back({phase_names[p], succeeded[p], summarize(latencies[p])});
    }
    report.succeeded = static_cast<int>(std::count(ok.begin(), ok.end(), true));
    report.success_rate = static_cast<double>(report.succeeded) / static_cast<double>(config.n_agents);
    report.pass = report.succeeded == config.n_agents && report.invalid_manifest_rejected &&
                  report.invalid_registration_rejected && report.rollback_state_equal;
    return report;
}

// ---------------------------------------------------------------------------
// Reports

Json to_json(const BenchConfig& c) {
    return Json{{"agents", c.n_agents},         {"namespaces", c.n_namespaces},
                {"duration_seconds", c.duration_seconds}, {"warmup_seconds", c.warmup_seconds},
                {"seed", c.seed},                {"think_ms_mean", c.think_ms_mean}};
}

Json to_json(const OpStats& s) {
    return Json{{"count", s.count}, {"mean_ms", s.mean_ms}, {"p50_ms", s.p50_ms},
                {"p95_ms", s.p95_ms}, {"p99_ms", s.p99_ms}, {"max_ms", s.max_ms}};
}

Json to_json(const BenchReport& r) {
    Json ops = Json::object();
    for (Operation op : kAllOperations) {
        Json j = to_json(r.stats(op));
        j["p99_bound_ms"] = p99_bound(op);
        j["pass"] = r.within_bound[static_cast<std::size_t>(op)];
        ops[std::string(to_string(op))] = j;
    }
    return Json{{"config", to_json(r.config)},
                {"operations", ops},
                {"unexpected_errors", r.unexpected_errors},
                {"error_samples", r.error_samples},
                {"wall_seconds", r.wall_seconds},
                {"pass", r.pass},
                {"environment", environment_descriptor()}};
}

Json to_json(const ThroughputReport& r) {
    return Json{{"registrations_per_minute", r.registrations_per_minute},
                {"registrations_total", r.registrations_total},
                {"registration_errors", r.registration_errors},
                {"min_registrations_per_min", r.min_registrations_per_min},
                {"resolves_per_sec", r.resolves_per_sec},
                {"policy_evals_per_sec", r.policy_evals_per_sec},
                {"registration_floor_met", r.registration_floor_met},
                {"resolve_floor_met", r.resolve_floor_met},
                {"policy_floor_met", r.policy_floor_met}};
}

Json to_json(const ScenarioResult& r) {
    return Json{{"id", r.id}, {"expected", r.expected}, {"observed", r.observed},
                {"pass", r.pass}, {"evidence", r.evidence}};
}

Json to_json(const DemoReport& r) {
    Json phases = Json::array();
    for (const auto& p : r.phases) {
        phases.push_back(Json{{"phase", p.phase}, {"succeeded", p.succeeded}, {"latency", to_json(p.latency)}});
    }
    return Json{{"agents", r.agents},
                {"succeeded", r.succeeded},
                {"success_rate", r.success_rate},
                {"invalid_manifest_rejected", r.invalid_manifest_rejected},
                {"invalid_registration_rejected", r.invalid_registration_rejected},
                {"rollback_state_equal", r.rollback_state_equal},
                {"rollback_queries", r.rollback_queries},
                {"phases", phases},
                {"event_kinds", r.event_kinds},
                {"failures", r.failures},
                {"pass", r.pass}};
}

Json environment_descriptor() {
    utsname u{};
    ::uname(&u);
    return Json{{"hardware_concurrency", std::thread::hardware_concurrency()},
                {"os", std::string(u.sysname) + " " + u.release},
                {"machine", u.machine},
                {"compiler", __VERSION__}};
}

}  // namespace ans::harness
