#pragma once

// Desk-scale evaluation: latency benchmark, throughput floors, security
// scenarios and the scripted 50-agent demo.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ans/client.hpp"
#include "ans/metrics.hpp"
#include "ans/server.hpp"

namespace ans::harness {

struct BenchConfig {
    int n_agents = 50;
    int n_namespaces = 5;
    int duration_seconds = 60;
    int warmup_seconds = 5;
    std::uint64_t seed = 42;
    double think_ms_mean = 100.0;  // per-agent pause between operations
};

/// Throws MALFORMED unless n_agents >= n_namespaces >= 1 and durations are sane.
void validate(const BenchConfig& c);

enum class WorkKind { Resolve, Attest, Renew, Reregister };
std::string_view to_string(WorkKind k) noexcept;

struct PlannedOp {
    WorkKind kind = WorkKind::Resolve;
    double think_ms = 0.0;
    std::uint32_t query = 0;  // selects the resolve query shape and target

    friend bool operator==(const PlannedOp&, const PlannedOp&) = default;
};

/// Seeded, infinite per-agent schedule; returns its first `count` entries.
std::vector<PlannedOp> workload_schedule(const BenchConfig& c, int agent, std::size_t count);

/// Upper bounds on p99 latency per operation, in milliseconds.
inline constexpr std::array<double, kAllOperations.size()> kP99BoundsMs = {156.0, 41.0, 267.0, 12.0, 52.0};
inline double p99_bound(Operation op) { return kP99BoundsMs[static_cast<std::size_t>(op)]; }

struct OpStats {
    std::uint64_t count = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;
};
OpStats summarize(std::vector<double> samples_ms);

struct BenchReport {
    BenchConfig config;
    std::array<OpStats, kAllOperations.size()> ops{};
    std::array<bool, kAllOperations.size()> within_bound{};
    std::uint64_t unexpected_errors = 0;
    std::vector<std::string> error_samples;
    double wall_seconds = 0.0;
    bool pass = false;

    const OpStats& stats(Operation op) const { return ops[static_cast<std::size_t>(op)]; }
};

/// Starts an in-process registry on loopback HTTP and drives n_agents
/// concurrent clients. Registration, discovery and attestation latencies are
/// measured at the client; policy evaluation and chain validation come from
/// the server's own timers.
BenchReport run_benchmark(const BenchConfig& config);

struct ThroughputConfig {
    int registration_seconds = 300;
    double offered_per_second = 30.0;
    int workers = 4;
    double resolve_seconds = 2.0;
    std::size_t resolve_records = 1'000;
    double policy_seconds = 1.0;
    std::uint64_t seed = 42;
};

struct ThroughputReport {
    std::vector<std::uint64_t> registrations_per_minute;  // one per full 60 s window
    std::uint64_t registrations_total = 0;
    std::uint64_t registration_errors = 0;
    double min_registrations_per_min = 0.0;
    double resolves_per_sec = 0.0;
    double policy_evals_per_sec = 0.0;
    bool registration_floor_met = false;  // hard: >= 1,000 / min in every window
    bool resolve_floor_met = false;       // soft: >= 10,000 / s
    bool policy_floor_met = false;        // soft: >= 100,000 / s
};

ThroughputReport run_throughput(const ThroughputConfig& config);

/// Ten rules in three policies; the shape the policy micro-benchmark uses.
PolicySet benchmark_policies();

struct ScenarioResult {
    std::string id;
    std::string expected;
    std::string observed;
    bool pass = false;
    std::string evidence;
};

/// S1 impersonation, S2 escalation, S3 expired certificate, S4 replay,
/// S5 policy violation, S6 tampered chain. Failures are reported, not thrown.
std::vector<ScenarioResult> run_security_suite();

struct DemoConfig {
    int n_agents = 50;
    int n_namespaces = 5;
    std::uint64_t seed = 42;
};

struct PhaseSummary {
    std::string phase;
    std::uint64_t succeeded = 0;
    OpStats latency;
};

struct DemoReport {
    int agents = 0;
    int succeeded = 0;
    double success_rate = 0.0;
    bool invalid_manifest_rejected = false;
    bool invalid_registration_rejected = false;
    bool rollback_state_equal = false;
    std::size_t rollback_queries = 0;
    std::vector<PhaseSummary> phases;
    std::vector<std::string> event_kinds;  // registry log order
    std::vector<std::string> failures;
    bool pass = false;
};

/// Scripted lifecycle per agent: admission → register → discover →
/// handshake ring over TCP → capability check → renew, plus one injected
/// invalid manifest whose rejection must leave every resolve answer unchanged.
DemoReport run_demo(const DemoConfig& config);

/// Admission manifest describing an enrolled identity.
AgentManifest manifest_for_identity(const AgentIdentity& id, const std::string& namespace_);

/// Permissive set used by the demo: allows prod and staging, denies dev.
PolicySet demo_policies();

Json to_json(const BenchConfig& c);
Json to_json(const OpStats& s);
Json to_json(const BenchReport& r);
Json to_json(const ThroughputReport& r);
Json to_json(const ScenarioResult& r);
Json to_json(const DemoReport& r);
Json environment_descriptor();

}  // namespace ans::harness
