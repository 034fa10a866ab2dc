#include <doctest.h>

#include <set>

#include "ans/harness.hpp"
#include "support.hpp"

using namespace ans;
using namespace ans::harness;

TEST_CASE("config validation") {
    CHECK_NOTHROW(validate(BenchConfig{}));
    BenchConfig few;
    few.n_agents = 3;
    few.n_namespaces = 5;
    CHECK_THROWS_AS(validate(few), Error);
    BenchConfig none;
    none.n_namespaces = 0;
    CHECK_THROWS_AS(validate(none), Error);
    BenchConfig zero;
    zero.duration_seconds = 0;
    CHECK_THROWS_AS(validate(zero), Error);
}

TEST_CASE("workload schedules are seeded") {
    BenchConfig c;
    auto a = workload_schedule(c, 7, 2'000);
    CHECK(a == workload_schedule(c, 7, 2'000));
    CHECK(a != workload_schedule(c, 8, 2'000));
    BenchConfig other = c;
    other.seed = 43;
    CHECK(a != workload_schedule(other, 7, 2'000));
    CHECK(std::vector<PlannedOp>(a.begin(), a.begin() + 100) == workload_schedule(c, 7, 100));

    std::map<WorkKind, int> mix;
    double think = 0;
    for (const auto& op : a) {
        ++mix[op.kind];
        think += op.think_ms;
        CHECK(op.think_ms >= 0);
    }
    CHECK(mix[WorkKind::Resolve] > mix[WorkKind::Attest]);
    CHECK(mix[WorkKind::Attest] > mix[WorkKind::Renew]);
    CHECK(mix[WorkKind::Renew] > mix[WorkKind::Reregister]);
    CHECK(think / a.size() == doctest::Approx(c.think_ms_mean).epsilon(0.15));
}

TEST_CASE("summaries use nearest rank") {
    std::vector<double> samples;
    for (int i = 100; i >= 1; --i) samples.push_back(i);
    OpStats s = summarize(samples);
    CHECK(s.count == 100);
    CHECK(s.p50_ms == 50);
    CHECK(s.p95_ms == 95);
    CHECK(s.p99_ms == 99);
    CHECK(s.max_ms == 100);
    CHECK(s.mean_ms == doctest::Approx(50.5));
    CHECK(summarize({}).count == 0);
}

TEST_CASE("security scenarios") {
    auto results = run_security_suite();
    REQUIRE(results.size() == 6);
    std::set<std::string> ids;
    for (const auto& r : results) {
        INFO(r.id << ": expected " << r.expected << ", observed " << r.observed << " (" << r.evidence << ")");
        CHECK(r.pass);
        CHECK(r.observed == r.expected);
        CHECK_FALSE(r.evidence.empty());
        ids.insert(r.id);
    }
    CHECK(ids == std::set<std::string>{"S1", "S2", "S3", "S4", "S5", "S6"});
    CHECK(results[4].evidence.find("demo-baseline/deny-dev-environment") != std::string::npos);
    CHECK(results[0].evidence.find("message 3") != std::string::npos);
}

TEST_CASE("short benchmark") {
    BenchConfig c;
    c.n_agents = 6;
    c.n_namespaces = 2;
    c.duration_seconds = 3;
    c.warmup_seconds = 1;
    c.think_ms_mean = 20;
    BenchReport r = run_benchmark(c);
    CHECK(r.unexpected_errors == 0);
    for (Operation op : kAllOperations) {
        INFO(to_string(op));
        CHECK(r.stats(op).count > 0);
        CHECK(r.stats(op).p50_ms <= r.stats(op).p99_ms);
    }
    Json j = to_json(r);
    CHECK(j.contains("environment"));
    CHECK(j["config"]["agents"] == 6);
}

TEST_CASE("demo is reproducible") {
    DemoConfig c;
    c.n_agents = 10;
    c.n_namespaces = 2;
    DemoReport first = run_demo(c);
    INFO(to_json(first).dump(2));
    CHECK(first.pass);
    CHECK(first.agents == 10);
    CHECK(first.succeeded == 10);
    CHECK(first.success_rate == doctest::Approx(1.0));
    CHECK(first.invalid_manifest_rejected);
    CHECK(first.invalid_registration_rejected);
    CHECK(first.rollback_state_equal);
    CHECK(first.rollback_queries > 0);
    CHECK(first.failures.empty());
    std::set<std::string> phases;
    for (const auto& p : first.phases) phases.insert(p.phase);
    CHECK(phases.size() == first.phases.size());
    CHECK(phases.count("register"));
    CHECK(phases.count("handshake"));

    DemoReport second = run_demo(c);
    CHECK(second.pass);
    CHECK(second.event_kinds == first.event_kinds);
}

TEST_CASE("demo policy shape") {
    PolicySet p = demo_policies();
    CHECK_FALSE(p.empty());
    std::size_t rules = 0;
    for (const auto& pol : benchmark_policies()) rules += pol.rules.size();
    CHECK(rules == 10);
    CHECK(benchmark_policies().size() == 3);
}
