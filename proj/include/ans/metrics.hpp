#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ans {

enum class Operation { Registration, Discovery, Attestation, PolicyEval, ChainValidation };
inline constexpr std::array kAllOperations = {Operation::Registration, Operation::Discovery,
                                              Operation::Attestation, Operation::PolicyEval,
                                              Operation::ChainValidation};
std::string_view to_string(Operation op) noexcept;

/// Nearest-rank percentile of an ascending-sorted sample: the smallest value
/// with at least q of the samples at or below it. 0 for an empty sample.
double percentile(std::span<const double> sorted, double q) noexcept;

/// Latency recorder keeping raw samples (milliseconds). Count and sum are
/// exact; beyond `max_samples` the retained set is a uniform reservoir.
class LatencyHistogram {
public:
    explicit LatencyHistogram(std::size_t max_samples = 2'000'000);

    void record(double ms);
    std::uint64_t count() const;
    double sum() const;
    std::vector<double> sorted_samples() const;

private:
    mutable std::mutex mutex_;
    std::size_t max_samples_;
    std::uint64_t count_ = 0;
    double sum_ = 0.0;
    std::vector<double> samples_;
    std::mt19937_64 rng_{0x5eed};
};

struct HistogramSummary {
    std::uint64_t count = 0;
    double sum_ms = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
    double p99 = 0.0;
};

struct MetricsSnapshot {
    std::uint64_t registrations_total = 0;
    std::uint64_t discovery_queries_total = 0;
    std::uint64_t attestations_total = 0;
    std::uint64_t auth_failures_total = 0;
    std::uint64_t policy_violations_total = 0;
    std::array<HistogramSummary, kAllOperations.size()> histograms{};
    std::uint64_t active_agents = 0;
    std::uint64_t certs_expiring_within_30d = 0;

    const HistogramSummary& histogram(Operation op) const {
        return histograms[static_cast<std::size_t>(op)];
    }
};

class Metrics {
public:
    std::atomic<std::uint64_t> registrations_total{0};
    std::atomic<std::uint64_t> discovery_queries_total{0};
    std::atomic<std::uint64_t> attestations_total{0};
    std::atomic<std::uint64_t> auth_failures_total{0};
    std::atomic<std::uint64_t> policy_violations_total{0};

    LatencyHistogram& histogram(Operation op) { return histograms_[static_cast<std::size_t>(op)]; }
    const LatencyHistogram& histogram(Operation op) const {
        return histograms_[static_cast<std::size_t>(op)];
    }

    /// Counters and histogram summaries; gauges are supplied by the caller.
    MetricsSnapshot snapshot(std::uint64_t active_agents, std::uint64_t expiring_certs) const;

private:
    std::array<LatencyHistogram, kAllOperations.size()> histograms_;
};

/// Records wall time into a histogram on destruction; no-op for a null sink.
class ScopedTimer {
public:
    ScopedTimer(Metrics* metrics, Operation op)
        : metrics_(metrics), op_(op), start_(std::chrono::steady_clock::now()) {}
    ~ScopedTimer() {
        if (!metrics_) return;
        std::chrono::duration<double, std::milli> d = std::chrono::steady_clock::now() - start_;
        metrics_->histogram(op_).record(d.count());
    }
    ScopedTimer(const ScopedTimer&) = delete;
    ScopedTimer& operator=(const ScopedTimer&) = delete;

private:
    Metrics* metrics_;
    Operation op_;
    std::chrono::steady_clock::time_point start_;
};

/// Line-oriented text exposition: `<name>{<label>="<value>",...} <number>`.
std::string render_metrics(const MetricsSnapshot& s);

}  // namespace ans
