#include "ans/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace ans {

std::string_view to_string(Operation op) noexcept {
    switch (op) {
        case Operation::Registration: return "registration";
        case Operation::Discovery: return "discovery";
        case Operation::Attestation: return "attestation";
        case Operation::PolicyEval: return "policy_eval";
        case Operation::ChainValidation: return "chain_validation";
    }
    return "unknown";
}

double percentile(std::span<const double> sorted, double q) noexcept {
    if (sorted.empty()) return 0.0;
    double rank = std::ceil(q * static_cast<double>(sorted.size()));
    std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
    return sorted[std::min(idx, sorted.size() - 1)];
}

LatencyHistogram::LatencyHistogram(std::size_t max_samples) : max_samples_(max_samples) {}

void LatencyHistogram::record(double ms) {
    std::lock_guard lock(mutex_);
    ++count_;
    sum_ += ms;
    if (samples_.size() < max_samples_) {
        samples_.push_back(ms);
        return;
    }
    std::uniform_int_distribution<std::uint64_t> pick(0, count_ - 1);
    if (auto slot = pick(rng_); slot < max_samples_) samples_[slot] = ms;
}

std::uint64_t LatencyHistogram::count() const {
    std::lock_guard lock(mutex_);
    return count_;
}

double LatencyHistogram::sum() const {
    std::lock_guard lock(mutex_);
    return sum_;
}

std::vector<double> LatencyHistogram::sorted_samples() const {
    std::vector<double> copy;
    {
        std::lock_guard lock(mutex_);
        copy = samples_;
    }
    std::sort(copy.begin(), copy.end());
    return copy;
}

MetricsSnapshot Metrics::snapshot(std::uint64_t active_agents, std::uint64_t expiring_certs) const {
    MetricsSnapshot s;
    s.registrations_total = registrations_total.load();
    s.discovery_queries_total = discovery_queries_total.load();
    s.attestations_total = attestations_total.load();
    s.auth_failures_total = auth_failures_total.load();
    s.policy_violations_total = policy_violations_total.load();
    for (Operation op : kAllOperations) {
        const LatencyHistogram& h = histogram(op);
        HistogramSummary& out = s.histograms[static_cast<std::size_t>(op)];
        std::vector<double> sorted = h.sorted_samples();
        out.count = h.count();
        out.sum_ms = h.sum();
        out.p50 = percentile(sorted, 0.50);
        out.p95 = percentile(sorted, 0.95);
        out.p99 = percentile(sorted, 0.99);
    }
    s.active_agents = active_agents;
    s.certs_expiring_within_30d = expiring_certs;
    return s;
}

namespace {

std::string number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

std::string render_metrics(const MetricsSnapshot& s) {
    std::string out;
    auto line = [&](std::string_view name, std::string_view labels, const std::string& value) {
        out += name;
        if (!labels.empty()) {
            out += '{';
            out += labels;
            out += '}';
        }
        out += ' ';
        out += value;
        out += '\n';
    };
    line("ans_registrations_total", "", std::to_string(s.registrations_total));
    line("ans_discovery_queries_total", "", std::to_string(s.discovery_queries_total));
    line("ans_attestations_total", "", std::to_string(s.attestations_total));
    line("ans_auth_failures_total", "", std::to_string(s.auth_failures_total));
    line("ans_policy_violations_total", "", std::to_string(s.policy_violations_total));
    for (Operation op : kAllOperations) {
        const HistogramSummary& h = s.histogram(op);
        std::string op_label = "operation=\"" + std::string(to_string(op)) + "\"";
        line("ans_operation_latency_ms", op_label + ",quantile=\"0.5\"", number(h.p50));
        line("ans_operation_latency_ms", op_label + ",quantile=\"0.95\"", number(h.p95));
        line("ans_operation_latency_ms", op_label + ",quantile=\"0.99\"", number(h.p99));
        line("ans_operation_latency_ms_sum", op_label, number(h.sum_ms));
        line("ans_operation_latency_ms_count", op_label, std::to_string(h.count));
    }
    line("ans_active_agents", "", std::to_string(s.active_agents));
    line("ans_certs_expiring_within_30d", "", std::to_string(s.certs_expiring_within_30d));
    return out;
}

}  // namespace ans
