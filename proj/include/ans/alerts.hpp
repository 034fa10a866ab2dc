#pragma once

#include <span>
#include <string>
#include <vector>

#include "ans/metrics.hpp"
#include "ans/registry.hpp"

namespace ans {

struct AlertConfig {
    double error_rate_threshold = 0.05;
    std::int64_t cert_expiry_warning = 30 * 86'400;
    // Accepted for configuration compatibility; no resource usage feed exists.
    double resource_usage_threshold = 0.80;
};

struct Alert {
    std::string rule_id;
    std::string severity;
    std::string subject;
    std::string message;

    friend bool operator==(const Alert&, const Alert&) = default;
};

Json to_json(const Alert& a);

/// Pure function of its inputs; result sorted by (rule_id, subject).
std::vector<Alert> evaluate_alerts(const MetricsSnapshot& snapshot,
                                   std::span<const AgentRecord> records,
                                   const AlertConfig& config, UnixSeconds now);

}  // namespace ans
