#include "ans/alerts.hpp"

#include <algorithm>
#include <cstdio>

namespace ans {

Json to_json(const Alert& a) {
    return Json{{"rule", a.rule_id}, {"severity", a.severity}, {"subject", a.subject},
                {"message", a.message}};
}

std::vector<Alert> evaluate_alerts(const MetricsSnapshot& snapshot,
                                   std::span<const AgentRecord> records,
                                   const AlertConfig& config, UnixSeconds now) {
    std::vector<Alert> alerts;

    double attempts = static_cast<double>(std::max<std::uint64_t>(snapshot.attestations_total, 1));
    double rate = static_cast<double>(snapshot.auth_failures_total) / attempts;
    if (rate > config.error_rate_threshold) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "authentication failure rate %.2f%% exceeds %.2f%%",
                      rate * 100.0, config.error_rate_threshold * 100.0);
        alerts.push_back({"error_rate", "critical", "attestation", buf});
    }

    for (const AgentRecord& r : records) {
        if (!r.live(now)) continue;
        std::int64_t left = remaining_validity(r.chain.agent, now);
        if (left >= config.cert_expiry_warning) continue;
        std::string msg = left <= 0 ? "agent certificate has expired"
                                    : "agent certificate expires in " + std::to_string(left / 86'400) +
                                          "d " + std::to_string((left % 86'400) / 3'600) + "h";
        alerts.push_back({"cert_expiry", left <= 0 ? "critical" : "warning", format_name(r.name), msg});
    }

    std::sort(alerts.begin(), alerts.end(), [](const Alert& a, const Alert& b) {
        return std::tie(a.rule_id, a.subject) < std::tie(b.rule_id, b.subject);
    });
    return alerts;
}

}  // namespace ans
