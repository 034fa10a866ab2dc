#pragma once

// Agent manifest accepted by admission validation:
//
//   apiVersion: ans.io/v1
//   kind: Agent
//   metadata: {name, namespace}
//   spec: {ansName, capabilities, provider, version, environment,
//          certificate: {issuer, validity, chain?}, policies, resources?}

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ans/identity.hpp"

namespace ans {

/// "<n>d", "<n>h", "<n>m" or "<n>s" to seconds. Throws Error(MALFORMED).
std::int64_t parse_duration(std::string_view text);

struct ResourceRequest {
    std::optional<std::int64_t> cpu_millicores;
    std::optional<std::int64_t> memory_mebibytes;

    friend bool operator==(const ResourceRequest&, const ResourceRequest&) = default;
};

/// "500m" / "2" (cores) to millicores; "512Mi" / "2Gi" to MiB. Throws MALFORMED.
std::int64_t parse_cpu_quantity(std::string_view text);
std::int64_t parse_memory_quantity(std::string_view text);

struct AgentManifest {
    std::string api_version = "ans.io/v1";
    std::string kind = "Agent";
    std::string name;
    std::string namespace_;
    std::string ans_name;
    std::vector<std::string> capabilities;
    std::string provider;
    std::string version;
    std::string environment;
    std::string certificate_issuer;
    std::string certificate_validity = "90d";
    std::optional<CertificateChain> chain;
    std::vector<std::string> policies;
    ResourceRequest resources;

    friend bool operator==(const AgentManifest&, const AgentManifest&) = default;
};

/// Schema check; throws Error(MALFORMED) naming the offending field.
AgentManifest manifest_from_json(const Json& doc);
Json to_json(const AgentManifest& m);

/// Accepts JSON or a YAML document of the same shape (detected by the first
/// non-blank character). YAML scalars are read as strings.
AgentManifest parse_manifest_text(std::string_view text);
Json yaml_to_json(std::string_view text);

struct ManifestIssue {
    ErrorCode code;
    std::string message;
};

/// Name/spec consistency: ansName parses, its capability is listed, provider,
/// version and environment agree with the spec fields. Empty when consistent.
std::vector<ManifestIssue> check_consistency(const AgentManifest& m);

}  // namespace ans
