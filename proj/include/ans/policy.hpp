#pragma once

// Deny-by-default policy engine with deny-overrides combining.
//
// Policy file (canonical text family):
//
//   {"policies": [{"id": "baseline", "description": "...",
//                  "rules": [{"id": "allow-prod", "effect": "allow",
//                             "match": {"environment": "prod"},
//                             "conditions": {"provider_allowlist": ["research-lab"]}}]}]}
//
// An allow rule grants when its match predicate holds and every applicable
// condition holds. A deny rule fires when its match predicate holds and
// either it has no applicable conditions listed or one of them is violated,
// so conditions on a deny rule read as "deny matching agents outside these
// bounds". Resource conditions apply at admission only.

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ans/manifest.hpp"

namespace ans {

enum class Effect { Allow, Deny };
std::string_view to_string(Effect e) noexcept;

/// `*`-only glob: `*` matches any (possibly empty) run of characters.
bool glob_match(std::string_view pattern, std::string_view text) noexcept;

struct RuleMatch {
    std::optional<Protocol> protocol;
    std::optional<std::string> provider;
    std::optional<std::string> environment;
    std::optional<std::string> capability;  // glob
    std::optional<std::string> namespace_;

    bool empty() const noexcept {
        return !protocol && !provider && !environment && !capability && !namespace_;
    }
};

struct RuleConditions {
    std::optional<std::vector<std::string>> allowed_environments;
    std::optional<std::vector<std::string>> provider_allowlist;
    std::optional<std::vector<std::string>> capability_denylist;  // globs
    std::optional<std::int64_t> max_cert_validity_seconds;
    std::optional<std::int64_t> max_cpu_millicores;
    std::optional<std::int64_t> max_memory_mebibytes;

    bool empty() const noexcept {
        return !allowed_environments && !provider_allowlist && !capability_denylist &&
               !max_cert_validity_seconds && !max_cpu_millicores && !max_memory_mebibytes;
    }
};

struct PolicyRule {
    std::string id;
    Effect effect = Effect::Deny;
    RuleMatch match;
    RuleConditions conditions;
};

struct Policy {
    std::string id;
    std::string description;
    std::vector<PolicyRule> rules;
};

using PolicySet = std::vector<Policy>;
using PolicySetPtr = std::shared_ptr<const PolicySet>;

/// Throws Error(POLICY_PARSE) with line/column for syntax errors and a field
/// path (e.g. policies[0].rules[2].conditions.foo) for schema errors.
PolicySet load_policies(std::string_view document);
Json to_json(const PolicySet& policies);

enum class Phase { Admission, Runtime };

struct EvaluationContext {
    const AgentManifest& manifest;
    Phase phase = Phase::Admission;
    UnixSeconds now = 0;
};

struct MatchedRule {
    std::string policy_id;
    std::string rule_id;
    Effect effect = Effect::Deny;

    friend bool operator==(const MatchedRule&, const MatchedRule&) = default;
};

struct PolicyDecision {
    bool allowed = false;
    std::vector<MatchedRule> matched_rules;
    std::vector<std::string> reasons;

    friend bool operator==(const PolicyDecision&, const PolicyDecision&) = default;
};

Json to_json(const PolicyDecision& d);

/// Deny-overrides with default deny. Policies named in the manifest's
/// `policies` list must additionally be loaded and grant on their own.
PolicyDecision evaluate(const EvaluationContext& ctx, const PolicySet& policies);

/// Stable multi-line rendering of a decision.
std::string explain(const PolicyDecision& decision);

}  // namespace ans
