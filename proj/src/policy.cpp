#include "ans/policy.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace ans {
namespace {

Error parse_error(const std::string& path, const std::string& why) {
    return Error(ErrorCode::PolicyParse, path + ": " + why);
}

void check_keys(const Json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw parse_error(path, "expected an object");
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw parse_error(path + "." + key, "unknown key");
        }
    }
}

std::string get_string(const Json& obj, const std::string& path, std::string_view key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw parse_error(path, "missing '" + std::string(key) + "'");
    if (!it->is_string()) throw parse_error(path + "." + std::string(key), "expected a string");
    return it->get<std::string>();
}

std::optional<std::string> opt_string(const Json& obj, const std::string& path, std::string_view key) {
    if (!obj.contains(key)) return std::nullopt;
    return get_string(obj, path, key);
}

std::optional<std::vector<std::string>> opt_list(const Json& obj, const std::string& path,
                                                 std::string_view key) {
    auto it = obj.find(key);
    if (it == obj.end()) return std::nullopt;
    std::string where = path + "." + std::string(key);
    if (!it->is_array()) throw parse_error(where, "expected a list of strings");
    std::vector<std::string> out;
    for (const auto& v : *it) {
        if (!v.is_string()) throw parse_error(where, "expected a list of strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

std::optional<std::int64_t> opt_int(const Json& obj, const std::string& path, std::string_view key) {
    auto it = obj.find(key);
    if (it == obj.end()) return std::nullopt;
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
        throw parse_error(path + "." + std::string(key), "expected a non-negative integer");
    }
    return it->get<std::int64_t>();
}

PolicyRule parse_rule(const Json& j, const std::string& path) {
    check_keys(j, path, {"id", "effect", "match", "conditions"});
    PolicyRule rule;
    rule.id = get_string(j, path, "id");
    if (rule.id.empty()) throw parse_error(path + ".id", "must not be empty");
    std::string effect = get_string(j, path, "effect");
    if (effect == "allow") {
        rule.effect = Effect::Allow;
    } else if (effect == "deny") {
        rule.effect = Effect::Deny;
    } else {
        throw parse_error(path + ".effect", "must be 'allow' or 'deny', got '" + effect + "'");
    }
    if (auto it = j.find("match"); it != j.end()) {
        std::string mp = path + ".match";
        check_keys(*it, mp, {"protocol", "provider", "environment", "capability", "namespace"});
        if (auto p = opt_string(*it, mp, "protocol")) {
            try {
                rule.match.protocol = parse_protocol(*p);
            } catch (const Error&) {
                throw parse_error(mp + ".protocol", "unknown protocol '" + *p + "'");
            }
        }
        rule.match.provider = opt_string(*it, mp, "provider");
        rule.match.environment = opt_string(*it, mp, "environment");
        rule.match.capability = opt_string(*it, mp, "capability");
        rule.match.namespace_ = opt_string(*it, mp, "namespace");
    }
    if (auto it = j.find("conditions"); it != j.end()) {
        std::string cp = path + ".conditions";
        check_keys(*it, cp,
                   {"allowed_environments", "provider_allowlist", "capability_denylist",
                    "max_cert_validity_seconds", "max_cpu_millicores", "max_memory_mebibytes"});
        rule.conditions.allowed_environments = opt_list(*it, cp, "allowed_environments");
        rule.conditions.provider_allowlist = opt_list(*it, cp, "provider_allowlist");
        rule.conditions.capability_denylist = opt_list(*it, cp, "capability_denylist");
        rule.conditions.max_cert_validity_seconds = opt_int(*it, cp, "max_cert_validity_seconds");
        rule.conditions.max_cpu_millicores = opt_int(*it, cp, "max_cpu_millicores");
        rule.conditions.max_memory_mebibytes = opt_int(*it, cp, "max_memory_mebibytes");
    }
    return rule;
}

// Attributes of the subject a rule is evaluated against.
struct Facts {
    Protocol protocol = Protocol::A2a;
    std::string provider;
    std::string environment;
    std::vector<std::string> capabilities;
    std::string namespace_;
    std::vector<std::int64_t> cert_validities;
    ResourceRequest resources;
};

bool any_capability_matches(const Facts& f, std::string_view glob) {
    return std::any_of(f.capabilities.begin(), f.capabilities.end(),
                       [&](const std::string& c) { return glob_match(glob, c); });
}

bool rule_matches(const RuleMatch& m, const Facts& f) {
    if (m.protocol && *m.protocol != f.protocol) return false;
    if (m.provider && *m.provider != f.provider) return false;
    if (m.environment && *m.environment != f.environment) return false;
    if (m.namespace_ && *m.namespace_ != f.namespace_) return false;
    if (m.capability && !any_capability_matches(f, *m.capability)) return false;
    return true;
}

std::string join(const std::vector<std::string>& items) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += items[i];
    }
    return out + "]";
}

struct ConditionOutcome {
    int applicable = 0;
    std::vector<std::string> violations;
};

ConditionOutcome check_conditions(const RuleConditions& c, const Facts& f, Phase phase) {
    ConditionOutcome out;
    if (c.allowed_environments) {
        ++out.applicable;
        const auto& envs = *c.allowed_environments;
        if (std::find(envs.begin(), envs.end(), f.environment) == envs.end()) {
            out.violations.push_back("allowed_environments: environment '" + f.environment +
                                     "' not in " + join(envs));
        }
    }
    if (c.provider_allowlist) {
        ++out.applicable;
        const auto& providers = *c.provider_allowlist;
        if (std::find(providers.begin(), providers.end(), f.provider) == providers.end()) {
            out.violations.push_back("provider_allowlist: provider '" + f.provider + "' not in " +
                                     join(providers));
        }
    }
    if (c.capability_denylist) {
        ++out.applicable;
        for (const auto& glob : *c.capability_denylist) {
            for (const auto& cap : f.capabilities) {
                if (glob_match(glob, cap)) {
                    out.violations.push_back("capability_denylist: capability '" + cap +
                                             "' matches '" + glob + "'");
                }
            }
        }
    }
    if (c.max_cert_validity_seconds) {
        ++out.applicable;
        for (std::int64_t v : f.cert_validities) {
            if (v > *c.max_cert_validity_seconds) {
                out.violations.push_back("max_cert_validity_seconds: validity " + std::to_string(v) +
                                         "s exceeds " +
                                         std::to_string(*c.max_cert_validity_seconds) + "s");
            }
        }
    }
    if (phase == Phase::Admission) {
        if (c.max_cpu_millicores && f.resources.cpu_millicores) {
            ++out.applicable;
            if (*f.resources.cpu_millicores > *c.max_cpu_millicores) {
                out.violations.push_back("max_cpu_millicores: requested " +
                                         std::to_string(*f.resources.cpu_millicores) +
                                         "m exceeds " + std::to_string(*c.max_cpu_millicores) + "m");
            }
        }
        if (c.max_memory_mebibytes && f.resources.memory_mebibytes) {
            ++out.applicable;
            if (*f.resources.memory_mebibytes > *c.max_memory_mebibytes) {
                out.violations.push_back("max_memory_mebibytes: requested " +
                                         std::to_string(*f.resources.memory_mebibytes) +
                                         "Mi exceeds " + std::to_string(*c.max_memory_mebibytes) +
                                         "Mi");
            }
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(Effect e) noexcept { return e == Effect::Allow ? "allow" : "deny"; }

bool glob_match(std::string_view pattern, std::string_view text) noexcept {
    std::size_t p = 0, t = 0;
    std::size_t star = std::string_view::npos, resume = 0;
    while (t < text.size()) {
        if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            resume = t;
        } else if (p < pattern.size() && pattern[p] == text[t]) {
            ++p;
            ++t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++resume;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

PolicySet load_policies(std::string_view document) {
    Json doc;
    try {
        doc = Json::parse(document);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::PolicyParse, e.what());
    }
    check_keys(doc, "document", {"policies"});
    auto it = doc.find("policies");
    if (it == doc.end() || !it->is_array()) {
        throw parse_error("document", "top-level 'policies' must be a list");
    }
    PolicySet out;
    std::set<std::string> policy_ids;
    for (std::size_t i = 0; i < it->size(); ++i) {
        const Json& pj = (*it)[i];
        std::string path = "policies[" + std::to_string(i) + "]";
        check_keys(pj, path, {"id", "description", "rules"});
        Policy policy;
        policy.id = get_string(pj, path, "id");
        if (policy.id.empty()) throw parse_error(path + ".id", "must not be empty");
        if (!policy_ids.insert(policy.id).second) {
            throw parse_error(path + ".id", "duplicate policy id '" + policy.id + "'");
        }
        policy.description = opt_string(pj, path, "description").value_or("");
        auto rules_it = pj.find("rules");
        if (rules_it == pj.end() || !rules_it->is_array()) {
            throw parse_error(path, "'rules' must be a list");
        }
        std::set<std::string> rule_ids;
        for (std::size_t r = 0; r < rules_it->size(); ++r) {
            std::string rpath = path + ".rules[" + std::to_string(r) + "]";
            PolicyRule rule = parse_rule((*rules_it)[r], rpath);
            if (!rule_ids.insert(rule.id).second) {
                throw parse_error(rpath + ".id", "duplicate rule id '" + rule.id + "'");
            }
            policy.rules.push_back(std::move(rule));
        }
        out.push_back(std::move(policy));
    }
    return out;
}

Json to_json(const PolicySet& policies) {
    Json arr = Json::array();
    for (const auto& p : policies) {
        Json rules = Json::array();
        for (const auto& r : p.rules) {
            Json match = Json::object();
            if (r.match.protocol) match["protocol"] = to_string(*r.match.protocol);
            if (r.match.provider) match["provider"] = *r.match.provider;
            if (r.match.environment) match["environment"] = *r.match.environment;
            if (r.match.capability) match["capability"] = *r.match.capability;
            if (r.match.namespace_) match["namespace"] = *r.match.namespace_;
            Json cond = Json::object();
            const auto& c = r.conditions;
            if (c.allowed_environments) cond["allowed_environments"] = *c.allowed_environments;
            if (c.provider_allowlist) cond["provider_allowlist"] = *c.provider_allowlist;
            if (c.capability_denylist) cond["capability_denylist"] = *c.capability_denylist;
            if (c.max_cert_validity_seconds) cond["max_cert_validity_seconds"] = *c.max_cert_validity_seconds;
            if (c.max_cpu_millicores) cond["max_cpu_millicores"] = *c.max_cpu_millicores;
            if (c.max_memory_mebibytes) cond["max_memory_mebibytes"] = *c.max_memory_mebibytes;
            Json rule{{"id", r.id}, {"effect", to_string(r.effect)}, {"match", match}};
            if (!cond.empty()) rule["conditions"] = cond;
            rules.push_back(std::move(rule));
        }
        arr.push_back(Json{{"id", p.id}, {"description", p.description}, {"rules", rules}});
    }
    return Json{{"policies", arr}};
}

Json to_json(const PolicyDecision& d) {
    Json matched = Json::array();
    for (const auto& m : d.matched_rules) {
        matched.push_back(Json{{"policy", m.policy_id}, {"rule", m.rule_id}, {"effect", to_string(m.effect)}});
    }
    return Json{{"allowed", d.allowed}, {"matched_rules", matched}, {"reasons", d.reasons}};
}

PolicyDecision evaluate(const EvaluationContext& ctx, const PolicySet& policies) {
    PolicyDecision decision;
    const AgentManifest& m = ctx.manifest;

    Facts facts;
    try {
        AnsName name = parse_name(m.ans_name);
        facts.protocol = name.protocol;
        facts.provider = name.provider.str();
        facts.environment = name.extension.str();
        facts.capabilities = m.capabilities;
        if (std::find(facts.capabilities.begin(), facts.capabilities.end(), name.capability.str()) ==
            facts.capabilities.end()) {
            facts.capabilities.push_back(name.capability.str());
        }
    } catch (const Error& e) {
        decision.reasons.push_back(std::string("denied: ansName does not parse: ") + e.what());
        return decision;
    }
    facts.namespace_ = m.namespace_;
    facts.resources = m.resources;
    try {
        facts.cert_validities.push_back(parse_duration(m.certificate_validity));
    } catch (const Error&) {
        // Unparseable declared validity cannot satisfy a validity bound.
        facts.cert_validities.push_back(INT64_MAX);
    }
    if (m.chain) facts.cert_validities.push_back(m.chain->agent.not_after - m.chain->agent.not_before);

    bool any_deny = false;
    bool any_allow = false;
    std::vector<std::string> allow_notes;
    std::set<std::string> granting_policies;

    for (const Policy& policy : policies) {
        for (const PolicyRule& rule : policy.rules) {
            if (!rule_matches(rule.match, facts)) continue;
            ConditionOutcome cond = check_conditions(rule.conditions, facts, ctx.phase);
            std::string tag = policy.id + "/" + rule.id;
            if (rule.effect == Effect::Deny) {
                bool fires = cond.applicable == 0 ? rule.conditions.empty() : !cond.violations.empty();
                if (!fires) continue;
                any_deny = true;
                decision.matched_rules.push_back({policy.id, rule.id, Effect::Deny});
                if (cond.violations.empty()) {
                    decision.reasons.push_back("denied by " + tag);
                } else {
                    for (const auto& v : cond.violations) {
                        decision.reasons.push_back("denied by " + tag + ": " + v);
                    }
                }
            } else if (cond.violations.empty()) {
                any_allow = true;
                granting_policies.insert(policy.id);
                decision.matched_rules.push_back({policy.id, rule.id, Effect::Allow});
                allow_notes.push_back("allowed by " + tag);
            } else {
                for (const auto& v : cond.violations) {
                    decision.reasons.push_back("condition failed in " + tag + ": " + v);
                }
            }
        }
    }

    bool referenced_ok = true;
    for (const std::string& ref : m.policies) {
        auto it = std::find_if(policies.begin(), policies.end(),
                               [&](const Policy& p) { return p.id == ref; });
        if (it == policies.end()) {
            referenced_ok = false;
            decision.reasons.push_back("referenced policy '" + ref + "' is not loaded");
        } else if (!granting_policies.contains(ref)) {
            referenced_ok = false;
            decision.reasons.push_back("referenced policy '" + ref + "' does not allow");
        }
    }

    if (any_deny) {
        decision.allowed = false;
    } else if (!any_allow) {
        decision.allowed = false;
        decision.reasons.push_back(policies.empty() ? "default deny: no policies loaded"
                                                    : "default deny: no allow rule matched");
    } else {
        decision.allowed = referenced_ok;
    }
    if (decision.allowed) {
        decision.reasons.insert(decision.reasons.end(), allow_notes.begin(), allow_notes.end());
    }
    return decision;
}

std::string explain(const PolicyDecision& d) {
    std::ostringstream out;
    out << "decision: " << (d.allowed ? "allowed" : "denied") << "\n";
    out << "matched rules:";
    if (d.matched_rules.empty()) out << " (none)";
    out << "\n";
    for (const auto& m : d.matched_rules) {
        out << "  - " << m.policy_id << "/" << m.rule_id << " (" << to_string(m.effect) << ")\n";
    }
    out << "reasons:";
    if (d.reasons.empty()) out << " (none)";
    out << "\n";
    for (const auto& r : d.reasons) out << "  - " << r << "\n";
    return out.str();
}

}  // namespace ans
