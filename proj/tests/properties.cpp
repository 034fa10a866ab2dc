#include "properties.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "ans/attestation.hpp"
#include "ans/policy.hpp"
#include "ans/registry.hpp"
#include "support.hpp"

namespace ans::test {

void PropertyResult::fail(std::string what) {
    ++failures;
    if (counterexamples.size() < 5) counterexamples.push_back(std::move(what));
}

namespace {

class Stopwatch {
public:
    explicit Stopwatch(PropertyResult& r) : r_(r), start_(std::chrono::steady_clock::now()) {}
    ~Stopwatch() {
        r_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    PropertyResult& r_;
    std::chrono::steady_clock::time_point start_;
};

template <class T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
    return v[rng() % v.size()];
}

// ---------------------------------------------------------------- names

std::string mutate_text(std::mt19937_64& rng, std::string s) {
    static constexpr char kChars[] = "aZ09-._:/vV \t%";
    std::size_t pos = rng() % (s.size() + 1);
    char c = kChars[rng() % (sizeof(kChars) - 1)];
    switch (rng() % 5) {
        case 0: s.insert(s.begin() + pos, c); break;
        case 1: if (pos < s.size()) s.erase(pos, 1); break;
        case 2: if (pos < s.size()) s[pos] = c; break;
        case 3: if (pos < s.size()) s[pos] = static_cast<char>(std::toupper(s[pos])); break;
        default: {
            auto v = s.find(".v");
            if (v != std::string::npos) s.insert(v + 2, "0");
        }
    }
    return s;
}

// ---------------------------------------------------------------- chains

Did random_did() { return Did::derive(generate_keypair().public_key()); }

std::string describe_field(int field) {
    static constexpr const char* kFields[] = {"serial",    "subject_did", "issuer_did", "public_key",
                                              "not_before", "not_after",   "role",       "subject_name",
                                              "commitments", "signature"};
    return kFields[field];
}

void mutate_field(std::mt19937_64& rng, Certificate& c, int field) {
    switch (field) {
        case 0: c.serial += 1 + rng() % 1000; break;
        case 1: c.subject_did = random_did(); break;
        case 2: c.issuer_did = random_did(); break;
        case 3: c.public_key[rng() % 32] ^= static_cast<std::uint8_t>(1u << (rng() % 8)); break;
        case 4: c.not_before -= 1 + static_cast<std::int64_t>(rng() % 1000); break;
        case 5: c.not_after += 1 + static_cast<std::int64_t>(rng() % 1000); break;
        case 6: c.role = c.role == Role::Agent ? Role::Intermediate : Role::Agent; break;
        case 7: {
            AnsName other = parse_name(random_name(rng).text);
            while (c.subject_name && other == *c.subject_name) other = parse_name(random_name(rng).text);
            c.subject_name = other;
            break;
        }
        case 8: {
            if (c.capability_commitments.empty() || rng() % 3 == 0) {
                c.capability_commitments.push_back(
                    create_capability(Label::parse(random_label(rng))).second);
            } else if (rng() % 2) {
                c.capability_commitments.pop_back();
            } else {
                c.capability_commitments.front().commitment_key[rng() % 32] ^= 0x01;
            }
            break;
        }
        default: c.signature[rng() % 64] ^= static_cast<std::uint8_t>(1u << (rng() % 8)); break;
    }
}

// ---------------------------------------------------------------- policy oracle

bool glob(std::string_view p, std::string_view t) {
    if (p.empty()) return t.empty();
    if (p[0] == '*') {
        for (std::size_t i = 0; i <= t.size(); ++i) {
            if (glob(p.substr(1), t.substr(i))) return true;
        }
        return false;
    }
    return !t.empty() && p[0] == t[0] && glob(p.substr(1), t.substr(1));
}

struct GenFacts {
    std::string protocol, provider, environment, namespace_;
    std::vector<std::string> capabilities;  // name capability first
};

struct GenRule {
    std::string id;
    bool allow = false;
    Json match = Json::object();
    Json conditions = Json::object();
};

bool oracle_matches(const GenRule& r, const GenFacts& f) {
    for (const auto& [k, v] : r.match.items()) {
        std::string want = v.get<std::string>();
        if (k == "protocol" && want != f.protocol) return false;
        if (k == "provider" && want != f.provider) return false;
        if (k == "environment" && want != f.environment) return false;
        if (k == "namespace" && want != f.namespace_) return false;
        if (k == "capability" &&
            std::none_of(f.capabilities.begin(), f.capabilities.end(),
                         [&](const std::string& c) { return glob(want, c); })) {
            return false;
        }
    }
    return true;
}

std::string policies_document(const std::vector<std::vector<GenRule>>& policies) {
    Json arr = Json::array();
    for (std::size_t p = 0; p < policies.size(); ++p) {
        Json rules = Json::array();
        for (const auto& r : policies[p]) {
            Json rule{{"id", r.id}, {"effect", r.allow ? "allow" : "deny"}, {"match", r.match}};
            if (!r.conditions.empty()) rule["conditions"] = r.conditions;
            rules.push_back(rule);
        }
        arr.push_back(Json{{"id", "p" + std::to_string(p)}, {"rules", rules}});
    }
    return Json{{"policies", arr}}.dump();
}

// ---------------------------------------------------------------- resolve oracle

std::tuple<std::uint64_t, std::uint64_t, std::uint64_t> vkey(const Version& v) {
    return {v.major, v.minor, v.patch.value_or(0)};
}

bool oracle_query(const AgentRecord& r, const NameQuery& q) {
    if (q.protocol && *q.protocol != r.name.protocol) return false;
    if (q.agent_id && q.agent_id->str() != r.name.agent_id.str()) return false;
    if (q.capability && q.capability->str() != r.name.capability.str()) return false;
    if (q.provider && q.provider->str() != r.name.provider.str()) return false;
    if (q.extension && q.extension->str() != r.name.extension.str()) return false;
    if (q.version_req) {
        if (auto* e = std::get_if<VersionExact>(&*q.version_req)) {
            if (vkey(e->version) != vkey(r.name.version)) return false;
        } else if (auto* a = std::get_if<VersionAtLeast>(&*q.version_req)) {
            if (vkey(r.name.version) < vkey(a->version)) return false;
        }
    }
    return true;
}

std::vector<std::string> oracle_resolve(const std::vector<AgentRecord>& all, const NameQuery& q,
                                        UnixSeconds now) {
    std::vector<const AgentRecord*> hits;
    for (const auto& r : all) {
        bool live = r.status == RecordStatus::Active && now <= r.expires_at;
        if (live && r.name.extension.str() != "dev" && oracle_query(r, q)) hits.push_back(&r);
    }
    if (q.version_req && std::holds_alternative<VersionLatest>(*q.version_req)) {
        std::map<std::string, std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>> best;
        auto family = [](const AgentRecord* r) {
            return r->name.agent_id.str() + "|" + r->name.capability.str() + "|" + r->name.provider.str() +
                   "|" + r->name.extension.str();
        };
        for (auto* r : hits) {
            auto& b = best[family(r)];
            b = std::max(b, vkey(r->name.version));
        }
        std::erase_if(hits, [&](const AgentRecord* r) { return vkey(r->name.version) != best[family(r)]; });
    }
    std::vector<std::pair<std::string, const AgentRecord*>> keyed;
    for (auto* r : hits) keyed.emplace_back(format_name(r->name), r);
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        auto va = vkey(a.second->name.version), vb = vkey(b.second->name.version);
        if (va != vb) return va > vb;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    for (auto& [name, _] : keyed) out.push_back(name);
    return out;
}

std::vector<std::string> names_of(const std::vector<AgentRecord>& records) {
    std::vector<std::string> out;
    for (const auto& r : records) out.push_back(format_name(r.name));
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return "[" + s + "]";
}

}  // namespace

PropertyResult name_roundtrip(std::size_t cases, std::uint64_t seed) {
    PropertyResult r{"name round-trip"};
    Stopwatch sw(r);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
        GeneratedName g = random_name(rng);
        try {
            AnsName n = parse_name(g.text);
            bool fields = to_string(n.protocol) == g.protocol && n.agent_id.str() == g.agent_id &&
                          n.capability.str() == g.capability && n.provider.str() == g.provider &&
                          n.extension.str() == g.extension && n.version.major == g.major &&
                          n.version.minor == g.minor && n.version.patch == g.patch;
            if (!fields) r.fail("components differ for " + g.text);
            if (format_name(n) != g.text) r.fail("format(parse(s)) != s for " + g.text);
        } catch (const std::exception& e) {
            r.fail("valid name rejected: " + g.text + " (" + e.what() + ")");
            continue;
        }
        std::string mutated = mutate_text(rng, g.text);
        try {
            AnsName m = parse_name(mutated);
            if (format_name(m) != mutated) r.fail("accepted non-canonical text: " + mutated);
        } catch (const Error&) {
        } catch (const std::exception& e) {
            r.fail("non-Error exception for " + mutated + ": " + e.what());
        }
    }
    return r;
}

PropertyResult chain_mutation(std::size_t cases, std::uint64_t seed) {
    PropertyResult r{"chain mutation"};
    Stopwatch sw(r);
    std::mt19937_64 rng(seed);
    Pki pki;
    const UnixSeconds now = kT0 + kSecondsPerDay;
    std::optional<AgentIdentity> id;
    for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
        if (i % 50 == 0) {
            std::vector<std::string> extra;
            for (std::uint64_t k = rng() % 3; k > 0; --k) extra.push_back(random_label(rng));
            id = pki.enroll(random_name(rng).text, extra, kT0);
            if (auto err = check_chain(id->chain, pki.anchors, now)) {
                r.fail(std::string("baseline chain invalid: ") + err->what());
                continue;
            }
        }
        CertificateChain chain = id->chain;
        int which = static_cast<int>(rng() % 3);
        int field = static_cast<int>(rng() % 10);
        Certificate& target = which == 0 ? chain.agent : which == 1 ? chain.intermediate : chain.root;
        mutate_field(rng, target, field);
        if (chain == id->chain) {
            r.fail("mutation was a no-op");
            continue;
        }
        if (!check_chain(chain, pki.anchors, now)) {
            static constexpr const char* kWhich[] = {"agent", "intermediate", "root"};
            r.fail(std::string("mutated ") + kWhich[which] + "." + describe_field(field) + " still valid");
        }
    }
    return r;
}

PropertyResult attestation_fuzz(std::size_t cases, std::uint64_t seed) {
    PropertyResult r{"attestation completeness/soundness"};
    Stopwatch sw(r);
    std::mt19937_64 rng(seed);
    Pki pki;
    const UnixSeconds now = kT0 + 3'600;
    for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
        AgentIdentity id = pki.enroll(random_name(rng).text);
        const Label& cap = id.name.capability;
        const CapabilityCommitment& commitment = id.chain.agent.capability_commitments.front();
        const CapabilitySecret& secret = *id.secret_for(cap);
        ChallengeStore store;

        Challenge ch = store.issue(id.name, now);
        CapabilityProof honest = prove(ch, secret, id.identity_keys, id.name, now);
        AttestationResult first = verify(honest, commitment, id.chain, pki.anchors, now, store);
        if (!first.granted) {
            r.fail("honest proof denied: " + first.message);
            continue;
        }

        int kind = static_cast<int>(i % 9);
        Challenge fresh = store.issue(id.name, now);
        std::optional<AttestationResult> res;
        std::optional<ErrorCode> want;
        switch (kind) {
            case 0: {
                auto forged = create_capability(cap).first;
                res = verify(prove(fresh, forged, id.identity_keys, id.name, now), commitment, id.chain,
                             pki.anchors, now, store);
                break;
            }
            case 1: {
                KeyPair stranger = generate_keypair();
                res = verify(prove(fresh, secret, stranger, id.name, now), commitment, id.chain, pki.anchors,
                             now, store);
                break;
            }
            case 2: {
                Challenge unissued = fresh;
                unissued.nonce = crypto::random_nonce();
                res = verify(prove(unissued, secret, id.identity_keys, id.name, now), commitment, id.chain,
                             pki.anchors, now, store);
                break;
            }
            case 3: {
                std::string other = random_label(rng);
                if (other == cap.str()) other += "-x";
                auto [sb, cb] = create_capability(Label::parse(other));
                res = verify(prove(fresh, sb, id.identity_keys, id.name, now), commitment, id.chain,
                             pki.anchors, now, store);
                want = ErrorCode::CapabilityMismatch;
                break;
            }
            case 4:
                res = verify(honest, commitment, id.chain, pki.anchors, now, store);
                want = ErrorCode::NonceReplay;
                break;
            case 5: {
                CapabilityProof p = prove(fresh, secret, id.identity_keys, id.name, now);
                p.capability_signature[rng() % 64] ^= 0x80;
                res = verify(p, commitment, id.chain, pki.anchors, now, store);
                break;
            }
            case 6: {
                CapabilityProof p = prove(fresh, secret, id.identity_keys, id.name, now);
                p.identity_signature[rng() % 64] ^= 0x01;
                res = verify(p, commitment, id.chain, pki.anchors, now, store);
                break;
            }
            case 7: {
                CapabilityProof p = prove(fresh, secret, id.identity_keys, id.name, now);
                res = verify(p, commitment, id.chain, pki.anchors, fresh.expires_at + 1, store);
                try {
                    prove(fresh, secret, id.identity_keys, id.name, fresh.expires_at + 1);
                    r.fail("prove accepted an expired challenge");
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::ChallengeExpired) r.fail(std::string("prove: ") + e.what());
                }
                break;
            }
            default: {
                CapabilityProof p = prove(fresh, secret, id.identity_keys, id.name, now);
                p.agent_name = parse_name(random_name(rng).text);
                res = verify(p, commitment, id.chain, pki.anchors, now, store);
                break;
            }
        }
        if (res->granted) {
            r.fail("forgery kind " + std::to_string(kind) + " granted");
        } else if (want && res->reason != want) {
            r.fail("forgery kind " + std::to_string(kind) + " denied with " +
                   std::string(to_string(res->reason.value_or(ErrorCode::Internal))));
        }
    }
    return r;
}

PropertyResult policy_properties(std::size_t cases, std::uint64_t seed) {
    PropertyResult r{"policy deny-overrides/default-deny"};
    Stopwatch sw(r);
    std::mt19937_64 rng(seed);
    const std::vector<std::string> protocols = {"a2a", "mcp", "acp"};
    const std::vector<std::string> providers = {"lab", "team", "vendor"};
    const std::vector<std::string> envs = {"prod", "staging", "dev"};
    const std::vector<std::string> caps = {"cap-a", "cap-b", "sec-scan", "sec-audit"};
    const std::vector<std::string> globs = {"cap-a", "cap-*", "sec-*", "*-b", "*", "nothing"};
    const std::vector<std::string> namespaces = {"ns-1", "ns-2"};

    for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
        GenFacts f{pick(rng, protocols), pick(rng, providers), pick(rng, envs), pick(rng, namespaces), {}};
        f.capabilities.push_back(pick(rng, caps));
        if (rng() % 2) {
            const std::string& extra = pick(rng, caps);
            if (extra != f.capabilities.front()) f.capabilities.push_back(extra);
        }

        AgentManifest m;
        m.name = "agent";
        m.namespace_ = f.namespace_;
        m.ans_name = f.protocol + "://agent." + f.capabilities.front() + "." + f.provider + ".v1.0." +
                     f.environment;
        m.capabilities = f.capabilities;
        m.provider = f.provider;
        m.version = "1.0";
        m.environment = f.environment;

        bool conditioned = rng() % 10 < 3;
        std::vector<std::vector<GenRule>> policies(1 + rng() % 3);
        int rule_no = 0;
        for (auto& p : policies) {
            for (std::uint64_t k = rng() % 5; k > 0; --k) {
                GenRule rule{"r" + std::to_string(rule_no++), rng() % 10 < 6};
                if (rng() % 10 < 4) rule.match["protocol"] = pick(rng, protocols);
                if (rng() % 10 < 3) rule.match["provider"] = pick(rng, providers);
                if (rng() % 10 < 4) rule.match["environment"] = pick(rng, envs);
                if (rng() % 10 < 4) rule.match["capability"] = pick(rng, globs);
                if (rng() % 10 < 2) rule.match["namespace"] = pick(rng, namespaces);
                if (conditioned && rng() % 2) {
                    rule.conditions["allowed_environments"] = Json::array({pick(rng, envs)});
                }
                p.push_back(rule);
            }
        }

        PolicySet loaded;
        try {
            loaded = load_policies(policies_document(policies));
        } catch (const std::exception& e) {
            r.fail(std::string("generated policy rejected: ") + e.what());
            continue;
        }
        PolicyDecision d = evaluate(EvaluationContext{m, Phase::Admission, kT0}, loaded);

        if (!conditioned) {
            bool any_allow = false, any_deny = false;
            for (const auto& p : policies) {
                for (const auto& rule : p) {
                    if (!oracle_matches(rule, f)) continue;
                    (rule.allow ? any_allow : any_deny) = true;
                }
            }
            bool expect = any_allow && !any_deny;
            if (d.allowed != expect) {
                r.fail("case " + std::to_string(i) + ": engine " + (d.allowed ? "allowed" : "denied") +
                       ", oracle " + (expect ? "allowed" : "denied") + " for " + m.ans_name);
            }
            if (!any_allow && !any_deny) {
                bool says = std::any_of(d.reasons.begin(), d.reasons.end(), [](const std::string& s) {
                    return s.find("default deny") != std::string::npos;
                });
                if (!says) r.fail("default deny without 'default deny' reason for " + m.ans_name);
            }
        }

        // Deny-overrides: a matching unconditional deny always wins.
        auto with_deny = policies;
        GenRule veto{"veto", false};
        veto.match["environment"] = f.environment;
        with_deny.push_back({veto});
        if (evaluate(EvaluationContext{m, Phase::Admission, kT0}, load_policies(policies_document(with_deny)))
                .allowed) {
            r.fail("matching deny did not override for " + m.ans_name);
        }

        // Default deny: without allow rules nothing is admitted.
        auto denies_only = policies;
        for (auto& p : denies_only) std::erase_if(p, [](const GenRule& g) { return g.allow; });
        if (evaluate(EvaluationContext{m, Phase::Admission, kT0}, load_policies(policies_document(denies_only)))
                .allowed) {
            r.fail("allowed with no allow rules for " + m.ans_name);
        }
    }

    AgentManifest m;
    m.ans_name = kDriftName;
    m.capabilities = {"concept-drift-detection"};
    if (evaluate(EvaluationContext{m, Phase::Admission, kT0}, PolicySet{}).allowed) {
        r.fail("empty policy set allowed");
    }
    return r;
}

PropertyResult resolve_oracle(std::size_t cases, std::uint64_t seed) {
    PropertyResult r{"resolve vs linear scan"};
    Stopwatch sw(r);
    std::mt19937_64 rng(seed);
    Pki pki;
    const AgentIdentity shared = pki.enroll(kDriftName);
    const UnixSeconds now = kT0 + 10'000;

    const std::vector<std::string> agents = [] {
        std::vector<std::string> v;
        for (int i = 0; i < 15; ++i) v.push_back("agent-" + std::to_string(i));
        return v;
    }();
    const std::vector<std::string> caps = {"drift", "scan", "train", "route", "store", "audit"};
    const std::vector<std::string> providers = {"lab", "team", "vendor", "ops"};
    const std::vector<std::string> exts = {"prod", "staging", "dev"};
    const std::vector<std::string> namespaces = {"ns-a", "ns-b", "ns-c"};
    const std::vector<Protocol> protocols = {Protocol::A2a, Protocol::Mcp, Protocol::Acp};

    auto random_version = [&] {
        Version v{rng() % 4, rng() % 4, std::nullopt};
        if (rng() % 3 == 0) v.patch = rng() % 3;
        return v;
    };

    const std::size_t queries_per_registry = 60;
    const std::size_t registries = std::max<std::size_t>(1, (cases + queries_per_registry - 1) / queries_per_registry);
    PolicySetPtr policies = share(load_policies(R"({"policies":[{"id":"runtime","rules":[
        {"id":"allow-any","effect":"allow","match":{}},
        {"id":"no-dev","effect":"deny","match":{"environment":"dev"}}]}]})"));

    for (std::size_t g = 0; g < registries; ++g) {
        std::size_t size = g == 0 ? 1'000 : 1 + rng() % 1'000;
        RegistryState state;
        std::vector<AgentRecord> all;
        std::set<std::string> seen;
        for (std::size_t k = 0; k < size; ++k) {
            AnsName name{pick(rng, protocols), Label::parse(pick(rng, agents)), Label::parse(pick(rng, caps)),
                         Label::parse(pick(rng, providers)), random_version(), Label::parse(pick(rng, exts))};
            if (!seen.insert(format_name(name)).second) continue;
            std::vector<CapabilityCommitment> commitments{{name.capability, crypto::PublicKey{}}};
            if (rng() % 3 == 0) {
                const std::string& extra = pick(rng, caps);
                if (extra != name.capability.str()) {
                    commitments.push_back({Label::parse(extra), crypto::PublicKey{}});
                }
            }
            AgentRecord rec{name,
                            shared.chain.agent.subject_did,
                            "http://x.test",
                            shared.chain,
                            commitments,
                            Label::parse(pick(rng, namespaces)),
                            kT0,
                            now - 2'000 + static_cast<std::int64_t>(rng() % 6'000),
                            RecordStatus::Active};
            state.apply(RegistryEvent{state.last_seq + 1, EventKind::Registered, to_json(rec), kT0});
            if (rng() % 10 == 0) {
                state.apply(RegistryEvent{state.last_seq + 1, EventKind::Revoked,
                                          Json{{"name", format_name(name)}}, kT0});
                rec.status = RecordStatus::Revoked;
            }
            all.push_back(rec);
        }
        if (!state.index_consistent()) r.fail("capability index incoherent after generation");

        TempDir dir;
        write_snapshot(state, dir / "snap.json");
        Registry reg(RegistryOptions{kDefaultRecordTtl, std::nullopt, dir / "snap.json", false}, pki.anchors,
                     policies);
        if (!reg.state().index_consistent()) r.fail("capability index incoherent after load");

        for (std::size_t q = 0; q < queries_per_registry && r.cases < cases; ++q, ++r.cases) {
            NameQuery query;
            if (rng() % 10 < 2) query.protocol = pick(rng, protocols);
            if (rng() % 10 < 3) query.agent_id = Label::parse(rng() % 20 ? pick(rng, agents) : "absent");
            if (rng() % 10 < 5) query.capability = Label::parse(rng() % 20 ? pick(rng, caps) : "absent");
            if (rng() % 10 < 3) query.provider = Label::parse(pick(rng, providers));
            if (rng() % 10 < 3) query.extension = Label::parse(pick(rng, exts));
            switch (rng() % 5) {
                case 0: query.version_req = VersionExact{random_version()}; break;
                case 1: query.version_req = VersionAtLeast{random_version()}; break;
                case 2: query.version_req = VersionLatest{}; break;
                default: break;
            }
            auto got = names_of(reg.resolve(query, now));
            auto want = oracle_resolve(all, query, now);
            if (got != want) {
                r.fail("registry " + std::to_string(g) + " query " + std::to_string(q) + ": got " +
                       std::to_string(got.size()) + " " + join(got).substr(0, 200) + ", want " +
                       std::to_string(want.size()) + " " + join(want).substr(0, 200));
            }
        }
    }
    return r;
}

PropertyResult recovery_equivalence(std::size_t cases, std::uint64_t seed) {
    PropertyResult r{"event-log recovery equivalence"};
    Stopwatch sw(r);
    std::mt19937_64 rng(seed);
    Pki pki;
    std::vector<AgentIdentity> pool;
    const char* const kFamilies[] = {"drift", "scan", "train"};
    for (int i = 0; i < 12; ++i) {
        std::string name = std::string("a2a://agent-") + std::to_string(i % 6) + "." + kFamilies[i % 3] +
                           ".lab.v" + std::to_string(1 + i / 6) + ".0.prod";
        pool.push_back(pki.enroll(name));
    }
    std::vector<NameQuery> queries;
    for (const char* fam : kFamilies) {
        NameQuery q;
        q.capability = Label::parse(fam);
        queries.push_back(q);
        q.version_req = VersionLatest{};
        queries.push_back(q);
    }
    {
        NameQuery q;
        q.provider = Label::parse("lab");
        queries.push_back(q);
    }
    PolicySetPtr policies = allow_all();

    for (std::size_t i = 0; i < cases; ++i, ++r.cases) {
        TempDir dir;
        RegistryOptions opts{1'800, dir / "events.log", dir / "snapshot.json", false};
        UnixSeconds t = kT0 + 10;
        std::uint64_t seq_before = 0;
        {
            Registry reg(opts, pki.anchors, policies);
            for (std::uint64_t steps = 3 + rng() % 23; steps > 0; --steps) {
                t += static_cast<std::int64_t>(rng() % 600);
                const AgentIdentity& id = pool[rng() % pool.size()];
                std::string name = format_name(id.name);
                try {
                    switch (rng() % 10) {
                        case 0: case 1: case 2: case 3:
                            reg.register_agent(make_registration_request(id.identity_keys, id.chain, id.endpoint,
                                                                          Label::parse("ns")),
                                               t);
                            break;
                        case 4: case 5: case 6:
                            reg.renew(name, sign_renewal(id.identity_keys, name, t), t);
                            break;
                        case 7:
                            reg.revoke(name, sign_revocation(id.identity_keys, name, t), t);
                            break;
                        case 8:
                            reg.snapshot();
                            break;
                        default:
                            reg.sweep_expired(t);
                            break;
                    }
                } catch (const Error& e) {
                    if (e.code() == ErrorCode::LogCorrupt || e.code() == ErrorCode::Internal) {
                        r.fail(std::string("unexpected ") + e.what());
                    }
                }
            }
            seq_before = reg.last_seq();

            auto observe = [&](const Registry& other) {
                if (other.last_seq() != seq_before) return std::string("last_seq differs");
                for (const auto& id : pool) {
                    std::string name = format_name(id.name);
                    if (reg.find_live(name, t) != other.find_live(name, t)) return "find_live differs for " + name;
                }
                for (std::size_t q = 0; q < queries.size(); ++q) {
                    if (reg.resolve(queries[q], t) != other.resolve(queries[q], t)) {
                        return "resolve differs for query " + std::to_string(q);
                    }
                }
                return std::string();
            };

            Registry recovered(opts, pki.anchors, policies);
            if (auto diff = observe(recovered); !diff.empty()) r.fail("case " + std::to_string(i) + " (snapshot+log): " + diff);

            RegistryOptions log_only = opts;
            log_only.snapshot_path.reset();
            Registry replayed(log_only, pki.anchors, policies);
            if (auto diff = observe(replayed); !diff.empty()) r.fail("case " + std::to_string(i) + " (log only): " + diff);
        }
    }
    return r;
}

}  // namespace ans::test
