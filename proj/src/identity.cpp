#include "ans/identity.hpp"

#include <algorithm>

namespace ans {
namespace {

constexpr std::string_view kDidPrefix = "did:ans:";

Error chain_error(ErrorCode code, std::string_view which, const std::string& why) {
    return Error(code, std::string(which) + " certificate: " + why);
}

}  // namespace

KeyPair generate_keypair() { return KeyPair::generate(); }

KeyPair generate_keypair(const crypto::Seed& seed) { return KeyPair::from_seed(seed); }

Did Did::derive(const crypto::PublicKey& key) {
    return Did(std::string(kDidPrefix) + crypto::to_base32(crypto::sha256(key)));
}

Did Did::parse(std::string_view text) {
    // base32 of a 32-byte digest is 52 characters.
    if (!text.starts_with(kDidPrefix) || text.size() != kDidPrefix.size() + 52) {
        throw Error(ErrorCode::Malformed, "malformed DID '" + std::string(text) + "'");
    }
    for (char c : text.substr(kDidPrefix.size())) {
        if (!((c >= 'a' && c <= 'z') || (c >= '2' && c <= '7'))) {
            throw Error(ErrorCode::Malformed, "malformed DID '" + std::string(text) + "'");
        }
    }
    return Did(std::string(text));
}

std::string_view to_string(Role role) noexcept {
    switch (role) {
        case Role::Root: return "root";
        case Role::Intermediate: return "intermediate";
        case Role::Agent: return "agent";
    }
    return "agent";
}

Role parse_role(std::string_view text) {
    if (text == "root") return Role::Root;
    if (text == "intermediate") return Role::Intermediate;
    if (text == "agent") return Role::Agent;
    throw Error(ErrorCode::Malformed, "unknown certificate role '" + std::string(text) + "'");
}

Json to_json(const CapabilityCommitment& c) {
    return Json{{"capability", c.capability.str()},
                {"commitment_key", crypto::to_hex(c.commitment_key)}};
}

CapabilityCommitment commitment_from_json(const Json& j) {
    std::string cap = require_string(j, "capability");
    if (!Label::is_valid(cap)) {
        throw Error(ErrorCode::Malformed, "commitment capability '" + cap + "' is not a label");
    }
    return CapabilityCommitment{Label::parse(cap), require_hex<32>(j, "commitment_key")};
}

Json unsigned_document(const Certificate& cert) {
    Json commitments = Json::array();
    for (const auto& c : cert.capability_commitments) commitments.push_back(to_json(c));
    Json doc{
        {"serial", cert.serial},
        {"subject_did", cert.subject_did.str()},
        {"issuer_did", cert.issuer_did.str()},
        {"public_key", crypto::to_hex(cert.public_key)},
        {"not_before", cert.not_before},
        {"not_after", cert.not_after},
        {"role", to_string(cert.role)},
        {"capability_commitments", std::move(commitments)},
    };
    if (cert.subject_name) doc["subject_name"] = format_name(*cert.subject_name);
    return doc;
}

std::string canonical_bytes(const Certificate& cert) { return canonical(unsigned_document(cert)); }

Json to_json(const Certificate& cert) {
    Json doc = unsigned_document(cert);
    doc["signature"] = crypto::to_hex(cert.signature);
    return doc;
}

Certificate certificate_from_json(const Json& j) {
    static constexpr std::string_view kKnown[] = {
        "serial",   "subject_did", "issuer_did", "public_key",  "not_before",
        "not_after", "role",       "signature",  "subject_name", "capability_commitments"};
    if (!j.is_object()) throw Error(ErrorCode::Malformed, "certificate must be an object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
            throw Error(ErrorCode::Malformed, "unknown certificate field '" + key + "'");
        }
    }
    Certificate cert;
    cert.serial = require_uint(j, "serial");
    cert.subject_did = Did::parse(require_string(j, "subject_did"));
    cert.issuer_did = Did::parse(require_string(j, "issuer_did"));
    cert.public_key = require_hex<32>(j, "public_key");
    cert.not_before = require_int(j, "not_before");
    cert.not_after = require_int(j, "not_after");
    cert.role = parse_role(require_string(j, "role"));
    cert.signature = require_hex<64>(j, "signature");
    if (j.contains("subject_name")) {
        try {
            cert.subject_name = parse_name(require_string(j, "subject_name"));
        } catch (const Error& e) {
            throw Error(ErrorCode::Malformed, "subject_name: " + std::string(e.what()));
        }
    }
    const Json& commitments = require(j, "capability_commitments");
    if (!commitments.is_array()) {
        throw Error(ErrorCode::Malformed, "capability_commitments must be an array");
    }
    for (const auto& c : commitments) cert.capability_commitments.push_back(commitment_from_json(c));
    return cert;
}

Json to_json(const CertificateChain& chain) {
    return Json::array({to_json(chain.agent), to_json(chain.intermediate), to_json(chain.root)});
}

CertificateChain chain_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw Error(ErrorCode::Malformed, "chain must be a 3-element array [agent, intermediate, root]");
    }
    return CertificateChain{certificate_from_json(j[0]), certificate_from_json(j[1]),
                            certificate_from_json(j[2])};
}

Certificate issue_root(const KeyPair& root_keys, UnixSeconds not_before,
                       std::int64_t validity_seconds) {
    if (validity_seconds <= 0) throw Error(ErrorCode::Malformed, "validity must be positive");
    Certificate cert;
    cert.serial = crypto::random_u64();
    cert.subject_did = Did::derive(root_keys.public_key());
    cert.issuer_did = cert.subject_did;
    cert.public_key = root_keys.public_key();
    cert.not_before = not_before;
    cert.not_after = not_before + validity_seconds;
    cert.role = Role::Root;
    cert.signature = root_keys.sign(canonical_bytes(cert));
    return cert;
}

Certificate issue_certificate(const KeyPair& issuer_keys, const Certificate& issuer_cert,
                              const IssueRequest& request) {
    if (issuer_keys.public_key() != issuer_cert.public_key) {
        throw Error(ErrorCode::Malformed, "issuer key does not match issuer certificate");
    }
    bool permitted = (issuer_cert.role == Role::Root && request.role == Role::Intermediate) ||
                     (issuer_cert.role == Role::Intermediate && request.role == Role::Agent);
    if (!permitted) {
        throw Error(ErrorCode::RoleViolation,
                    std::string(to_string(issuer_cert.role)) + " may not issue " +
                        std::string(to_string(request.role)) + " certificates");
    }
    if (request.role == Role::Agent && !request.subject_name) {
        throw Error(ErrorCode::Malformed, "agent certificates require a subject name");
    }
    if (request.role != Role::Agent && (request.subject_name || !request.commitments.empty())) {
        throw Error(ErrorCode::Malformed, "only agent certificates carry names and commitments");
    }
    if (request.validity_seconds <= 0) {
        throw Error(ErrorCode::Malformed, "validity must be positive");
    }
    UnixSeconds not_after = request.not_before + request.validity_seconds;
    if (request.not_before < issuer_cert.not_before || not_after > issuer_cert.not_after) {
        throw Error(ErrorCode::WindowExceeded, "subject validity [" +
                                                   std::to_string(request.not_before) + ", " +
                                                   std::to_string(not_after) +
                                                   "] exceeds issuer window [" +
                                                   std::to_string(issuer_cert.not_before) + ", " +
                                                   std::to_string(issuer_cert.not_after) + "]");
    }
    Certificate cert;
    cert.serial = crypto::random_u64();
    cert.subject_did = Did::derive(request.subject_key);
    cert.subject_name = request.subject_name;
    cert.issuer_did = issuer_cert.subject_did;
    cert.public_key = request.subject_key;
    cert.not_before = request.not_before;
    cert.not_after = not_after;
    cert.role = request.role;
    cert.capability_commitments = request.commitments;
    cert.signature = issuer_keys.sign(canonical_bytes(cert));
    return cert;
}

std::optional<Error> check_chain(const CertificateChain& chain,
                                 std::span<const Certificate> anchors, UnixSeconds now) {
    struct Slot {
        const Certificate& cert;
        Role role;
        std::string_view label;
    };
    const Slot slots[] = {{chain.agent, Role::Agent, "agent"},
                          {chain.intermediate, Role::Intermediate, "intermediate"},
                          {chain.root, Role::Root, "root"}};

    for (const Slot& s : slots) {
        if (s.cert.role != s.role) {
            return chain_error(ErrorCode::ChainInvalid, s.label, "wrong role");
        }
        if (s.cert.not_before >= s.cert.not_after) {
            return chain_error(ErrorCode::ChainInvalid, s.label, "empty validity window");
        }
        if (s.cert.subject_did != Did::derive(s.cert.public_key)) {
            return chain_error(ErrorCode::ChainInvalid, s.label, "subject DID does not match key");
        }
        if (s.cert.subject_name.has_value() != (s.role == Role::Agent)) {
            return chain_error(ErrorCode::ChainInvalid, s.label, "subject name presence");
        }
        if (s.role != Role::Agent && !s.cert.capability_commitments.empty()) {
            return chain_error(ErrorCode::ChainInvalid, s.label, "unexpected commitments");
        }
    }
    if (chain.agent.issuer_did != chain.intermediate.subject_did ||
        chain.intermediate.issuer_did != chain.root.subject_did ||
        chain.root.issuer_did != chain.root.subject_did) {
        return Error(ErrorCode::ChainInvalid, "issuer linkage broken");
    }

    if (std::find(anchors.begin(), anchors.end(), chain.root) == anchors.end()) {
        return Error(ErrorCode::UntrustedRoot, "root " + chain.root.subject_did.str() +
                                                   " is not a trust anchor");
    }

    for (const Slot& s : slots) {
        if (now < s.cert.not_before) {
            return chain_error(ErrorCode::CertNotYetValid, s.label,
                               "not valid before " + std::to_string(s.cert.not_before));
        }
        if (now > s.cert.not_after) {
            return chain_error(ErrorCode::CertExpired, s.label,
                               "expired at " + std::to_string(s.cert.not_after));
        }
    }

    if (!crypto::verify(chain.root.public_key, canonical_bytes(chain.root), chain.root.signature)) {
        return chain_error(ErrorCode::ChainInvalid, "root", "bad signature");
    }
    if (!crypto::verify(chain.root.public_key, canonical_bytes(chain.intermediate),
                        chain.intermediate.signature)) {
        return chain_error(ErrorCode::ChainInvalid, "intermediate", "bad signature");
    }
    if (!crypto::verify(chain.intermediate.public_key, canonical_bytes(chain.agent),
                        chain.agent.signature)) {
        return chain_error(ErrorCode::ChainInvalid, "agent", "bad signature");
    }
    return std::nullopt;
}

void validate_chain(const CertificateChain& chain, std::span<const Certificate> anchors,
                    UnixSeconds now) {
    if (auto err = check_chain(chain, anchors, now)) throw *err;
}

std::vector<Certificate> anchors_from_json(const Json& j) {
    if (!j.is_array()) throw Error(ErrorCode::Malformed, "anchor file must be an array");
    std::vector<Certificate> out;
    for (const auto& c : j) {
        Certificate cert = certificate_from_json(c);
        if (cert.role != Role::Root) {
            throw Error(ErrorCode::Malformed, "trust anchors must be root certificates");
        }
        out.push_back(std::move(cert));
    }
    return out;
}

Json to_json(std::span<const Certificate> anchors) {
    Json arr = Json::array();
    for (const auto& c : anchors) arr.push_back(to_json(c));
    return arr;
}

}  // namespace ans
