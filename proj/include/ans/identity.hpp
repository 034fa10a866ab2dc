#pragma once

// Three-tier certificate hierarchy (root -> intermediate -> agent) over
// Ed25519 keys, in the canonical text format.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ans/canonical.hpp"
#include "ans/crypto.hpp"
#include "ans/name.hpp"

namespace ans {

using UnixSeconds = std::int64_t;

inline constexpr std::int64_t kSecondsPerDay = 86'400;
inline constexpr std::int64_t kDefaultAgentValidity = 90 * kSecondsPerDay;
inline constexpr std::int64_t kDefaultIntermediateValidity = 365 * kSecondsPerDay;
inline constexpr std::int64_t kDefaultRootValidity = 3'650 * kSecondsPerDay;

using crypto::KeyPair;

/// Fresh key pair from the CSPRNG, or deterministic for a given seed.
KeyPair generate_keypair();
KeyPair generate_keypair(const crypto::Seed& seed);

/// `did:ans:<base32(sha256(public_key))>`.
class Did {
public:
    Did() = default;

    static Did derive(const crypto::PublicKey& key);
    /// Throws Error(MALFORMED) if the text is not a well-formed did:ans identifier.
    static Did parse(std::string_view text);

    const std::string& str() const noexcept { return text_; }

    friend bool operator==(const Did&, const Did&) = default;
    friend auto operator<=>(const Did&, const Did&) = default;

private:
    explicit Did(std::string text) : text_(std::move(text)) {}
    std::string text_;
};

inline Did derive_did(const crypto::PublicKey& key) { return Did::derive(key); }

enum class Role { Root, Intermediate, Agent };

std::string_view to_string(Role role) noexcept;
Role parse_role(std::string_view text);

struct CapabilityCommitment {
    Label capability;
    crypto::PublicKey commitment_key{};

    friend bool operator==(const CapabilityCommitment&, const CapabilityCommitment&) = default;
};

Json to_json(const CapabilityCommitment& c);
CapabilityCommitment commitment_from_json(const Json& j);

struct Certificate {
    std::uint64_t serial = 0;
    Did subject_did;
    std::optional<AnsName> subject_name;
    Did issuer_did;
    crypto::PublicKey public_key{};
    UnixSeconds not_before = 0;
    UnixSeconds not_after = 0;
    Role role = Role::Agent;
    std::vector<CapabilityCommitment> capability_commitments;
    crypto::Signature signature{};

    friend bool operator==(const Certificate&, const Certificate&) = default;
};

/// Every field except the signature, as a canonical document.
Json unsigned_document(const Certificate& cert);
/// Bytes the issuer signs.
std::string canonical_bytes(const Certificate& cert);

/// Certificate file form: unsigned document plus "signature".
Json to_json(const Certificate& cert);
Certificate certificate_from_json(const Json& j);

struct CertificateChain {
    Certificate agent;
    Certificate intermediate;
    Certificate root;

    friend bool operator==(const CertificateChain&, const CertificateChain&) = default;
};

/// `[agent, intermediate, root]`.
Json to_json(const CertificateChain& chain);
CertificateChain chain_from_json(const Json& j);

/// Self-signed trust anchor.
Certificate issue_root(const KeyPair& root_keys, UnixSeconds not_before,
                       std::int64_t validity_seconds = kDefaultRootValidity);

struct IssueRequest {
    crypto::PublicKey subject_key{};
    Role role = Role::Agent;
    std::optional<AnsName> subject_name;
    UnixSeconds not_before = 0;
    std::int64_t validity_seconds = kDefaultAgentValidity;
    std::vector<CapabilityCommitment> commitments;
};

/// Issues a certificate signed by `issuer_keys`. Root issues intermediates,
/// intermediates issue agents. Throws ROLE_VIOLATION, WINDOW_EXCEEDED or
/// MALFORMED.
Certificate issue_certificate(const KeyPair& issuer_keys, const Certificate& issuer_cert,
                              const IssueRequest& request);

/// Throws Error with UNTRUSTED_ROOT, CHAIN_INVALID, CERT_EXPIRED or
/// CERT_NOT_YET_VALID. Time windows are checked before any signature.
void validate_chain(const CertificateChain& chain, std::span<const Certificate> anchors,
                    UnixSeconds now);

/// Non-throwing form; nullopt means valid.
std::optional<Error> check_chain(const CertificateChain& chain,
                                 std::span<const Certificate> anchors, UnixSeconds now);

inline std::int64_t remaining_validity(const Certificate& cert, UnixSeconds now) noexcept {
    return cert.not_after - now;
}

/// Anchor file: JSON array of root certificates.
std::vector<Certificate> anchors_from_json(const Json& j);
Json to_json(std::span<const Certificate> anchors);

}  // namespace ans
