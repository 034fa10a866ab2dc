#pragma once

// Capability attestation as signature-based proof of knowledge.
//
// The registry stores a commitment (the public half of a capability-scoped
// key). An agent proves it holds the capability by signing a verifier-issued
// nonce with the capability key, then countersigning the whole proof with its
// certified identity key. The verifier learns nothing beyond validity.

#include <cstddef>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>

#include "ans/identity.hpp"

namespace ans {

inline constexpr std::int64_t kDefaultChallengeTtl = 60;
inline constexpr std::size_t kDefaultChallengeCapacity = 100'000;

/// Never leaves the agent; there is deliberately no wire serialisation.
struct CapabilitySecret {
    Label capability;
    KeyPair keypair;
};

std::pair<CapabilitySecret, CapabilityCommitment> create_capability(const Label& capability);

struct Challenge {
    crypto::Nonce nonce{};
    UnixSeconds issued_at = 0;
    UnixSeconds expires_at = 0;
    AnsName audience;

    friend bool operator==(const Challenge&, const Challenge&) = default;
};

Json to_json(const Challenge& c);
Challenge challenge_from_json(const Json& j);

struct CapabilityProof {
    AnsName agent_name;
    Label capability;
    crypto::Nonce nonce{};
    crypto::Signature capability_signature{};
    crypto::Signature identity_signature{};

    friend bool operator==(const CapabilityProof&, const CapabilityProof&) = default;
};

Json to_json(const CapabilityProof& p);
CapabilityProof proof_from_json(const Json& j);

/// Bytes covered by the capability key: canonical(agent_name, capability, nonce).
std::string capability_message(const AnsName& agent, const Label& capability,
                               const crypto::Nonce& nonce);
/// Bytes covered by the identity key: the above plus capability_signature.
std::string identity_message(const CapabilityProof& proof);

/// Outstanding challenges keyed by nonce. Consumption is test-and-remove under
/// a single lock, so a nonce is accepted at most once across threads.
class ChallengeStore {
public:
    explicit ChallengeStore(std::int64_t ttl_seconds = kDefaultChallengeTtl,
                            std::size_t capacity = kDefaultChallengeCapacity);

    Challenge issue(const AnsName& audience, UnixSeconds now);

    enum class ConsumeResult { Consumed, Missing, Expired };

    /// Removes the challenge if it is outstanding for `audience`. A nonce that
    /// belongs to another audience is reported Missing and left in place.
    ConsumeResult consume(const crypto::Nonce& nonce, const AnsName& audience, UnixSeconds now);

    bool contains(const crypto::Nonce& nonce) const;
    std::size_t size() const;
    std::int64_t ttl() const noexcept { return ttl_; }

private:
    struct NonceHash {
        std::size_t operator()(const crypto::Nonce& n) const noexcept;
    };

    void evict_locked(UnixSeconds now);

    std::int64_t ttl_;
    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::unordered_map<crypto::Nonce, Challenge, NonceHash> outstanding_;
    std::deque<crypto::Nonce> order_;
};

/// Throws Error(CHALLENGE_EXPIRED) if now > challenge.expires_at.
CapabilityProof prove(const Challenge& challenge, const CapabilitySecret& secret,
                      const KeyPair& identity, const AnsName& agent_name, UnixSeconds now);

struct AttestationResult {
    bool granted = false;
    std::optional<ErrorCode> reason;
    std::string message;

    static AttestationResult grant() { return {true, std::nullopt, "granted"}; }
    static AttestationResult deny(ErrorCode code, std::string why) {
        return {false, code, std::move(why)};
    }
};

/// Grants iff the chain validates, the proof is for the committed capability,
/// both signatures verify and the nonce is an outstanding unexpired challenge,
/// which is then consumed.
AttestationResult verify(const CapabilityProof& proof, const CapabilityCommitment& commitment,
                         const CertificateChain& agent_chain,
                         std::span<const Certificate> anchors, UnixSeconds now,
                         ChallengeStore& challenges);

}  // namespace ans
