#include "ans/attestation.hpp"

#include <cstring>

namespace ans {

std::pair<CapabilitySecret, CapabilityCommitment> create_capability(const Label& capability) {
    KeyPair keys = generate_keypair();
    CapabilityCommitment commitment{capability, keys.public_key()};
    return {CapabilitySecret{capability, std::move(keys)}, std::move(commitment)};
}

Json to_json(const Challenge& c) {
    return Json{{"nonce", crypto::to_hex(c.nonce)},
                {"issued_at", c.issued_at},
                {"expires_at", c.expires_at},
                {"audience", format_name(c.audience)}};
}

Challenge challenge_from_json(const Json& j) {
    return Challenge{require_hex<32>(j, "nonce"), require_int(j, "issued_at"),
                     require_int(j, "expires_at"), parse_name(require_string(j, "audience"))};
}

Json to_json(const CapabilityProof& p) {
    return Json{{"agent_name", format_name(p.agent_name)},
                {"capability", p.capability.str()},
                {"nonce", crypto::to_hex(p.nonce)},
                {"capability_signature", crypto::to_hex(p.capability_signature)},
                {"identity_signature", crypto::to_hex(p.identity_signature)}};
}

CapabilityProof proof_from_json(const Json& j) {
    return CapabilityProof{parse_name(require_string(j, "agent_name")),
                           Label::parse(require_string(j, "capability")),
                           require_hex<32>(j, "nonce"),
                           require_hex<64>(j, "capability_signature"),
                           require_hex<64>(j, "identity_signature")};
}

std::string capability_message(const AnsName& agent, const Label& capability,
                               const crypto::Nonce& nonce) {
    return canonical(Json{{"agent_name", format_name(agent)},
                          {"capability", capability.str()},
                          {"nonce", crypto::to_hex(nonce)}});
}

std::string identity_message(const CapabilityProof& proof) {
    return canonical(Json{{"agent_name", format_name(proof.agent_name)},
                          {"capability", proof.capability.str()},
                          {"nonce", crypto::to_hex(proof.nonce)},
                          {"capability_signature", crypto::to_hex(proof.capability_signature)}});
}

std::size_t ChallengeStore::NonceHash::operator()(const crypto::Nonce& n) const noexcept {
    // Nonces are uniformly random; the first word is already a good hash.
    std::size_t h = 0;
    std::memcpy(&h, n.data(), sizeof h);
    return h;
}

ChallengeStore::ChallengeStore(std::int64_t ttl_seconds, std::size_t capacity)
    : ttl_(ttl_seconds), capacity_(capacity) {}

Challenge ChallengeStore::issue(const AnsName& audience, UnixSeconds now) {
    Challenge c{crypto::random_nonce(), now, now + ttl_, audience};
    std::lock_guard lock(mutex_);
    evict_locked(now);
    outstanding_.emplace(c.nonce, c);
    order_.push_back(c.nonce);
    return c;
}

void ChallengeStore::evict_locked(UnixSeconds now) {
    // order_ is issue order; with a fixed TTL that is also expiry order.
    // Entries already consumed are skipped lazily.
    while (!order_.empty()) {
        auto it = outstanding_.find(order_.front());
        if (it == outstanding_.end()) {
            order_.pop_front();
            continue;
        }
        bool expired = now > it->second.expires_at;
        bool over_capacity = outstanding_.size() >= capacity_;
        if (!expired && !over_capacity) break;
        outstanding_.erase(it);
        order_.pop_front();
    }
}

ChallengeStore::ConsumeResult ChallengeStore::consume(const crypto::Nonce& nonce,
                                                      const AnsName& audience, UnixSeconds now) {
    std::lock_guard lock(mutex_);
    auto it = outstanding_.find(nonce);
    if (it == outstanding_.end() || it->second.audience != audience) return ConsumeResult::Missing;
    bool expired = now > it->second.expires_at;
    outstanding_.erase(it);
    return expired ? ConsumeResult::Expired : ConsumeResult::Consumed;
}

bool ChallengeStore::contains(const crypto::Nonce& nonce) const {
    std::lock_guard lock(mutex_);
    return outstanding_.contains(nonce);
}

std::size_t ChallengeStore::size() const {
    std::lock_guard lock(mutex_);
    return outstanding_.size();
}

CapabilityProof prove(const Challenge& challenge, const CapabilitySecret& secret,
                      const KeyPair& identity, const AnsName& agent_name, UnixSeconds now) {
    if (now > challenge.expires_at) {
        throw Error(ErrorCode::ChallengeExpired,
                    "challenge expired at " + std::to_string(challenge.expires_at));
    }
    CapabilityProof proof{agent_name, secret.capability, challenge.nonce, {}, {}};
    proof.capability_signature =
        secret.keypair.sign(capability_message(agent_name, secret.capability, challenge.nonce));
    proof.identity_signature = identity.sign(identity_message(proof));
    return proof;
}

AttestationResult verify(const CapabilityProof& proof, const CapabilityCommitment& commitment,
                         const CertificateChain& agent_chain,
                         std::span<const Certificate> anchors, UnixSeconds now,
                         ChallengeStore& challenges) {
    if (auto err = check_chain(agent_chain, anchors, now)) {
        return AttestationResult::deny(err->code(), err->detail());
    }
    if (agent_chain.agent.subject_name != proof.agent_name) {
        return AttestationResult::deny(ErrorCode::BadSignature,
                                       "proof names a different agent than the certificate");
    }
    if (proof.capability != commitment.capability) {
        return AttestationResult::deny(ErrorCode::CapabilityMismatch,
                                       "proof for '" + proof.capability.str() +
                                           "' presented against commitment for '" +
                                           commitment.capability.str() + "'");
    }
    if (!crypto::verify(commitment.commitment_key,
                        capability_message(proof.agent_name, proof.capability, proof.nonce),
                        proof.capability_signature)) {
        return AttestationResult::deny(ErrorCode::BadSignature,
                                       "capability signature does not verify under commitment");
    }
    if (!crypto::verify(agent_chain.agent.public_key, identity_message(proof),
                        proof.identity_signature)) {
        return AttestationResult::deny(ErrorCode::BadSignature,
                                       "identity signature does not verify under agent key");
    }
    switch (challenges.consume(proof.nonce, proof.agent_name, now)) {
        case ChallengeStore::ConsumeResult::Consumed:
            return AttestationResult::grant();
        case ChallengeStore::ConsumeResult::Expired:
            return AttestationResult::deny(ErrorCode::ChallengeExpired, "challenge expired");
        case ChallengeStore::ConsumeResult::Missing:
            break;
    }
    return AttestationResult::deny(ErrorCode::NonceReplay,
                                   "nonce is not an outstanding challenge for this agent");
}

}  // namespace ans
