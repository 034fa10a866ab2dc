#pragma once

// Authoritative agent registry: registration, renewal, revocation,
// version-aware resolution and expiry, persisted as a JSON-lines event log
// plus periodic snapshots.

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "ans/attestation.hpp"
#include "ans/identity.hpp"
#include "ans/metrics.hpp"
#include "ans/policy.hpp"

namespace ans {

inline constexpr std::int64_t kDefaultRecordTtl = 24 * 3'600;
/// Lifecycle signatures (renew, revoke) are bound to a 5-minute window; the
/// current and previous windows are accepted.
inline constexpr std::int64_t kSignatureWindow = 300;

enum class RecordStatus { Active, Revoked };
std::string_view to_string(RecordStatus s) noexcept;

struct AgentRecord {
    AnsName name;
    Did did;
    std::string endpoint;
    CertificateChain chain;
    std::vector<CapabilityCommitment> commitments;
    Label namespace_;
    UnixSeconds registered_at = 0;
    UnixSeconds expires_at = 0;
    RecordStatus status = RecordStatus::Active;

    bool live(UnixSeconds now) const noexcept {
        return status == RecordStatus::Active && now <= expires_at;
    }

    friend bool operator==(const AgentRecord&, const AgentRecord&) = default;
};

Json to_json(const AgentRecord& r);
AgentRecord record_from_json(const Json& j);

/// Manifest view of a record, used for admission and runtime policy checks.
AgentManifest manifest_for(const AgentRecord& r);

struct RegistrationRequest {
    std::string name;  // parsed during registration so INVALID_NAME comes first
    Did did;
    std::string endpoint;
    CertificateChain chain;
    std::vector<CapabilityCommitment> commitments;
    std::string namespace_;
    crypto::Signature request_signature{};
};

/// Bytes the agent identity key signs: every request field except the signature.
std::string canonical_request_bytes(const RegistrationRequest& req);
Json to_json(const RegistrationRequest& req);
RegistrationRequest registration_request_from_json(const Json& j);

/// Builds and signs a request for the agent that owns `chain.agent`.
RegistrationRequest make_registration_request(const KeyPair& identity,
                                              const CertificateChain& chain,
                                              std::string endpoint, const Label& namespace_);

/// Canonical lifecycle message for renew / revoke signatures.
std::string lifecycle_message(std::string_view action, std::string_view name, std::int64_t window);
inline std::int64_t signature_window(UnixSeconds now) noexcept {
    return now >= 0 ? now / kSignatureWindow : (now - kSignatureWindow + 1) / kSignatureWindow;
}
crypto::Signature sign_renewal(const KeyPair& key, std::string_view name, UnixSeconds now);
crypto::Signature sign_revocation(const KeyPair& key, std::string_view name, UnixSeconds now);

enum class EventKind { Registered, Renewed, Revoked };
std::string_view to_string(EventKind k) noexcept;

struct RegistryEvent {
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Registered;
    Json payload;
    UnixSeconds at = 0;
};

Json to_json(const RegistryEvent& e);
RegistryEvent event_from_json(const Json& j);

/// Fold of the event log.
struct RegistryState {
    std::map<std::string, AgentRecord> records;                       // rendered name -> record
    std::unordered_map<std::string, std::set<std::string>> capability_index;  // capability -> names
    std::uint64_t last_seq = 0;

    /// Applies an event; seq must be last_seq + 1.
    void apply(const RegistryEvent& e);

    /// True iff capability_index equals a fresh scan of active records' commitments.
    bool index_consistent() const;
};

Json snapshot_document(const RegistryState& state);
RegistryState state_from_snapshot(const Json& doc);

/// Append-only JSON-lines writer.
class EventLog {
public:
    EventLog(const std::filesystem::path& path, bool fsync_each_append);
    ~EventLog();
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    void append(const RegistryEvent& e);

private:
    int fd_ = -1;
    bool fsync_;
    std::filesystem::path path_;
};

struct RecoveryResult {
    RegistryState state;
    std::optional<Error> corruption;  // LOG_CORRUPT; state holds everything before it
    std::size_t events_replayed = 0;
};

/// Loads the snapshot (if present) and replays the log suffix after its
/// last_seq. Halts at the first unparsable line or sequence gap.
RecoveryResult recover(const std::optional<std::filesystem::path>& log_path,
                       const std::optional<std::filesystem::path>& snapshot_path);
RecoveryResult recover_from_text(std::string_view log_text, const std::optional<Json>& snapshot);

void write_snapshot(const RegistryState& state, const std::filesystem::path& path);

struct RegistryOptions {
    std::int64_t record_ttl = kDefaultRecordTtl;
    std::optional<std::filesystem::path> log_path;
    std::optional<std::filesystem::path> snapshot_path;
    bool fsync = true;
};

/// Readers (resolve, lookups) share a lock; writers are serialised and the
/// durable log append happens before the state change becomes visible.
class Registry {
public:
    /// Recovers from persistence if configured. Throws Error(LOG_CORRUPT).
    Registry(RegistryOptions options, std::vector<Certificate> anchors, PolicySetPtr policies,
             Metrics* metrics = nullptr);

    AgentRecord register_agent(const RegistrationRequest& req, UnixSeconds now);
    AgentRecord renew(std::string_view name, const crypto::Signature& signature, UnixSeconds now);
    void revoke(std::string_view name, const crypto::Signature& signature, UnixSeconds now);

    std::vector<AgentRecord> resolve(const NameQuery& query, UnixSeconds now) const;

    /// Live (active, unexpired) record by rendered name.
    std::optional<AgentRecord> find_live(std::string_view name, UnixSeconds now) const;

    std::size_t sweep_expired(UnixSeconds now);

    /// Writes the snapshot file if one is configured; returns false otherwise.
    bool snapshot() const;

    void set_policies(PolicySetPtr policies);
    PolicySetPtr policies() const;
    const std::vector<Certificate>& anchors() const noexcept { return anchors_; }

    RegistryState state() const;
    std::uint64_t last_seq() const;
    std::size_t live_count(UnixSeconds now) const;
    std::size_t expiring_within(std::int64_t seconds, UnixSeconds now) const;
    std::vector<AgentRecord> live_records(UnixSeconds now) const;

private:
    void commit(RegistryEvent event);
    AgentRecord renew_locked(std::string_view name, const crypto::Signature& sig, UnixSeconds now);

    RegistryOptions options_;
    std::vector<Certificate> anchors_;
    Metrics* metrics_;

    mutable std::mutex policy_mutex_;
    PolicySetPtr policies_;

    std::mutex writer_mutex_;  // serialises writers end to end
    mutable std::shared_mutex state_mutex_;
    RegistryState state_;
    std::optional<EventLog> log_;
};

}  // namespace ans
