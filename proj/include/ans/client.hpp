#pragma once

// Agent-side SDK: identity bootstrap, registry calls, peer handshake and
// capability checks over a message transport.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ans/attestation.hpp"
#include "ans/registry.hpp"

namespace httplib {
class Client;
}

namespace ans {

struct AgentIdentity {
    AnsName name;
    KeyPair identity_keys;
    CertificateChain chain;
    std::map<std::string, CapabilitySecret> capabilities;  // keyed by capability label
    std::string endpoint;

    const CapabilitySecret* secret_for(const Label& capability) const;
};

/// Local keystore format. Holds private seeds; never sent on the wire.
Json identity_to_json(const AgentIdentity& id);
AgentIdentity identity_from_json(const Json& j);
void save_identity(const AgentIdentity& id, const std::filesystem::path& path);
AgentIdentity load_identity(const std::filesystem::path& path);

/// Root + intermediate pair that enrolls agents.
struct CertificateAuthority {
    KeyPair root_keys;
    Certificate root;
    KeyPair intermediate_keys;
    Certificate intermediate;

    static CertificateAuthority create(UnixSeconds now);
    static CertificateAuthority create(const KeyPair& root_keys, const KeyPair& intermediate_keys,
                                       UnixSeconds now);

    /// New identity key, one capability secret per label (the name's own
    /// capability is always included), and an agent certificate.
    AgentIdentity enroll(const AnsName& name, const std::vector<Label>& extra_capabilities,
                         std::string endpoint, UnixSeconds not_before,
                         std::int64_t validity = kDefaultAgentValidity) const;

    std::vector<Certificate> anchors() const { return {root}; }
};

/// The registry could not be reached or answered with something other than
/// an API error document.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A well-formed error response from the registry.
class ApiError : public Error {
public:
    ApiError(ErrorCode code, std::string message, int status, Json details)
        : Error(code, message), status_(status), details_(std::move(details)) {}
    int status() const noexcept { return status_; }
    const Json& details() const noexcept { return details_; }

private:
    int status_;
    Json details_;
};

class RegistryClient {
public:
    explicit RegistryClient(const std::string& base_url,
                            std::chrono::milliseconds timeout = std::chrono::seconds(10));
    ~RegistryClient();
    RegistryClient(RegistryClient&&) noexcept;
    RegistryClient& operator=(RegistryClient&&) noexcept;

    AgentRecord register_with(const AgentIdentity& id, const Label& namespace_);
    AgentRecord submit(const RegistrationRequest& req);
    std::vector<AgentRecord> discover(const NameQuery& q);
    std::vector<AgentRecord> discover(const std::multimap<std::string, std::string>& params);
    AgentRecord renew(const AgentIdentity& id, UnixSeconds now);
    void revoke(const std::string& name, const crypto::Signature& signature);

    Challenge challenge(const AnsName& agent);
    /// Returns normally only when granted; denials arrive as ApiError.
    void attest(const CapabilityProof& proof);
    /// challenge → prove → attest against the registry's stored commitment.
    void prove_capability(const AgentIdentity& id, const Label& capability, UnixSeconds now);

    Json admission(const std::string& manifest_text);
    std::string metrics();
    bool healthy();

private:
    Json call(const char* method, const std::string& path, const std::optional<Json>& body,
              const std::multimap<std::string, std::string>& params = {});

    std::unique_ptr<httplib::Client> http_;
};

std::multimap<std::string, std::string> to_params(const NameQuery& q);

/// Ordered, reliable delivery of JSON messages.
class MessageTransport {
public:
    virtual ~MessageTransport() = default;
    virtual void send(const Json& message) = 0;
    /// Throws Error(HANDSHAKE_TIMEOUT) after `timeout`, TransportError if closed.
    virtual Json receive(std::chrono::milliseconds timeout) = 0;
    virtual void close() = 0;
};

/// In-process pair; messages are serialized to text in between.
std::pair<std::unique_ptr<MessageTransport>, std::unique_ptr<MessageTransport>> make_loopback_pair();

/// Stream transport framing each message with a 4-byte big-endian length.
class TcpTransport : public MessageTransport {
public:
    explicit TcpTransport(int fd) : fd_(fd) {}
    ~TcpTransport() override;
    static std::unique_ptr<TcpTransport> connect(const std::string& host, int port);

    void send(const Json& message) override;
    Json receive(std::chrono::milliseconds timeout) override;
    void close() override;

private:
    int fd_;
};

class TcpListener {
public:
    explicit TcpListener(const std::string& host = "127.0.0.1", int port = 0);
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    int port() const noexcept { return port_; }
    std::unique_ptr<TcpTransport> accept(std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
    int port_ = 0;
};

inline constexpr std::chrono::milliseconds kHandshakeTimeout{5'000};

struct Session {
    Did peer_did;
    AnsName peer_name;
    crypto::Digest transcript_hash{};
    UnixSeconds established_at = 0;
    CertificateChain peer_chain;
    KeyPair self_keys;
};

struct HandshakeOptions {
    std::span<const Certificate> anchors;
    UnixSeconds now = 0;
    std::chrono::milliseconds timeout = kHandshakeTimeout;
};

/// Initiator side. `expected_peer`, when given, must match the responder's
/// certificate (NAME_MISMATCH otherwise). Failures send an abort to the peer
/// and throw Error.
Session handshake_initiate(const AgentIdentity& self, const AgentRecord* expected_peer,
                           MessageTransport& transport, const HandshakeOptions& options);
Session handshake_respond(const AgentIdentity& self, MessageTransport& transport,
                          const HandshakeOptions& options);

/// Post-handshake messages carry a signature over (transcript hash, body).
void send_signed(MessageTransport& transport, const Session& session, Json body);
Json receive_signed(MessageTransport& transport, const Session& session,
                    std::chrono::milliseconds timeout);

/// Prover side of a capability check. `substitute`, when set, is sent in
/// place of a freshly computed proof.
AttestationResult request_capability(const Session& session, MessageTransport& transport,
                                     const Label& capability, const AgentIdentity& prover,
                                     UnixSeconds now,
                                     const std::optional<CapabilityProof>& substitute = std::nullopt,
                                     std::chrono::milliseconds timeout = kHandshakeTimeout);

/// Verifier side: answers one capability request using the commitment in the
/// peer's certificate. Returns the verdict that was sent and the proof seen.
struct CapabilityVerdict {
    AttestationResult result;
    std::optional<CapabilityProof> proof;
};
CapabilityVerdict serve_capability_request(const Session& session, MessageTransport& transport,
                                           std::span<const Certificate> anchors,
                                           ChallengeStore& challenges, UnixSeconds now,
                                           std::chrono::milliseconds timeout = kHandshakeTimeout);

}  // namespace ans
