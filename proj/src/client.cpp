#include "ans/client.hpp"

#include <httplib.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ans {

const CapabilitySecret* AgentIdentity::secret_for(const Label& capability) const {
    auto it = capabilities.find(capability.str());
    return it == capabilities.end() ? nullptr : &it->second;
}

Json identity_to_json(const AgentIdentity& id) {
    Json caps = Json::object();
    for (const auto& [label, secret] : id.capabilities) caps[label] = crypto::to_hex(secret.keypair.seed());
    return Json{{"name", format_name(id.name)},
                {"identity_seed", crypto::to_hex(id.identity_keys.seed())},
                {"chain", to_json(id.chain)},
                {"capabilities", caps},
                {"endpoint", id.endpoint}};
}

AgentIdentity identity_from_json(const Json& j) {
    const Json& caps = require(j, "capabilities");
    if (!caps.is_object()) throw Error(ErrorCode::Malformed, "capabilities must be an object");
    std::map<std::string, CapabilitySecret> secrets;
    for (const auto& [label, seed] : caps.items()) {
        if (!seed.is_string()) throw Error(ErrorCode::Malformed, "capability seed must be hex text");
        auto bytes = crypto::from_hex_fixed<32>(seed.get<std::string>());
        if (!bytes) throw Error(ErrorCode::Malformed, "capability seed for '" + label + "' is not 32 hex bytes");
        secrets.emplace(label, CapabilitySecret{Label::parse(label), KeyPair::from_seed(*bytes)});
    }
    AgentIdentity id{parse_name(require_string(j, "name")),
                     KeyPair::from_seed(require_hex<32>(j, "identity_seed")),
                     chain_from_json(require(j, "chain")), std::move(secrets),
                     require_string(j, "endpoint")};
    if (id.chain.agent.subject_name != id.name) {
        throw Error(ErrorCode::NameMismatch, "identity name differs from certificate subject");
    }
    if (id.chain.agent.public_key != id.identity_keys.public_key()) {
        throw Error(ErrorCode::Malformed, "identity key does not match certificate");
    }
    return id;
}

void save_identity(const AgentIdentity& id, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << identity_to_json(id).dump(2) << '\n';
    if (!out) throw Error(ErrorCode::Internal, "cannot write " + path.string());
    std::filesystem::permissions(path, std::filesystem::perms::owner_read |
                                           std::filesystem::perms::owner_write);
}

AgentIdentity load_identity(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Malformed, "cannot read identity " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return identity_from_json(parse_document(ss.str()));
}

CertificateAuthority CertificateAuthority::create(UnixSeconds now) {
    return create(generate_keypair(), generate_keypair(), now);
}

CertificateAuthority CertificateAuthority::create(const KeyPair& root_keys,
                                                  const KeyPair& intermediate_keys,
                                                  UnixSeconds now) {
    Certificate root = issue_root(root_keys, now);
    IssueRequest req;
    req.subject_key = intermediate_keys.public_key();
    req.role = Role::Intermediate;
    req.not_before = now;
    req.validity_seconds = kDefaultIntermediateValidity;
    Certificate intermediate = issue_certificate(root_keys, root, req);
    return CertificateAuthority{root_keys, std::move(root), intermediate_keys, std::move(intermediate)};
}

AgentIdentity CertificateAuthority::enroll(const AnsName& name,
                                           const std::vector<Label>& extra_capabilities,
                                           std::string endpoint, UnixSeconds not_before,
                                           std::int64_t validity) const {
    std::vector<Label> labels{name.capability};
    for (const auto& l : extra_capabilities) {
        if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
    }
    std::map<std::string, CapabilitySecret> secrets;
    IssueRequest req;
    KeyPair keys = generate_keypair();
    req.subject_key = keys.public_key();
    req.role = Role::Agent;
    req.subject_name = name;
    req.not_before = not_before;
    req.validity_seconds = validity;
    for (const auto& l : labels) {
        auto [secret, commitment] = create_capability(l);
        req.commitments.push_back(commitment);
        secrets.emplace(l.str(), std::move(secret));
    }
    Certificate agent = issue_certificate(intermediate_keys, intermediate, req);
    return AgentIdentity{name, keys, CertificateChain{std::move(agent), intermediate, root},
                         std::move(secrets), std::move(endpoint)};
}

// ---------------------------------------------------------------------------
// Registry HTTP client

namespace {

std::string encode_path_segment(std::string_view s) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '.' || c == '_' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(kHex[c >> 4]);
            out.push_back(kHex[c & 0xf]);
        }
    }
    return out;
}

std::vector<AgentRecord> records_from(const Json& arr) {
    if (!arr.is_array()) throw TransportError("resolve response is not a list");
    std::vector<AgentRecord> out;
    out.reserve(arr.size());
    for (const auto& r : arr) out.push_back(record_from_json(r));
    return out;
}

}  // namespace

RegistryClient::RegistryClient(const std::string& base_url, std::chrono::milliseconds timeout)
    : http_(std::make_unique<httplib::Client>(base_url)) {
    if (!http_->is_valid()) throw TransportError("invalid registry URL '" + base_url + "'");
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    http_->set_connection_timeout(secs.count(), usecs.count());
    http_->set_read_timeout(secs.count(), usecs.count());
    http_->set_write_timeout(secs.count(), usecs.count());
    http_->set_keep_alive(true);
    http_->set_tcp_nodelay(true);
}

RegistryClient::~RegistryClient() = default;
RegistryClient::RegistryClient(RegistryClient&&) noexcept = default;
RegistryClient& RegistryClient::operator=(RegistryClient&&) noexcept = default;

Json RegistryClient::call(const char* method, const std::string& path,
                          const std::optional<Json>& body,
                          const std::multimap<std::string, std::string>& params) {
    std::string payload = body ? canonical(*body) : std::string{};
    httplib::Result r;
    std::string_view m = method;
    if (m == "GET") {
        r = http_->Get(path, httplib::Params(params.begin(), params.end()), httplib::Headers{});
    } else if (m == "POST") {
        r = http_->Post(path, payload, "application/json");
    } else {
        r = http_->Delete(path, payload, "application/json");
    }
    if (!r) throw TransportError("registry unreachable: " + httplib::to_string(r.error()));

    if (r->status >= 200 && r->status < 300) {
        if (r->body.empty()) return Json{};
        if (r->get_header_value("Content-Type").starts_with("application/json")) {
            try {
                return Json::parse(r->body);
            } catch (const Json::exception& e) {
                throw TransportError(std::string("unparsable response: ") + e.what());
            }
        }
        return Json(r->body);
    }

    Json err;
    try {
        err = Json::parse(r->body);
    } catch (const Json::exception&) {
        throw TransportError("HTTP " + std::to_string(r->status) + " without an error document");
    }
    ErrorCode code;
    if (!err.is_object() || !err.contains("error") || !err["error"].is_string() ||
        !parse_error_code(err["error"].get<std::string>(), code)) {
        throw TransportError("HTTP " + std::to_string(r->status) + " with unknown error document");
    }
    std::string message = err.value("message", std::string{});
    Json details = err.contains("details") ? err["details"] : Json{};
    if (code == ErrorCode::PolicyDenied && details.contains("explain")) {
        message = details["explain"].get<std::string>();
    }
    throw ApiError(code, message, r->status, details);
}

AgentRecord RegistryClient::register_with(const AgentIdentity& id, const Label& namespace_) {
    return submit(make_registration_request(id.identity_keys, id.chain, id.endpoint, namespace_));
}

AgentRecord RegistryClient::submit(const RegistrationRequest& req) {
    return record_from_json(call("POST", "/v1/agents", to_json(req)));
}

std::multimap<std::string, std::string> to_params(const NameQuery& q) {
    std::multimap<std::string, std::string> p;
    if (q.protocol) p.emplace("protocol", std::string(to_string(*q.protocol)));
    if (q.agent_id) p.emplace("agent", q.agent_id->str());
    if (q.capability) p.emplace("capability", q.capability->str());
    if (q.provider) p.emplace("provider", q.provider->str());
    if (q.extension) p.emplace("env", q.extension->str());
    if (q.version_req) p.emplace("version", format_version_req(*q.version_req));
    return p;
}

std::vector<AgentRecord> RegistryClient::discover(const NameQuery& q) {
    return discover(to_params(q));
}

std::vector<AgentRecord> RegistryClient::discover(
    const std::multimap<std::string, std::string>& params) {
    return records_from(call("GET", "/v1/resolve", std::nullopt, params));
}

AgentRecord RegistryClient::renew(const AgentIdentity& id, UnixSeconds now) {
    std::string name = format_name(id.name);
    Json body{{"signature", crypto::to_hex(sign_renewal(id.identity_keys, name, now))}};
    return record_from_json(call("POST", "/v1/agents/" + encode_path_segment(name) + "/renew", body));
}

void RegistryClient::revoke(const std::string& name, const crypto::Signature& signature) {
    call("DELETE", "/v1/agents/" + encode_path_segment(name),
         Json{{"signature", crypto::to_hex(signature)}});
}

Challenge RegistryClient::challenge(const AnsName& agent) {
    return challenge_from_json(call("POST", "/v1/challenge", Json{{"agent", format_name(agent)}}));
}

void RegistryClient::attest(const CapabilityProof& proof) { call("POST", "/v1/attest", to_json(proof)); }

void RegistryClient::prove_capability(const AgentIdentity& id, const Label& capability,
                                      UnixSeconds now) {
    const CapabilitySecret* secret = id.secret_for(capability);
    if (!secret) {
        throw Error(ErrorCode::UnknownCapability, "no local secret for '" + capability.str() + "'");
    }
    Challenge c = challenge(id.name);
    attest(prove(c, *secret, id.identity_keys, id.name, now));
}

Json RegistryClient::admission(const std::string& manifest_text) {
    httplib::Result r = http_->Post("/v1/admission/validate", manifest_text, "application/json");
    if (!r) throw TransportError("registry unreachable: " + httplib::to_string(r.error()));
    Json doc;
    try {
        doc = Json::parse(r->body);
    } catch (const Json::exception&) {
        throw TransportError("admission response is not JSON");
    }
    if (r->status == 200) return doc;
    ErrorCode code = ErrorCode::Internal;
    if (!doc.contains("error") || !parse_error_code(doc["error"].get<std::string>(), code)) {
        throw TransportError("HTTP " + std::to_string(r->status) + " with unknown error document");
    }
    throw ApiError(code, doc.value("message", ""), r->status, Json{});
}

std::string RegistryClient::metrics() { return call("GET", "/v1/metrics", std::nullopt).get<std::string>(); }

bool RegistryClient::healthy() {
    try {
        return call("GET", "/v1/healthz", std::nullopt) == Json("ok");
    } catch (const std::exception&) {
        return false;
    }
}

// ---------------------------------------------------------------------------
// Transports

namespace {

struct LoopbackChannel {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<std::string> queues[2];
    bool closed = false;
};

class LoopbackTransport : public MessageTransport {
public:
    LoopbackTransport(std::shared_ptr<LoopbackChannel> ch, int side) : ch_(std::move(ch)), side_(side) {}
    ~LoopbackTransport() override { close(); }

    void send(const Json& message) override {
        std::lock_guard lock(ch_->mutex);
        if (ch_->closed) throw TransportError("loopback closed");
        ch_->queues[1 - side_].push_back(canonical(message));
        ch_->cv.notify_all();
    }

    Json receive(std::chrono::milliseconds timeout) override {
        std::unique_lock lock(ch_->mutex);
        auto& q = ch_->queues[side_];
        if (!ch_->cv.wait_for(lock, timeout, [&] { return !q.empty() || ch_->closed; })) {
            throw Error(ErrorCode::HandshakeTimeout, "no message within " +
                                                         std::to_string(timeout.count()) + " ms");
        }
        if (q.empty()) throw TransportError("loopback closed");
        std::string text = std::move(q.front());
        q.pop_front();
        return parse_document(text);
    }

    void close() override {
        std::lock_guard lock(ch_->mutex);
        ch_->closed = true;
        ch_->cv.notify_all();
    }

private:
    std::shared_ptr<LoopbackChannel> ch_;
    int side_;
};

constexpr std::uint32_t kMaxFrame = 16u << 20;

void write_all(int fd, const char* p, std::size_t n) {
    while (n > 0) {
        ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("send failed: ") + std::strerror(errno));
        }
        p += w;
        n -= static_cast<std::size_t>(w);
    }
}

void read_all(int fd, char* p, std::size_t n, std::chrono::steady_clock::time_point deadline,
              std::chrono::milliseconds timeout) {
    while (n > 0) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            throw Error(ErrorCode::HandshakeTimeout,
                        "no message within " + std::to_string(timeout.count()) + " ms");
        }
        pollfd pfd{fd, POLLIN, 0};
        int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw TransportError(std::string("poll failed: ") + std::strerror(errno));
        }
        if (rc == 0) continue;
        ssize_t r = ::recv(fd, p, n, 0);
        if (r == 0) throw TransportError("peer closed the connection");
        if (r < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw TransportError(std::string("recv failed: ") + std::strerror(errno));
        }
        p += r;
        n -= static_cast<std::size_t>(r);
    }
}

}  // namespace

std::pair<std::unique_ptr<MessageTransport>, std::unique_ptr<MessageTransport>> make_loopback_pair() {
    auto ch = std::make_shared<LoopbackChannel>();
    return {std::make_unique<LoopbackTransport>(ch, 0), std::make_unique<LoopbackTransport>(ch, 1)};
}

TcpTransport::~TcpTransport() { close(); }

std::unique_ptr<TcpTransport> TcpTransport::connect(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0) {
        throw TransportError("resolve " + host + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw TransportError("cannot connect to " + host + ":" + std::to_string(port));
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_unique<TcpTransport>(fd);
}

void TcpTransport::send(const Json& message) {
    if (fd_ < 0) throw TransportError("transport closed");
    std::string body = canonical(message);
    if (body.size() > kMaxFrame) throw Error(ErrorCode::Malformed, "message too large");
    auto n = static_cast<std::uint32_t>(body.size());
    char header[4] = {static_cast<char>(n >> 24), static_cast<char>(n >> 16),
                      static_cast<char>(n >> 8), static_cast<char>(n)};
    write_all(fd_, header, 4);
    write_all(fd_, body.data(), body.size());
}

Json TcpTransport::receive(std::chrono::milliseconds timeout) {
    if (fd_ < 0) throw TransportError("transport closed");
    auto deadline = std::chrono::steady_clock::now() + timeout;
    unsigned char header[4];
    read_all(fd_, reinterpret_cast<char*>(header), 4, deadline, timeout);
    std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                      (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
    if (n > kMaxFrame) throw Error(ErrorCode::Malformed, "frame length " + std::to_string(n) + " too large");
    std::string body(n, '\0');
    read_all(fd_, body.data(), n, deadline, timeout);
    return parse_document(body);
}

void TcpTransport::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

TcpListener::TcpListener(const std::string& host, int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) throw TransportError("socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw TransportError("listener host must be an IPv4 address");
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 128) != 0) {
        ::close(fd_);
        throw TransportError(std::string("cannot listen: ") + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpTransport> TcpListener::accept(std::chrono::milliseconds timeout) {
    pollfd pfd{fd_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc == 0) throw Error(ErrorCode::HandshakeTimeout, "no inbound connection");
    if (rc < 0) throw TransportError(std::string("poll failed: ") + std::strerror(errno));
    int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) throw TransportError(std::string("accept failed: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_unique<TcpTransport>(fd);
}

// ---------------------------------------------------------------------------
// Handshake

namespace {

struct PeerAborted : Error {
    using Error::Error;
};

crypto::Digest handshake_digest(std::uint64_t serial, const crypto::Nonce& first,
                                const crypto::Nonce& second) {
    return crypto::sha256(
        canonical(Json::array({serial, crypto::to_hex(first), crypto::to_hex(second)})));
}

crypto::Digest transcript_digest(std::uint64_t initiator_serial, std::uint64_t responder_serial,
                                 const crypto::Nonce& nonce_i, const crypto::Nonce& nonce_r) {
    return crypto::sha256(canonical(Json{{"initiator_serial", initiator_serial},
                                         {"responder_serial", responder_serial},
                                         {"nonce_i", crypto::to_hex(nonce_i)},
                                         {"nonce_r", crypto::to_hex(nonce_r)}}));
}

[[noreturn]] void raise_abort(const Json& m) {
    ErrorCode code = ErrorCode::Internal;
    std::string name = m.value("error", std::string{});
    if (!parse_error_code(name, code)) code = ErrorCode::Malformed;
    throw PeerAborted(code, "peer aborted: " + m.value("message", std::string{}));
}

Json expect(MessageTransport& t, std::string_view type, std::chrono::milliseconds timeout) {
    Json m = t.receive(timeout);
    std::string got = require_string(m, "type");
    if (got == "abort") raise_abort(m);
    if (got != type) {
        throw Error(ErrorCode::Malformed, "expected '" + std::string(type) + "', got '" + got + "'");
    }
    return m;
}

template <class F>
auto aborting_on_error(MessageTransport& t, F body) {
    try {
        return body();
    } catch (const PeerAborted&) {
        throw;
    } catch (const Error& e) {
        try {
            t.send(Json{{"type", "abort"}, {"error", to_string(e.code())}, {"message", e.detail()}});
        } catch (const std::exception&) {
        }
        throw;
    }
}

std::chrono::milliseconds remaining(std::chrono::steady_clock::time_point deadline) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    return std::max(left, std::chrono::milliseconds(0));
}

}  // namespace

Session handshake_initiate(const AgentIdentity& self, const AgentRecord* expected_peer,
                           MessageTransport& transport, const HandshakeOptions& options) {
    auto deadline = std::chrono::steady_clock::now() + options.timeout;
    return aborting_on_error(transport, [&] {
        crypto::Nonce nonce_i = crypto::random_nonce();
        transport.send(Json{{"type", "hello"},
                            {"chain", to_json(self.chain)},
                            {"nonce", crypto::to_hex(nonce_i)}});

        Json reply = expect(transport, "hello_reply", remaining(deadline));
        CertificateChain peer = chain_from_json(require(reply, "chain"));
        crypto::Nonce nonce_r = require_hex<32>(reply, "nonce");
        crypto::Signature sig_r = require_hex<64>(reply, "signature");

        validate_chain(peer, options.anchors, options.now);
        if (expected_peer && (peer.agent.subject_did != expected_peer->did ||
                              peer.agent != expected_peer->chain.agent)) {
            throw Error(ErrorCode::NameMismatch, "responder certificate differs from the registry record");
        }
        crypto::Digest d = handshake_digest(self.chain.agent.serial, nonce_i, nonce_r);
        if (!crypto::verify(peer.agent.public_key, d, sig_r)) {
            throw Error(ErrorCode::BadSignature, "responder signature invalid at handshake message 2");
        }

        crypto::Digest mine = handshake_digest(peer.agent.serial, nonce_r, nonce_i);
        transport.send(Json{{"type", "finish"},
                            {"signature", crypto::to_hex(self.identity_keys.sign(mine))}});

        return Session{peer.agent.subject_did, *peer.agent.subject_name,
                       transcript_digest(self.chain.agent.serial, peer.agent.serial, nonce_i, nonce_r),
                       options.now, peer, self.identity_keys};
    });
}

Session handshake_respond(const AgentIdentity& self, MessageTransport& transport,
                          const HandshakeOptions& options) {
    auto deadline = std::chrono::steady_clock::now() + options.timeout;
    return aborting_on_error(transport, [&] {
        Json hello = expect(transport, "hello", remaining(deadline));
        CertificateChain peer = chain_from_json(require(hello, "chain"));
        crypto::Nonce nonce_i = require_hex<32>(hello, "nonce");
        validate_chain(peer, options.anchors, options.now);

        crypto::Nonce nonce_r = crypto::random_nonce();
        crypto::Digest mine = handshake_digest(peer.agent.serial, nonce_i, nonce_r);
        transport.send(Json{{"type", "hello_reply"},
                            {"chain", to_json(self.chain)},
                            {"nonce", crypto::to_hex(nonce_r)},
                            {"signature", crypto::to_hex(self.identity_keys.sign(mine))}});

        Json finish = expect(transport, "finish", remaining(deadline));
        crypto::Signature sig_i = require_hex<64>(finish, "signature");
        crypto::Digest d = handshake_digest(self.chain.agent.serial, nonce_r, nonce_i);
        if (!crypto::verify(peer.agent.public_key, d, sig_i)) {
            throw Error(ErrorCode::BadSignature, "initiator signature invalid at handshake message 3");
        }
        return Session{peer.agent.subject_did, *peer.agent.subject_name,
                       transcript_digest(peer.agent.serial, self.chain.agent.serial, nonce_i, nonce_r),
                       options.now, peer, self.identity_keys};
    });
}

namespace {

std::string signed_bytes(const Session& s, const Json& body) {
    return canonical(Json{{"transcript", crypto::to_hex(s.transcript_hash)}, {"body", body}});
}

}  // namespace

void send_signed(MessageTransport& transport, const Session& session, Json body) {
    crypto::Signature sig = session.self_keys.sign(signed_bytes(session, body));
    transport.send(Json{{"body", std::move(body)}, {"sig", crypto::to_hex(sig)}});
}

Json receive_signed(MessageTransport& transport, const Session& session,
                    std::chrono::milliseconds timeout) {
    Json m = transport.receive(timeout);
    if (m.is_object() && m.value("type", std::string{}) == "abort") raise_abort(m);
    const Json& body = require(m, "body");
    crypto::Signature sig = require_hex<64>(m, "sig");
    if (!crypto::verify(session.peer_chain.agent.public_key, signed_bytes(session, body), sig)) {
        throw Error(ErrorCode::BadSignature, "session message signature invalid");
    }
    return body;
}

namespace {

AttestationResult result_from(const Json& body) {
    if (require(body, "granted").get<bool>()) return AttestationResult::grant();
    ErrorCode code = ErrorCode::Internal;
    if (!parse_error_code(require_string(body, "reason"), code)) code = ErrorCode::Malformed;
    return AttestationResult::deny(code, body.value("message", std::string{}));
}

Json result_body(const AttestationResult& r) {
    Json j{{"type", "cap_result"}, {"granted", r.granted}, {"message", r.message}};
    if (r.reason) j["reason"] = to_string(*r.reason);
    return j;
}

}  // namespace

AttestationResult request_capability(const Session& session, MessageTransport& transport,
                                     const Label& capability, const AgentIdentity& prover,
                                     UnixSeconds now, const std::optional<CapabilityProof>& substitute,
                                     std::chrono::milliseconds timeout) {
    send_signed(transport, session, Json{{"type", "cap_request"}, {"capability", capability.str()}});
    Json reply = receive_signed(transport, session, timeout);
    std::string type = require_string(reply, "type");
    if (type == "cap_result") return result_from(reply);
    if (type != "cap_challenge") throw Error(ErrorCode::Malformed, "unexpected message '" + type + "'");
    Challenge challenge = challenge_from_json(require(reply, "challenge"));

    const CapabilitySecret* secret = prover.secret_for(capability);
    if (!substitute && !secret) {
        send_signed(transport, session, Json{{"type", "cap_withdraw"}});
        receive_signed(transport, session, timeout);
        return AttestationResult::deny(ErrorCode::UnknownCapability,
                                       "no local secret for '" + capability.str() + "'");
    }
    CapabilityProof proof = substitute ? *substitute
                                       : prove(challenge, *secret, prover.identity_keys, prover.name, now);
    send_signed(transport, session, Json{{"type", "cap_proof"}, {"proof", to_json(proof)}});
    return result_from(receive_signed(transport, session, timeout));
}

CapabilityVerdict serve_capability_request(const Session& session, MessageTransport& transport,
                                           std::span<const Certificate> anchors,
                                           ChallengeStore& challenges, UnixSeconds now,
                                           std::chrono::milliseconds timeout) {
    Json req = receive_signed(transport, session, timeout);
    if (require_string(req, "type") != "cap_request") {
        throw Error(ErrorCode::Malformed, "expected a capability request");
    }
    auto finish = [&](AttestationResult r, std::optional<CapabilityProof> proof = std::nullopt) {
        send_signed(transport, session, result_body(r));
        return CapabilityVerdict{std::move(r), std::move(proof)};
    };

    std::string requested = require_string(req, "capability");
    if (!Label::is_valid(requested)) {
        return finish(AttestationResult::deny(ErrorCode::InvalidLabel, "bad capability label"));
    }
    const auto& commitments = session.peer_chain.agent.capability_commitments;
    auto it = std::find_if(commitments.begin(), commitments.end(),
                           [&](const CapabilityCommitment& c) { return c.capability.str() == requested; });
    if (it == commitments.end()) {
        return finish(AttestationResult::deny(
            ErrorCode::UnknownCapability,
            "certificate of " + format_name(session.peer_name) + " has no commitment for '" + requested + "'"));
    }

    Challenge c = challenges.issue(session.peer_name, now);
    send_signed(transport, session, Json{{"type", "cap_challenge"}, {"challenge", to_json(c)}});

    Json answer = receive_signed(transport, session, timeout);
    std::string type = require_string(answer, "type");
    if (type == "cap_withdraw") {
        return finish(AttestationResult::deny(ErrorCode::UnknownCapability, "prover withdrew"));
    }
    if (type != "cap_proof") throw Error(ErrorCode::Malformed, "expected a capability proof");
    CapabilityProof proof = proof_from_json(require(answer, "proof"));
    return finish(verify(proof, *it, session.peer_chain, anchors, now, challenges), proof);
}

}  // namespace ans
