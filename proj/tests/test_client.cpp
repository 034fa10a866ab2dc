#include <doctest.h>

#include <future>
#include <thread>

#include "ans/client.hpp"
#include "ans/server.hpp"
#include "support.hpp"

using namespace ans;
using namespace ans::test;

namespace {

struct Live {
    Pki pki;
    std::atomic<UnixSeconds> clock{kT0 + 1'000};
    Server server;
    RegistryClient client;

    Live()
        : server(config(pki), [this] { return clock.load(); }),
          client((server.start(), server.base_url())) {}

    static ServerConfig config(const Pki& pki) {
        ServerConfig c;
        c.listen = "127.0.0.1:0";
        c.worker_threads = 4;
        c.anchors = pki.anchors;
        c.policies = allow_all();
        return c;
    }
};

template <class F>
ErrorCode code_of(F f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Internal;
}

struct Pair {
    std::unique_ptr<MessageTransport> a, b;
    Pair() { std::tie(a, b) = make_loopback_pair(); }
};

struct Outcome {
    std::optional<Session> initiator, responder;
    std::optional<ErrorCode> initiator_error, responder_error;
    std::string initiator_message, responder_message;
};

Outcome run_handshake(const AgentIdentity& initiator, const AgentIdentity& responder,
                      std::span<const Certificate> anchors, UnixSeconds now,
                      const AgentRecord* expected = nullptr) {
    Pair p;
    Outcome o;
    HandshakeOptions opts{anchors, now, std::chrono::milliseconds(2'000)};
    std::thread t([&] {
        try {
            o.responder = handshake_respond(responder, *p.b, opts);
        } catch (const Error& e) {
            o.responder_error = e.code();
            o.responder_message = e.what();
        }
    });
    try {
        o.initiator = handshake_initiate(initiator, expected, *p.a, opts);
    } catch (const Error& e) {
        o.initiator_error = e.code();
        o.initiator_message = e.what();
    }
    t.join();
    return o;
}

// `self` carries `victim`'s certificate chain but its own signing key.
AgentIdentity impersonating(const AgentIdentity& victim, const AgentIdentity& self) {
    AgentIdentity fake = victim;
    fake.identity_keys = self.identity_keys;
    return fake;
}

}  // namespace

TEST_CASE("register and discover through the client") {
    Live live;
    AgentIdentity drift = live.pki.enroll(kDriftName);
    AgentRecord rec = live.client.register_with(drift, Label::parse("mlops-system"));
    CHECK(rec.did == drift.chain.agent.subject_did);
    CHECK(live.client.healthy());

    NameQuery q;
    q.capability = Label::parse("concept-drift-detection");
    auto found = live.client.discover(q);
    REQUIRE(found.size() == 1);
    CHECK(found[0] == rec);

    NameQuery nothing;
    nothing.capability = Label::parse("image-tagging");
    CHECK(live.client.discover(nothing).empty());

    try {
        live.client.register_with(live.pki.enroll(kDriftName), Label::parse("default"));
        FAIL("registered");
    } catch (const ApiError& e) {
        CHECK(e.code() == ErrorCode::DuplicateAgent);
        CHECK(e.status() == 409);
    }

    try {
        live.client.discover({{"capability", "x"}, {"version", "v1.x"}});
        FAIL("resolved");
    } catch (const ApiError& e) {
        CHECK(e.code() == ErrorCode::InvalidName);
        CHECK(e.status() == 400);
    }

    AgentRecord renewed = live.client.renew(drift, live.clock);
    CHECK(renewed.expires_at >= rec.expires_at);
    live.client.revoke(kDriftName, sign_revocation(drift.identity_keys, kDriftName, live.clock));
    CHECK(live.client.discover(q).empty());

    CHECK(to_params(q) == std::multimap<std::string, std::string>{{"capability", "concept-drift-detection"}});
}

TEST_CASE("registry attestation through the client") {
    Live live;
    AgentIdentity drift = live.pki.enroll(kDriftName, {"statistical-analysis"});
    live.client.register_with(drift, Label::parse("default"));

    CHECK_NOTHROW(live.client.prove_capability(drift, Label::parse("statistical-analysis"), live.clock));
    CHECK(code_of([&] { live.client.prove_capability(drift, Label::parse("model-training"), live.clock); }) ==
          ErrorCode::UnknownCapability);

    Challenge ch = live.client.challenge(drift.name);
    CapabilityProof proof = prove(ch, *drift.secret_for(Label::parse("statistical-analysis")), drift.identity_keys,
                                  drift.name, live.clock);
    live.client.attest(proof);
    try {
        live.client.attest(proof);
        FAIL("granted twice");
    } catch (const ApiError& e) {
        CHECK(e.code() == ErrorCode::NonceReplay);
        CHECK(e.status() == 401);
    }
}

TEST_CASE("every client in the fleet discovers itself") {
    Live live;
    std::vector<AgentIdentity> fleet;
    for (int i = 0; i < 5; ++i) {
        fleet.push_back(live.pki.enroll("a2a://worker-" + std::to_string(i) + ".batch.lab.v1." + std::to_string(i) + ".prod"));
        live.client.register_with(fleet.back(), Label::parse("jobs"));
    }
    NameQuery q;
    q.capability = Label::parse("batch");
    auto found = live.client.discover(q);
    REQUIRE(found.size() == 5);
    for (const auto& id : fleet) {
        CHECK(std::any_of(found.begin(), found.end(),
                          [&](const AgentRecord& r) { return r.did == id.chain.agent.subject_did; }));
    }
    // Newest version first.
    CHECK(found.front().name.version == Version{1, 4, std::nullopt});
}

TEST_CASE("unreachable registry is a transport failure") {
    int port = 0;
    {
        Live live;
        port = live.server.port();
    }
    RegistryClient down("http://127.0.0.1:" + std::to_string(port), std::chrono::milliseconds(500));
    Pki pki;
    CHECK_THROWS_AS(down.register_with(pki.enroll(kDriftName), Label::parse("default")), TransportError);
    CHECK_FALSE(down.healthy());
    try {
        NameQuery q;
        q.capability = Label::parse("x");
        down.discover(q);
        FAIL("resolved");
    } catch (const ApiError&) {
        FAIL("reported as an API error");
    } catch (const TransportError&) {
    }
}

TEST_CASE("mutual handshake") {
    Pki pki;
    AgentIdentity a = pki.enroll(kDriftName);
    AgentIdentity b = pki.enroll(kScannerName);
    const UnixSeconds now = kT0 + 100;

    SUBCASE("honest peers agree on the transcript") {
        Outcome o = run_handshake(a, b, pki.anchors, now);
        REQUIRE(o.initiator);
        REQUIRE(o.responder);
        CHECK(o.initiator->transcript_hash == o.responder->transcript_hash);
        CHECK(o.initiator->peer_did == b.chain.agent.subject_did);
        CHECK(o.responder->peer_did == a.chain.agent.subject_did);
        CHECK(format_name(o.initiator->peer_name) == kScannerName);
    }
    SUBCASE("sessions differ") {
        Outcome first = run_handshake(a, b, pki.anchors, now);
        Outcome second = run_handshake(a, b, pki.anchors, now);
        CHECK(first.initiator->transcript_hash != second.initiator->transcript_hash);
    }
    SUBCASE("impersonating initiator fails at message 3") {
        Outcome o = run_handshake(impersonating(a, pki.enroll(kRetrainerName)), b, pki.anchors, now);
        CHECK(o.responder_error == ErrorCode::BadSignature);
        CHECK(o.responder_message.find("message 3") != std::string::npos);
        CHECK_FALSE(o.responder);
    }
    SUBCASE("impersonating responder fails at message 2") {
        Outcome o = run_handshake(a, impersonating(b, pki.enroll(kRetrainerName)), pki.anchors, now);
        CHECK(o.initiator_error == ErrorCode::BadSignature);
        CHECK(o.initiator_message.find("message 2") != std::string::npos);
        CHECK(o.responder_error == ErrorCode::BadSignature);  // relayed by the abort
    }
    SUBCASE("expired peer") {
        AgentIdentity stale = pki.enroll(kRetrainerName, {}, kT0, kSecondsPerDay);
        Outcome o = run_handshake(a, stale, pki.anchors, kT0 + 2 * kSecondsPerDay);
        CHECK(o.initiator_error == ErrorCode::CertExpired);
        CHECK_FALSE(o.initiator);
    }
    SUBCASE("untrusted peer") {
        Pki other;
        CertificateAuthority rogue = CertificateAuthority::create(kT0);
        AgentIdentity outsider =
            rogue.enroll(parse_name(kRetrainerName), {}, "http://rogue.test", kT0, kDefaultAgentValidity);
        Outcome o = run_handshake(outsider, b, pki.anchors, now);
        CHECK(o.responder_error == ErrorCode::UntrustedRoot);
    }
    SUBCASE("peer differs from the discovered record") {
        Registry reg(RegistryOptions{}, pki.anchors, allow_all());
        AgentIdentity other = pki.enroll(kScannerName);
        AgentRecord rec = reg.register_agent(
            make_registration_request(other.identity_keys, other.chain, other.endpoint, Label::parse("d")), now);
        Outcome o = run_handshake(a, b, pki.anchors, now, &rec);
        CHECK(o.initiator_error == ErrorCode::NameMismatch);
    }
    SUBCASE("silent peer times out") {
        Pair p;
        HandshakeOptions opts{pki.anchors, now, std::chrono::milliseconds(200)};
        CHECK(code_of([&] { handshake_initiate(a, nullptr, *p.a, opts); }) == ErrorCode::HandshakeTimeout);
    }
}

TEST_CASE("capability checks inside a session") {
    Pki pki;
    AgentIdentity prover = pki.enroll(kDriftName, {"statistical-analysis"});
    AgentIdentity verifier = pki.enroll(kScannerName);
    const UnixSeconds now = kT0 + 100;
    ChallengeStore store;

    auto session_pair = [&](Pair& p) {
        HandshakeOptions opts{pki.anchors, now, std::chrono::milliseconds(2'000)};
        auto responder = std::async(std::launch::async, [&] { return handshake_respond(verifier, *p.b, opts); });
        Session mine = handshake_initiate(prover, nullptr, *p.a, opts);
        return std::make_pair(mine, responder.get());
    };
    auto check = [&](const Label& cap, const std::optional<CapabilityProof>& substitute = std::nullopt) {
        Pair p;
        auto [mine, theirs] = session_pair(p);
        auto verdict = std::async(std::launch::async, [&, theirs = theirs] {
            return serve_capability_request(theirs, *p.b, pki.anchors, store, now);
        });
        AttestationResult seen = request_capability(mine, *p.a, cap, prover, now, substitute);
        CapabilityVerdict v = verdict.get();
        CHECK(seen.granted == v.result.granted);
        CHECK(seen.reason == v.result.reason);
        return v;
    };

    CapabilityVerdict granted = check(Label::parse("statistical-analysis"));
    CHECK(granted.result.granted);
    REQUIRE(granted.proof);

    CapabilityVerdict unknown = check(Label::parse("model-training"));
    CHECK_FALSE(unknown.result.granted);
    CHECK(unknown.result.reason == ErrorCode::UnknownCapability);

    CapabilityVerdict replayed = check(Label::parse("statistical-analysis"), granted.proof);
    CHECK_FALSE(replayed.result.granted);
    CHECK(replayed.result.reason == ErrorCode::NonceReplay);
}

TEST_CASE("signed session messages") {
    Pki pki;
    AgentIdentity a = pki.enroll(kDriftName);
    AgentIdentity b = pki.enroll(kScannerName);
    Pair p;
    HandshakeOptions opts{pki.anchors, kT0 + 100, std::chrono::milliseconds(2'000)};
    auto responder = std::async(std::launch::async, [&] { return handshake_respond(b, *p.b, opts); });
    Session sa = handshake_initiate(a, nullptr, *p.a, opts);
    Session sb = responder.get();

    send_signed(*p.a, sa, Json{{"type", "ping"}, {"n", 1}});
    CHECK(receive_signed(*p.b, sb, std::chrono::milliseconds(500))["n"] == 1);

    // Same body signed by a third key.
    Session forger = sa;
    forger.self_keys = generate_keypair();
    send_signed(*p.a, forger, Json{{"type", "ping"}, {"n", 2}});
    CHECK(code_of([&] { receive_signed(*p.b, sb, std::chrono::milliseconds(500)); }) == ErrorCode::BadSignature);

    p.a->send(Json{{"body", {{"type", "ping"}}}});
    CHECK(code_of([&] { receive_signed(*p.b, sb, std::chrono::milliseconds(500)); }) == ErrorCode::Malformed);
}

TEST_CASE("TCP transport") {
    Pki pki;
    AgentIdentity a = pki.enroll(kDriftName);
    AgentIdentity b = pki.enroll(kScannerName);
    TcpListener listener;
    HandshakeOptions opts{pki.anchors, kT0 + 100, std::chrono::milliseconds(2'000)};

    auto responder = std::async(std::launch::async, [&] {
        auto conn = listener.accept(std::chrono::milliseconds(2'000));
        Session s = handshake_respond(b, *conn, opts);
        Json m = receive_signed(*conn, s, std::chrono::milliseconds(2'000));
        send_signed(*conn, s, Json{{"echo", m["text"]}});
        return s;
    });
    auto conn = TcpTransport::connect("127.0.0.1", listener.port());
    Session s = handshake_initiate(a, nullptr, *conn, opts);
    std::string big(200'000, 'x');
    send_signed(*conn, s, Json{{"text", big}});
    CHECK(receive_signed(*conn, s, std::chrono::milliseconds(2'000))["echo"] == big);
    CHECK(responder.get().transcript_hash == s.transcript_hash);
    conn->close();

    CHECK(code_of([&] { listener.accept(std::chrono::milliseconds(100)); }) == ErrorCode::HandshakeTimeout);
}

TEST_CASE("identity files") {
    Pki pki;
    TempDir dir;
    AgentIdentity id = pki.enroll(kDriftName, {"statistical-analysis"});
    save_identity(id, dir / "keys/drift.json");
    auto perms = std::filesystem::status(dir / "keys/drift.json").permissions();
    CHECK((perms & std::filesystem::perms::group_read) == std::filesystem::perms::none);
    CHECK((perms & std::filesystem::perms::others_read) == std::filesystem::perms::none);

    AgentIdentity back = load_identity(dir / "keys/drift.json");
    CHECK(back.name == id.name);
    CHECK(back.chain == id.chain);
    CHECK(back.identity_keys.public_key() == id.identity_keys.public_key());
    CHECK(back.capabilities.size() == 2);
    CHECK(back.endpoint == id.endpoint);

    Json swapped = identity_to_json(id);
    swapped["chain"] = to_json(pki.enroll(kDriftName).chain);
    CHECK(code_of([&] { identity_from_json(swapped); }) == ErrorCode::Malformed);
    CHECK(code_of([&] { load_identity(dir / "missing.json"); }) == ErrorCode::Malformed);
}
