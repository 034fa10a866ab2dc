#include <doctest.h>

#include <set>

#include "ans/identity.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace ans;
using namespace ans::test;

namespace {

ErrorCode chain_code(const CertificateChain& chain, std::span<const Certificate> anchors, UnixSeconds now) {
    auto err = check_chain(chain, anchors, now);
    REQUIRE(err.has_value());
    return err->code();
}

}  // namespace

TEST_CASE("key generation") {
    KeyPair a = generate_keypair(seed_of(7));
    KeyPair b = generate_keypair(seed_of(7));
    CHECK(a.public_key() == b.public_key());
    CHECK(generate_keypair().public_key() != generate_keypair().public_key());

    auto sig = a.sign("hello");
    CHECK(crypto::verify(a.public_key(), "hello", sig));
    CHECK_FALSE(crypto::verify(a.public_key(), "hellp", sig));
}

TEST_CASE("DIDs") {
    KeyPair k = generate_keypair(seed_of(9));
    Did d = Did::derive(k.public_key());
    CHECK(d == Did::derive(k.public_key()));
    CHECK(d.str().rfind("did:ans:", 0) == 0);
    CHECK(d.str().size() == 8 + 52);
    CHECK(Did::parse(d.str()) == d);
    CHECK_THROWS_AS(Did::parse("did:web:example.com"), Error);
    CHECK_THROWS_AS(Did::parse("did:ans:ABC"), Error);

    std::set<std::string> seen;
    for (int i = 0; i < 10'000; ++i) seen.insert(Did::derive(generate_keypair().public_key()).str());
    CHECK(seen.size() == 10'000);
}

TEST_CASE("issuance rules") {
    Pki pki;
    const auto& ca = pki.ca;
    KeyPair agent = generate_keypair(seed_of(3));

    IssueRequest req;
    req.subject_key = agent.public_key();
    req.role = Role::Agent;
    req.subject_name = parse_name(kDriftName);
    req.not_before = kT0;
    req.validity_seconds = 90 * kSecondsPerDay;
    Certificate cert = issue_certificate(ca.intermediate_keys, ca.intermediate, req);
    CHECK(cert.not_after - cert.not_before == 7'776'000);
    CHECK(cert.issuer_did == ca.intermediate.subject_did);
    CHECK(cert.subject_did == Did::derive(agent.public_key()));

    SUBCASE("intermediate cannot issue an intermediate") {
        IssueRequest bad;
        bad.subject_key = agent.public_key();
        bad.role = Role::Intermediate;
        bad.not_before = kT0;
        try {
            issue_certificate(ca.intermediate_keys, ca.intermediate, bad);
            FAIL("issued");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::RoleViolation);
        }
    }
    SUBCASE("subject window past issuer expiry") {
        IssueRequest late = req;
        late.not_before = ca.intermediate.not_after - kSecondsPerDay;
        try {
            issue_certificate(ca.intermediate_keys, ca.intermediate, late);
            FAIL("issued");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::WindowExceeded);
        }
    }
    SUBCASE("root is self-signed") {
        CHECK(ca.root.issuer_did == ca.root.subject_did);
        CHECK(ca.root.role == Role::Root);
        CHECK(ca.root.not_before < ca.root.not_after);
    }
}

TEST_CASE("chain validation outcomes") {
    Pki pki;
    AgentIdentity id = pki.enroll(kDriftName, {"statistical-analysis"});
    const UnixSeconds now = kT0 + 10 * kSecondsPerDay;

    CHECK_NOTHROW(validate_chain(id.chain, pki.anchors, now));
    CHECK(id.chain.agent.capability_commitments.size() == 2);

    CertificateChain flipped = id.chain;
    flipped.agent.signature[0] ^= 0x01;
    CHECK(chain_code(flipped, pki.anchors, now) == ErrorCode::ChainInvalid);

    CHECK(chain_code(id.chain, pki.anchors, id.chain.agent.not_after + 1) == ErrorCode::CertExpired);
    CHECK(chain_code(id.chain, pki.anchors, kT0 - 1) == ErrorCode::CertNotYetValid);
    CHECK_NOTHROW(validate_chain(id.chain, pki.anchors, id.chain.agent.not_after));

    CertificateAuthority stranger = CertificateAuthority::create(kT0);
    auto foreign = stranger.anchors();
    CHECK(chain_code(id.chain, foreign, now) == ErrorCode::UntrustedRoot);

    // Expired and badly signed: the window is reported first.
    CHECK(chain_code(flipped, pki.anchors, id.chain.agent.not_after + 1) == ErrorCode::CertExpired);

    CertificateChain swapped = id.chain;
    std::swap(swapped.agent, swapped.intermediate);
    CHECK(chain_code(swapped, pki.anchors, now) == ErrorCode::ChainInvalid);
}

TEST_CASE("remaining validity") {
    Pki pki;
    AgentIdentity id = pki.enroll(kDriftName);
    const Certificate& c = id.chain.agent;
    CHECK(remaining_validity(c, c.not_after) == 0);
    CHECK(remaining_validity(c, c.not_after - 29 * kSecondsPerDay) < 30 * kSecondsPerDay);
    CHECK(remaining_validity(c, c.not_after + 5) == -5);
}

TEST_CASE("canonical bytes") {
    Pki pki;
    Certificate c = pki.enroll(kDriftName).chain.agent;
    CHECK(canonical_bytes(c) == canonical_bytes(c));

    Json forward{{"a", 1}, {"b", Json{{"y", 2}, {"x", 3}}}};
    Json backward;
    backward["b"]["x"] = 3;
    backward["b"]["y"] = 2;
    backward["a"] = 1;
    CHECK(canonical(forward) == canonical(backward));
    CHECK(canonical(forward) == R"({"a":1,"b":{"x":3,"y":2}})");

    Certificate bumped = c;
    bumped.serial += 1;
    CHECK(canonical_bytes(bumped) != canonical_bytes(c));
    CHECK(canonical_bytes(c).find("signature") == std::string::npos);
}

TEST_CASE("certificate text round trip and strict schema") {
    Pki pki;
    Certificate c = pki.enroll(kDriftName).chain.agent;
    CHECK(certificate_from_json(to_json(c)) == c);

    Json extra = to_json(c);
    extra["comment"] = "hi";
    CHECK_THROWS_AS(certificate_from_json(extra), Error);

    Json short_sig = to_json(c);
    short_sig["signature"] = "abcd";
    CHECK_THROWS_AS(certificate_from_json(short_sig), Error);
}

TEST_CASE("golden chain from an independent implementation") {
    Json golden = Json::parse(read_file(std::string(ANS_TEST_DATA) + "/golden_chain.json"));
    CertificateChain chain = chain_from_json(golden["chain"]);
    std::vector<Certificate> anchors{chain.root};

    CHECK(canonical_bytes(chain.agent) == golden["agent_canonical"].get<std::string>());
    CHECK(Did::derive(chain.agent.public_key).str() == golden["agent_did"].get<std::string>());
    CHECK(Did::derive(generate_keypair(seed_of(3)).public_key()).str() == golden["agent_did"].get<std::string>());
    CHECK(to_json(chain) == golden["chain"]);
    CHECK_FALSE(check_chain(chain, anchors, golden["valid_at"].get<UnixSeconds>()).has_value());
    CHECK(chain_code(chain, anchors, golden["expired_at"].get<UnixSeconds>()) == ErrorCode::CertExpired);

    // Re-issuing the same content locally yields the same signature bytes.
    KeyPair inter = generate_keypair(seed_of(2));
    CHECK(inter.sign(canonical_bytes(chain.agent)) == chain.agent.signature);
}

TEST_CASE("any single-field mutation invalidates a chain") {
    auto r = chain_mutation(1'000, 7);
    INFO(r.first());
    CHECK(r.cases == 1'000);
    CHECK(r.ok());
}
