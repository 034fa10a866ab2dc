#include "ans/crypto.hpp"

#include <sodium.h>

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace ans::crypto {
namespace {

struct SodiumInit {
    SodiumInit() {
        if (sodium_init() < 0) {
            throw std::runtime_error("libsodium initialisation failed");
        }
    }
};

void ensure_init() {
    static const SodiumInit init;
}

}  // namespace

KeyPair KeyPair::generate() {
    ensure_init();
    Seed seed{};
    randombytes_buf(seed.data(), seed.size());
    KeyPair kp = from_seed(seed);
    sodium_memzero(seed.data(), seed.size());
    return kp;
}

KeyPair KeyPair::from_seed(const Seed& seed) {
    ensure_init();
    KeyPair kp;
    kp.seed_ = seed;
    crypto_sign_ed25519_seed_keypair(kp.public_key_.data(), kp.expanded_.data(), seed.data());
    return kp;
}

Signature KeyPair::sign(std::span<const std::uint8_t> message) const {
    Signature sig{};
    crypto_sign_ed25519_detached(sig.data(), nullptr, message.data(), message.size(),
                                 expanded_.data());
    return sig;
}

Signature KeyPair::sign(std::string_view message) const {
    return sign(std::span(reinterpret_cast<const std::uint8_t*>(message.data()), message.size()));
}

bool verify(const PublicKey& key, std::span<const std::uint8_t> message,
            const Signature& sig) noexcept {
    ensure_init();
    return crypto_sign_ed25519_verify_detached(sig.data(), message.data(), message.size(),
                                               key.data()) == 0;
}

bool verify(const PublicKey& key, std::string_view message, const Signature& sig) noexcept {
    return verify(key,
                  std::span(reinterpret_cast<const std::uint8_t*>(message.data()), message.size()),
                  sig);
}

Digest sha256(std::span<const std::uint8_t> data) noexcept {
    ensure_init();
    Digest out{};
    crypto_hash_sha256(out.data(), data.data(), data.size());
    return out;
}

Digest sha256(std::string_view data) noexcept {
    return sha256(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

void random_bytes(std::span<std::uint8_t> out) noexcept {
    ensure_init();
    randombytes_buf(out.data(), out.size());
}

Nonce random_nonce() noexcept {
    Nonce n{};
    random_bytes(n);
    return n;
}

std::uint64_t random_u64() noexcept {
    std::uint64_t v = 0;
    random_bytes(std::span(reinterpret_cast<std::uint8_t*>(&v), sizeof v));
    return v;
}

std::string to_hex(std::span<const std::uint8_t> data) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0x0f]);
    }
    return out;
}

std::optional<Bytes> from_hex(std::string_view text) {
    if (text.size() % 2 != 0) return std::nullopt;
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    Bytes out;
    out.reserve(text.size() / 2);
    for (std::size_t i = 0; i < text.size(); i += 2) {
        int hi = nibble(text[i]);
        int lo = nibble(text[i + 1]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
    }
    return out;
}

std::string to_base32(std::span<const std::uint8_t> data) {
    static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz234567";
    std::string out;
    out.reserve((data.size() * 8 + 4) / 5);
    std::uint32_t buffer = 0;
    int bits = 0;
    for (std::uint8_t b : data) {
        buffer = (buffer << 8) | b;
        bits += 8;
        while (bits >= 5) {
            out.push_back(kAlphabet[(buffer >> (bits - 5)) & 0x1f]);
            bits -= 5;
        }
    }
    if (bits > 0) out.push_back(kAlphabet[(buffer << (5 - bits)) & 0x1f]);
    return out;
}

}  // namespace ans::crypto
