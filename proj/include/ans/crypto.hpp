#pragma once

// Thin wrappers over libsodium: Ed25519 signatures, SHA-256, CSPRNG and the
// text encodings used by the canonical format.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ans::crypto {

using PublicKey = std::array<std::uint8_t, 32>;
using Seed = std::array<std::uint8_t, 32>;
using Signature = std::array<std::uint8_t, 64>;
using Digest = std::array<std::uint8_t, 32>;
using Nonce = std::array<std::uint8_t, 32>;
using Bytes = std::vector<std::uint8_t>;

/// Ed25519 key pair. The secret is the 32-byte seed; the expanded signing
/// key is cached so signing does not re-derive it.
class KeyPair {
public:
    static KeyPair generate();
    static KeyPair from_seed(const Seed& seed);

    const PublicKey& public_key() const noexcept { return public_key_; }
    const Seed& seed() const noexcept { return seed_; }

    Signature sign(std::span<const std::uint8_t> message) const;
    Signature sign(std::string_view message) const;

    friend bool operator==(const KeyPair& a, const KeyPair& b) noexcept {
        return a.public_key_ == b.public_key_ && a.seed_ == b.seed_;
    }

private:
    KeyPair() = default;

    PublicKey public_key_{};
    Seed seed_{};
    std::array<std::uint8_t, 64> expanded_{};
};

bool verify(const PublicKey& key, std::span<const std::uint8_t> message, const Signature& sig) noexcept;
bool verify(const PublicKey& key, std::string_view message, const Signature& sig) noexcept;

Digest sha256(std::span<const std::uint8_t> data) noexcept;
Digest sha256(std::string_view data) noexcept;

/// Fills the buffer from the OS CSPRNG. Thread-safe.
void random_bytes(std::span<std::uint8_t> out) noexcept;
Nonce random_nonce() noexcept;
std::uint64_t random_u64() noexcept;

std::string to_hex(std::span<const std::uint8_t> data);

/// Lowercase or uppercase hex accepted; returns nullopt on odd length or bad digit.
std::optional<Bytes> from_hex(std::string_view text);

template <std::size_t N>
std::optional<std::array<std::uint8_t, N>> from_hex_fixed(std::string_view text) {
    auto bytes = from_hex(text);
    if (!bytes || bytes->size() != N) return std::nullopt;
    std::array<std::uint8_t, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = (*bytes)[i];
    return out;
}

/// RFC 4648 base32, lowercase alphabet, no padding.
std::string to_base32(std::span<const std::uint8_t> data);

}  // namespace ans::crypto
