#pragma once

// Canonical text form shared by certificates, proofs, requests, policies and
// persisted state: a JSON object with keys sorted lexicographically, no
// insignificant whitespace, integers in decimal and byte fields as lowercase
// hex strings. nlohmann::json stores objects in a std::map, so dump() with no
// indent yields exactly this form.

#include <json.hpp>

#include <string>

#include "ans/crypto.hpp"
#include "ans/error.hpp"

namespace ans {

using Json = nlohmann::json;

inline std::string canonical(const Json& doc) { return doc.dump(); }

/// Parses a document, mapping syntax errors to MALFORMED.
Json parse_document(std::string_view text);

// Field accessors that raise MALFORMED with the field path on type mismatch.
const Json& require(const Json& obj, std::string_view key);
std::string require_string(const Json& obj, std::string_view key);
std::int64_t require_int(const Json& obj, std::string_view key);
std::uint64_t require_uint(const Json& obj, std::string_view key);

template <std::size_t N>
std::array<std::uint8_t, N> require_hex(const Json& obj, std::string_view key) {
    auto value = crypto::from_hex_fixed<N>(require_string(obj, key));
    if (!value) {
        throw Error(ErrorCode::Malformed,
                    "field '" + std::string(key) + "' must be " + std::to_string(N * 2) +
                        " hex digits");
    }
    return *value;
}

}  // namespace ans
