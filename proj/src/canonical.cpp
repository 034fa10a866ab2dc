#include "ans/canonical.hpp"

namespace ans {

Json parse_document(std::string_view text) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::Malformed, e.what());
    }
}

const Json& require(const Json& obj, std::string_view key) {
    if (!obj.is_object()) throw Error(ErrorCode::Malformed, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw Error(ErrorCode::Malformed, "missing field '" + std::string(key) + "'");
    }
    return *it;
}

std::string require_string(const Json& obj, std::string_view key) {
    const Json& v = require(obj, key);
    if (!v.is_string()) {
        throw Error(ErrorCode::Malformed, "field '" + std::string(key) + "' must be a string");
    }
    return v.get<std::string>();
}

std::int64_t require_int(const Json& obj, std::string_view key) {
    const Json& v = require(obj, key);
    if (!v.is_number_integer()) {
        throw Error(ErrorCode::Malformed, "field '" + std::string(key) + "' must be an integer");
    }
    if (v.is_number_unsigned() &&
        v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
        throw Error(ErrorCode::Malformed, "field '" + std::string(key) + "' out of range");
    }
    return v.get<std::int64_t>();
}

std::uint64_t require_uint(const Json& obj, std::string_view key) {
    const Json& v = require(obj, key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw Error(ErrorCode::Malformed,
                    "field '" + std::string(key) + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

}  // namespace ans
