#pragma once

// Hierarchical agent names:
//
//   <protocol>://<agent-id>.<capability>.<provider>.v<major>.<minor>[.<patch>].<extension>
//
// e.g. a2a://concept-drift-detector.concept-drift-detection.research-lab.v2.1.prod

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace ans {

/// DNS-label-like token: 1-63 chars of [a-z0-9-], no leading or trailing hyphen.
class Label {
public:
    /// Throws Error(INVALID_LABEL).
    static Label parse(std::string_view text);
    static bool is_valid(std::string_view text) noexcept;

    const std::string& str() const noexcept { return value_; }

    friend bool operator==(const Label&, const Label&) = default;
    friend auto operator<=>(const Label&, const Label&) = default;

private:
    explicit Label(std::string value) : value_(std::move(value)) {}
    std::string value_;
};

struct Version {
    std::uint64_t major = 0;
    std::uint64_t minor = 0;
    std::optional<std::uint64_t> patch;

    /// Structural equality: 1.0 and 1.0.0 are distinct values (they render
    /// differently) even though compare_versions orders them as equal.
    friend bool operator==(const Version&, const Version&) = default;
};

/// Parses "2.1" / "2.1.3"; with `require_v` the text must be "v2.1" / "v2.1.3".
/// Throws Error(INVALID_VERSION).
Version parse_version(std::string_view text, bool require_v = false);
/// Renders without the leading "v": "2.1", "1.2.3".
std::string format_version(const Version& v);

/// Lexicographic on (major, minor, patch) with an absent patch read as 0.
std::strong_ordering compare_versions(const Version& a, const Version& b) noexcept;

enum class Protocol { A2a, Mcp, Acp, Custom };

std::string_view to_string(Protocol p) noexcept;
/// Throws Error(INVALID_PROTOCOL).
Protocol parse_protocol(std::string_view text);

struct AnsName {
    Protocol protocol = Protocol::A2a;
    Label agent_id;
    Label capability;
    Label provider;
    Version version;
    Label extension;

    friend bool operator==(const AnsName&, const AnsName&) = default;
};

/// Throws Error with INVALID_PROTOCOL, INVALID_LABEL, INVALID_VERSION or MALFORMED.
AnsName parse_name(std::string_view text);
std::string format_name(const AnsName& name);

struct VersionExact {
    Version version;
    friend bool operator==(const VersionExact&, const VersionExact&) = default;
};
struct VersionAtLeast {
    Version version;
    friend bool operator==(const VersionAtLeast&, const VersionAtLeast&) = default;
};
struct VersionLatest {
    friend bool operator==(const VersionLatest&, const VersionLatest&) = default;
};
using VersionReq = std::variant<VersionExact, VersionAtLeast, VersionLatest>;

/// Accepts "latest", "2.1", "v2.1", ">=2.0". Throws Error(INVALID_VERSION).
VersionReq parse_version_req(std::string_view text);
std::string format_version_req(const VersionReq& req);

/// Discovery query; absent fields match anything.
struct NameQuery {
    std::optional<Protocol> protocol;
    std::optional<Label> agent_id;
    std::optional<Label> capability;
    std::optional<Label> provider;
    std::optional<Label> extension;
    std::optional<VersionReq> version_req;

    bool empty() const noexcept {
        return !protocol && !agent_id && !capability && !provider && !extension && !version_req;
    }
};

/// True iff every set field equals the name's field and the version requirement
/// holds. `latest` matches any version here; the registry narrows it.
bool matches(const AnsName& name, const NameQuery& query) noexcept;

}  // namespace ans
