#include "ans/name.hpp"

#include <array>
#include <vector>

#include "ans/error.hpp"

namespace ans {
namespace {

constexpr std::size_t kMaxLabelLength = 63;

bool is_label_char(char c) noexcept {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(text.substr(start));
            return parts;
        }
        parts.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}

std::uint64_t parse_component(std::string_view digits, std::string_view whole) {
    auto fail = [&](const char* why) {
        return Error(ErrorCode::InvalidVersion, "'" + std::string(whole) + "': " + why);
    };
    if (digits.empty()) throw fail("empty component");
    if (digits.size() > 1 && digits[0] == '0') throw fail("leading zero");
    std::uint64_t value = 0;
    for (char c : digits) {
        if (c < '0' || c > '9') throw fail("non-numeric component");
        std::uint64_t d = static_cast<std::uint64_t>(c - '0');
        if (value > (UINT64_MAX - d) / 10) throw fail("component overflows");
        value = value * 10 + d;
    }
    return value;
}

}  // namespace

bool Label::is_valid(std::string_view text) noexcept {
    if (text.empty() || text.size() > kMaxLabelLength) return false;
    if (text.front() == '-' || text.back() == '-') return false;
    for (char c : text) {
        if (!is_label_char(c)) return false;
    }
    return true;
}

Label Label::parse(std::string_view text) {
    if (!is_valid(text)) {
        throw Error(ErrorCode::InvalidLabel, "invalid label '" + std::string(text) + "'");
    }
    return Label(std::string(text));
}

Version parse_version(std::string_view text, bool require_v) {
    std::string_view body = text;
    if (require_v) {
        if (body.empty() || body.front() != 'v') {
            throw Error(ErrorCode::InvalidVersion,
                        "'" + std::string(text) + "': version must start with 'v'");
        }
        body.remove_prefix(1);
    }
    auto parts = split(body, '.');
    if (parts.size() < 2 || parts.size() > 3) {
        throw Error(ErrorCode::InvalidVersion,
                    "'" + std::string(text) + "': expected 2 or 3 numeric components");
    }
    Version v;
    v.major = parse_component(parts[0], text);
    v.minor = parse_component(parts[1], text);
    if (parts.size() == 3) v.patch = parse_component(parts[2], text);
    return v;
}

std::string format_version(const Version& v) {
    std::string out = std::to_string(v.major) + "." + std::to_string(v.minor);
    if (v.patch) out += "." + std::to_string(*v.patch);
    return out;
}

std::strong_ordering compare_versions(const Version& a, const Version& b) noexcept {
    if (auto c = a.major <=> b.major; c != 0) return c;
    if (auto c = a.minor <=> b.minor; c != 0) return c;
    return a.patch.value_or(0) <=> b.patch.value_or(0);
}

std::string_view to_string(Protocol p) noexcept {
    switch (p) {
        case Protocol::A2a: return "a2a";
        case Protocol::Mcp: return "mcp";
        case Protocol::Acp: return "acp";
        case Protocol::Custom: return "custom";
    }
    return "custom";
}

Protocol parse_protocol(std::string_view text) {
    static constexpr std::array kAll = {Protocol::A2a, Protocol::Mcp, Protocol::Acp,
                                        Protocol::Custom};
    for (Protocol p : kAll) {
        if (to_string(p) == text) return p;
    }
    throw Error(ErrorCode::InvalidProtocol, "unknown protocol '" + std::string(text) + "'");
}

AnsName parse_name(std::string_view text) {
    std::size_t sep = text.find("://");
    if (sep == std::string_view::npos) {
        throw Error(ErrorCode::Malformed, "missing '://' in '" + std::string(text) + "'");
    }
    Protocol protocol = parse_protocol(text.substr(0, sep));

    // The version occupies two or three dot-separated tokens, so the body has
    // 3 label tokens + version tokens + 1 extension token.
    auto tokens = split(text.substr(sep + 3), '.');
    if (tokens.size() < 6 || tokens.size() > 7) {
        throw Error(ErrorCode::Malformed,
                    "'" + std::string(text) + "': expected <agent>.<capability>.<provider>."
                                              "v<version>.<extension>");
    }
    Label agent = Label::parse(tokens[0]);
    Label capability = Label::parse(tokens[1]);
    Label provider = Label::parse(tokens[2]);
    Label extension = Label::parse(tokens.back());

    std::string_view first = tokens[3];
    std::string_view last = tokens[tokens.size() - 2];
    std::string_view version_text(first.data(),
                                  static_cast<std::size_t>(last.data() + last.size() - first.data()));
    Version version = parse_version(version_text, /*require_v=*/true);

    return AnsName{protocol, std::move(agent), std::move(capability), std::move(provider),
                   version, std::move(extension)};
}

std::string format_name(const AnsName& n) {
    std::string out;
    out.reserve(96);
    out += to_string(n.protocol);
    out += "://";
    out += n.agent_id.str();
    out += '.';
    out += n.capability.str();
    out += '.';
    out += n.provider.str();
    out += ".v";
    out += format_version(n.version);
    out += '.';
    out += n.extension.str();
    return out;
}

VersionReq parse_version_req(std::string_view text) {
    if (text == "latest") return VersionLatest{};
    if (text.starts_with(">=")) {
        std::string_view rest = text.substr(2);
        bool has_v = !rest.empty() && rest.front() == 'v';
        return VersionAtLeast{parse_version(rest, has_v)};
    }
    bool has_v = !text.empty() && text.front() == 'v';
    return VersionExact{parse_version(text, has_v)};
}

std::string format_version_req(const VersionReq& req) {
    if (std::holds_alternative<VersionLatest>(req)) return "latest";
    if (auto* at_least = std::get_if<VersionAtLeast>(&req)) {
        return ">=" + format_version(at_least->version);
    }
    return format_version(std::get<VersionExact>(req).version);
}

bool matches(const AnsName& n, const NameQuery& q) noexcept {
    if (q.protocol && *q.protocol != n.protocol) return false;
    if (q.agent_id && *q.agent_id != n.agent_id) return false;
    if (q.capability && *q.capability != n.capability) return false;
    if (q.provider && *q.provider != n.provider) return false;
    if (q.extension && *q.extension != n.extension) return false;
    if (q.version_req) {
        if (auto* exact = std::get_if<VersionExact>(&*q.version_req)) {
            return compare_versions(n.version, exact->version) == 0;
        }
        if (auto* at_least = std::get_if<VersionAtLeast>(&*q.version_req)) {
            return compare_versions(n.version, at_least->version) >= 0;
        }
    }
    return true;
}

}  // namespace ans
