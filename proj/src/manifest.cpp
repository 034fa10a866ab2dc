#include "ans/manifest.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>

namespace ans {
namespace {

std::int64_t parse_positive(std::string_view digits, std::string_view whole, const char* what) {
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size() || value < 0) {
        throw Error(ErrorCode::Malformed,
                    std::string(what) + " '" + std::string(whole) + "' is not a valid quantity");
    }
    return value;
}

std::string field_string(const Json& obj, std::string_view key, std::string_view path) {
    try {
        return require_string(obj, key);
    } catch (const Error& e) {
        throw Error(ErrorCode::Malformed, std::string(path) + ": " + e.detail());
    }
}

std::string field_label(const Json& obj, std::string_view key, std::string_view path) {
    std::string v = field_string(obj, key, path);
    if (!Label::is_valid(v)) {
        throw Error(ErrorCode::Malformed,
                    std::string(path) + "." + std::string(key) + " '" + v + "' is not a valid label");
    }
    return v;
}

std::vector<std::string> field_string_list(const Json& obj, std::string_view key,
                                           std::string_view path, bool required) {
    std::vector<std::string> out;
    auto it = obj.find(key);
    if (it == obj.end()) {
        if (required) {
            throw Error(ErrorCode::Malformed,
                        std::string(path) + ": missing field '" + std::string(key) + "'");
        }
        return out;
    }
    if (!it->is_array()) {
        throw Error(ErrorCode::Malformed, std::string(path) + "." + std::string(key) + " must be a list");
    }
    for (const auto& v : *it) {
        if (!v.is_string()) {
            throw Error(ErrorCode::Malformed,
                        std::string(path) + "." + std::string(key) + " entries must be strings");
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

Json yaml_node_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return nullptr;
        case YAML::NodeType::Scalar:
            return node.Scalar();
        case YAML::NodeType::Sequence: {
            Json arr = Json::array();
            for (const auto& item : node) arr.push_back(yaml_node_to_json(item));
            return arr;
        }
        case YAML::NodeType::Map: {
            Json obj = Json::object();
            for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_node_to_json(kv.second);
            return obj;
        }
    }
    return nullptr;
}

}  // namespace

std::int64_t parse_duration(std::string_view text) {
    if (text.size() < 2) {
        throw Error(ErrorCode::Malformed, "duration '" + std::string(text) + "' must be <n>d|h|m|s");
    }
    std::int64_t unit = 0;
    switch (text.back()) {
        case 'd': unit = kSecondsPerDay; break;
        case 'h': unit = 3'600; break;
        case 'm': unit = 60; break;
        case 's': unit = 1; break;
        default:
            throw Error(ErrorCode::Malformed,
                        "duration '" + std::string(text) + "' must end in d, h, m or s");
    }
    std::int64_t n = parse_positive(text.substr(0, text.size() - 1), text, "duration");
    if (n == 0 || n > INT64_MAX / unit) {
        throw Error(ErrorCode::Malformed, "duration '" + std::string(text) + "' out of range");
    }
    return n * unit;
}

std::int64_t parse_cpu_quantity(std::string_view text) {
    if (text.ends_with('m')) return parse_positive(text.substr(0, text.size() - 1), text, "cpu");
    std::int64_t cores = parse_positive(text, text, "cpu");
    if (cores > INT64_MAX / 1000) throw Error(ErrorCode::Malformed, "cpu quantity out of range");
    return cores * 1000;
}

std::int64_t parse_memory_quantity(std::string_view text) {
    if (text.ends_with("Mi")) return parse_positive(text.substr(0, text.size() - 2), text, "memory");
    if (text.ends_with("Gi")) {
        std::int64_t gi = parse_positive(text.substr(0, text.size() - 2), text, "memory");
        if (gi > INT64_MAX / 1024) throw Error(ErrorCode::Malformed, "memory quantity out of range");
        return gi * 1024;
    }
    throw Error(ErrorCode::Malformed, "memory '" + std::string(text) + "' must use Mi or Gi");
}

AgentManifest manifest_from_json(const Json& doc) {
    if (!doc.is_object()) throw Error(ErrorCode::Malformed, "manifest must be a mapping");
    AgentManifest m;
    m.api_version = field_string(doc, "apiVersion", "manifest");
    if (m.api_version != "ans.io/v1") {
        throw Error(ErrorCode::Malformed, "apiVersion must be 'ans.io/v1', got '" + m.api_version + "'");
    }
    m.kind = field_string(doc, "kind", "manifest");
    if (m.kind != "Agent") {
        throw Error(ErrorCode::Malformed, "kind must be 'Agent', got '" + m.kind + "'");
    }
    auto meta_it = doc.find("metadata");
    if (meta_it == doc.end() || !meta_it->is_object()) {
        throw Error(ErrorCode::Malformed, "manifest: missing mapping 'metadata'");
    }
    m.name = field_label(*meta_it, "name", "metadata");
    m.namespace_ = field_label(*meta_it, "namespace", "metadata");

    auto spec_it = doc.find("spec");
    if (spec_it == doc.end() || !spec_it->is_object()) {
        throw Error(ErrorCode::Malformed, "manifest: missing mapping 'spec'");
    }
    const Json& spec = *spec_it;
    m.ans_name = field_string(spec, "ansName", "spec");
    m.capabilities = field_string_list(spec, "capabilities", "spec", true);
    for (const auto& c : m.capabilities) {
        if (!Label::is_valid(c)) {
            throw Error(ErrorCode::Malformed, "spec.capabilities entry '" + c + "' is not a valid label");
        }
    }
    m.provider = field_label(spec, "provider", "spec");
    m.version = field_string(spec, "version", "spec");
    m.environment = field_label(spec, "environment", "spec");
    m.policies = field_string_list(spec, "policies", "spec", false);

    auto cert_it = spec.find("certificate");
    if (cert_it == spec.end() || !cert_it->is_object()) {
        throw Error(ErrorCode::Malformed, "spec: missing mapping 'certificate'");
    }
    m.certificate_issuer = field_string(*cert_it, "issuer", "spec.certificate");
    m.certificate_validity = field_string(*cert_it, "validity", "spec.certificate");
    parse_duration(m.certificate_validity);
    if (auto chain_it = cert_it->find("chain"); chain_it != cert_it->end()) {
        m.chain = chain_from_json(*chain_it);
    }

    if (auto res_it = spec.find("resources"); res_it != spec.end()) {
        if (!res_it->is_object()) throw Error(ErrorCode::Malformed, "spec.resources must be a mapping");
        if (res_it->contains("cpu")) {
            m.resources.cpu_millicores = parse_cpu_quantity(field_string(*res_it, "cpu", "spec.resources"));
        }
        if (res_it->contains("memory")) {
            m.resources.memory_mebibytes =
                parse_memory_quantity(field_string(*res_it, "memory", "spec.resources"));
        }
    }
    return m;
}

Json to_json(const AgentManifest& m) {
    Json certificate{{"issuer", m.certificate_issuer}, {"validity", m.certificate_validity}};
    if (m.chain) certificate["chain"] = to_json(*m.chain);
    Json spec{{"ansName", m.ans_name},
              {"capabilities", m.capabilities},
              {"provider", m.provider},
              {"version", m.version},
              {"environment", m.environment},
              {"certificate", std::move(certificate)},
              {"policies", m.policies}};
    if (m.resources.cpu_millicores || m.resources.memory_mebibytes) {
        Json res = Json::object();
        if (m.resources.cpu_millicores) res["cpu"] = std::to_string(*m.resources.cpu_millicores) + "m";
        if (m.resources.memory_mebibytes) {
            res["memory"] = std::to_string(*m.resources.memory_mebibytes) + "Mi";
        }
        spec["resources"] = std::move(res);
    }
    return Json{{"apiVersion", m.api_version},
                {"kind", m.kind},
                {"metadata", {{"name", m.name}, {"namespace", m.namespace_}}},
                {"spec", std::move(spec)}};
}

Json yaml_to_json(std::string_view text) {
    try {
        return yaml_node_to_json(YAML::Load(std::string(text)));
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::Malformed, std::string("YAML: ") + e.what());
    }
}

AgentManifest parse_manifest_text(std::string_view text) {
    auto first = std::find_if(text.begin(), text.end(),
                              [](char c) { return c != ' ' && c != '\t' && c != '\n' && c != '\r'; });
    if (first != text.end() && *first == '{') return manifest_from_json(parse_document(text));
    return manifest_from_json(yaml_to_json(text));
}

std::vector<ManifestIssue> check_consistency(const AgentManifest& m) {
    std::vector<ManifestIssue> issues;
    std::optional<AnsName> parsed;
    try {
        parsed = parse_name(m.ans_name);
    } catch (const Error& e) {
        issues.push_back({ErrorCode::InvalidName, "spec.ansName: " + std::string(e.what())});
        return issues;
    }
    const AnsName& name = *parsed;
    const std::string& cap = name.capability.str();
    if (std::find(m.capabilities.begin(), m.capabilities.end(), cap) == m.capabilities.end()) {
        issues.push_back({ErrorCode::NameMismatch,
                          "ansName capability '" + cap + "' is not listed in spec.capabilities"});
    }
    if (name.provider.str() != m.provider) {
        issues.push_back({ErrorCode::NameMismatch, "ansName provider '" + name.provider.str() +
                                                       "' differs from spec.provider '" +
                                                       m.provider + "'"});
    }
    if (format_version(name.version) != m.version) {
        issues.push_back({ErrorCode::NameMismatch, "ansName version 'v" + format_version(name.version) +
                                                       "' differs from spec.version '" + m.version +
                                                       "'"});
    }
    if (name.extension.str() != m.environment) {
        issues.push_back({ErrorCode::NameMismatch, "ansName extension '" + name.extension.str() +
                                                       "' differs from spec.environment '" +
                                                       m.environment + "'"});
    }
    if (m.chain && m.chain->agent.subject_name != name) {
        issues.push_back({ErrorCode::NameMismatch,
                          "attached certificate subject does not match ansName"});
    }
    return issues;
}

}  // namespace ans
