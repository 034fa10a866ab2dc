#include "ans/registry.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ans {
namespace {

Json commitments_json(const std::vector<CapabilityCommitment>& cs) {
    Json arr = Json::array();
    for (const auto& c : cs) arr.push_back(to_json(c));
    return arr;
}

std::vector<CapabilityCommitment> commitments_from(const Json& arr) {
    if (!arr.is_array()) throw Error(ErrorCode::Malformed, "commitments must be an array");
    std::vector<CapabilityCommitment> out;
    for (const auto& c : arr) out.push_back(commitment_from_json(c));
    return out;
}

bool valid_endpoint(std::string_view url) {
    for (std::string_view scheme : {"http://", "https://", "tcp://"}) {
        if (url.starts_with(scheme)) {
            std::string_view rest = url.substr(scheme.size());
            return !rest.empty() && rest.front() != '/' && rest.find(' ') == std::string_view::npos;
        }
    }
    return false;
}

void index_add(RegistryState& s, const AgentRecord& r) {
    if (r.status != RecordStatus::Active) return;
    std::string key = format_name(r.name);
    for (const auto& c : r.commitments) s.capability_index[c.capability.str()].insert(key);
}

void index_remove(RegistryState& s, const AgentRecord& r) {
    std::string key = format_name(r.name);
    for (const auto& c : r.commitments) {
        auto it = s.capability_index.find(c.capability.str());
        if (it == s.capability_index.end()) continue;
        it->second.erase(key);
        if (it->second.empty()) s.capability_index.erase(it);
    }
}

bool verify_lifecycle(const crypto::PublicKey& key, std::string_view action, std::string_view name,
                      const crypto::Signature& sig, UnixSeconds now) {
    std::int64_t w = signature_window(now);
    return crypto::verify(key, lifecycle_message(action, name, w), sig) ||
           crypto::verify(key, lifecycle_message(action, name, w - 1), sig);
}

}  // namespace

std::string_view to_string(RecordStatus s) noexcept {
    return s == RecordStatus::Active ? "active" : "revoked";
}

Json to_json(const AgentRecord& r) {
    return Json{{"name", format_name(r.name)},
                {"did", r.did.str()},
                {"endpoint", r.endpoint},
                {"chain", to_json(r.chain)},
                {"commitments", commitments_json(r.commitments)},
                {"namespace", r.namespace_.str()},
                {"registered_at", r.registered_at},
                {"expires_at", r.expires_at},
                {"status", to_string(r.status)}};
}

AgentRecord record_from_json(const Json& j) {
    std::string status = require_string(j, "status");
    if (status != "active" && status != "revoked") {
        throw Error(ErrorCode::Malformed, "unknown record status '" + status + "'");
    }
    std::string ns = require_string(j, "namespace");
    if (!Label::is_valid(ns)) throw Error(ErrorCode::Malformed, "namespace is not a label");
    return AgentRecord{parse_name(require_string(j, "name")),
                       Did::parse(require_string(j, "did")),
                       require_string(j, "endpoint"),
                       chain_from_json(require(j, "chain")),
                       commitments_from(require(j, "commitments")),
                       Label::parse(ns),
                       require_int(j, "registered_at"),
                       require_int(j, "expires_at"),
                       status == "active" ? RecordStatus::Active : RecordStatus::Revoked};
}

AgentManifest manifest_for(const AgentRecord& r) {
    AgentManifest m;
    m.name = r.name.agent_id.str();
    m.namespace_ = r.namespace_.str();
    m.ans_name = format_name(r.name);
    for (const auto& c : r.commitments) m.capabilities.push_back(c.capability.str());
    m.provider = r.name.provider.str();
    m.version = format_version(r.name.version);
    m.environment = r.name.extension.str();
    m.certificate_issuer = r.chain.intermediate.subject_did.str();
    m.certificate_validity =
        std::to_string(r.chain.agent.not_after - r.chain.agent.not_before) + "s";
    m.chain = r.chain;
    return m;
}

std::string canonical_request_bytes(const RegistrationRequest& req) {
    return canonical(Json{{"name", req.name},
                          {"did", req.did.str()},
                          {"endpoint", req.endpoint},
                          {"chain", to_json(req.chain)},
                          {"commitments", commitments_json(req.commitments)},
                          {"namespace", req.namespace_}});
}

Json to_json(const RegistrationRequest& req) {
    return Json{{"name", req.name},
                {"did", req.did.str()},
                {"endpoint", req.endpoint},
                {"chain", to_json(req.chain)},
                {"commitments", commitments_json(req.commitments)},
                {"namespace", req.namespace_},
                {"request_signature", crypto::to_hex(req.request_signature)}};
}

RegistrationRequest registration_request_from_json(const Json& j) {
    RegistrationRequest req;
    req.name = require_string(j, "name");
    req.did = Did::parse(require_string(j, "did"));
    req.endpoint = require_string(j, "endpoint");
    req.chain = chain_from_json(require(j, "chain"));
    req.commitments = commitments_from(require(j, "commitments"));
    req.namespace_ = require_string(j, "namespace");
    req.request_signature = require_hex<64>(j, "request_signature");
    return req;
}

RegistrationRequest make_registration_request(const KeyPair& identity,
                                              const CertificateChain& chain,
                                              std::string endpoint, const Label& namespace_) {
    RegistrationRequest req;
    req.name = chain.agent.subject_name ? format_name(*chain.agent.subject_name) : std::string{};
    req.did = chain.agent.subject_did;
    req.endpoint = std::move(endpoint);
    req.chain = chain;
    req.commitments = chain.agent.capability_commitments;
    req.namespace_ = namespace_.str();
    req.request_signature = identity.sign(canonical_request_bytes(req));
    return req;
}

std::string lifecycle_message(std::string_view action, std::string_view name, std::int64_t window) {
    return canonical(Json{{"action", action}, {"name", name}, {"window", window}});
}

crypto::Signature sign_renewal(const KeyPair& key, std::string_view name, UnixSeconds now) {
    return key.sign(lifecycle_message("renew", name, signature_window(now)));
}

crypto::Signature sign_revocation(const KeyPair& key, std::string_view name, UnixSeconds now) {
    return key.sign(lifecycle_message("revoke", name, signature_window(now)));
}

std::string_view to_string(EventKind k) noexcept {
    switch (k) {
        case EventKind::Registered: return "Registered";
        case EventKind::Renewed: return "Renewed";
        case EventKind::Revoked: return "Revoked";
    }
    return "Registered";
}

Json to_json(const RegistryEvent& e) {
    return Json{{"seq", e.seq}, {"kind", to_string(e.kind)}, {"payload", e.payload}, {"at", e.at}};
}

RegistryEvent event_from_json(const Json& j) {
    RegistryEvent e;
    e.seq = require_uint(j, "seq");
    std::string kind = require_string(j, "kind");
    if (kind == "Registered") {
        e.kind = EventKind::Registered;
    } else if (kind == "Renewed") {
        e.kind = EventKind::Renewed;
    } else if (kind == "Revoked") {
        e.kind = EventKind::Revoked;
    } else {
        throw Error(ErrorCode::Malformed, "unknown event kind '" + kind + "'");
    }
    e.payload = require(j, "payload");
    e.at = require_int(j, "at");
    return e;
}

void RegistryState::apply(const RegistryEvent& e) {
    if (e.seq != last_seq + 1) {
        throw Error(ErrorCode::LogCorrupt, "expected seq " + std::to_string(last_seq + 1) +
                                               ", found " + std::to_string(e.seq));
    }
    switch (e.kind) {
        case EventKind::Registered: {
            AgentRecord rec = record_from_json(e.payload);
            std::string key = format_name(rec.name);
            if (auto it = records.find(key); it != records.end()) {
                index_remove(*this, it->second);
                records.erase(it);
            }
            index_add(*this, rec);
            records.emplace(key, std::move(rec));
            break;
        }
        case EventKind::Renewed: {
            auto it = records.find(require_string(e.payload, "name"));
            if (it == records.end()) throw Error(ErrorCode::LogCorrupt, "renewal of unknown agent");
            it->second.expires_at = require_int(e.payload, "expires_at");
            break;
        }
        case EventKind::Revoked: {
            auto it = records.find(require_string(e.payload, "name"));
            if (it == records.end()) throw Error(ErrorCode::LogCorrupt, "revocation of unknown agent");
            index_remove(*this, it->second);
            it->second.status = RecordStatus::Revoked;
            break;
        }
    }
    last_seq = e.seq;
}

bool RegistryState::index_consistent() const {
    std::unordered_map<std::string, std::set<std::string>> scan;
    for (const auto& [key, rec] : records) {
        if (rec.status != RecordStatus::Active) continue;
        for (const auto& c : rec.commitments) scan[c.capability.str()].insert(key);
    }
    return scan == capability_index;
}

Json snapshot_document(const RegistryState& state) {
    Json records = Json::array();
    for (const auto& [_, rec] : state.records) records.push_back(to_json(rec));
    return Json{{"last_seq", state.last_seq}, {"records", std::move(records)}};
}

RegistryState state_from_snapshot(const Json& doc) {
    RegistryState s;
    s.last_seq = require_uint(doc, "last_seq");
    const Json& records = require(doc, "records");
    if (!records.is_array()) throw Error(ErrorCode::Malformed, "snapshot records must be an array");
    for (const auto& rj : records) {
        AgentRecord rec = record_from_json(rj);
        index_add(s, rec);
        s.records.emplace(format_name(rec.name), std::move(rec));
    }
    return s;
}

EventLog::EventLog(const std::filesystem::path& path, bool fsync_each_append)
    : fsync_(fsync_each_append), path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) {
        throw Error(ErrorCode::Internal, "cannot open event log " + path.string() + ": " +
                                             std::strerror(errno));
    }
}

EventLog::~EventLog() {
    if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const RegistryEvent& e) {
    std::string line = canonical(to_json(e));
    line.push_back('\n');
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
        ssize_t n = ::write(fd_, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(ErrorCode::Internal, "event log write failed: " + std::string(std::strerror(errno)));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    if (fsync_ && ::fdatasync(fd_) != 0) {
        throw Error(ErrorCode::Internal, "event log sync failed: " + std::string(std::strerror(errno)));
    }
}

RecoveryResult recover_from_text(std::string_view log_text, const std::optional<Json>& snapshot) {
    RecoveryResult result;
    if (snapshot) {
        try {
            result.state = state_from_snapshot(*snapshot);
        } catch (const Error& e) {
            throw Error(ErrorCode::LogCorrupt, std::string("snapshot unreadable: ") + e.what());
        }
    }
    std::uint64_t prev_seq = 0;
    bool first = true;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < log_text.size()) {
        std::size_t end = log_text.find('\n', pos);
        std::string_view line = log_text.substr(pos, end == std::string_view::npos ? end : end - pos);
        pos = end == std::string_view::npos ? log_text.size() : end + 1;
        ++line_no;
        if (line.empty()) continue;
        auto corrupt = [&](const std::string& why) {
            result.corruption = Error(ErrorCode::LogCorrupt,
                                      "line " + std::to_string(line_no) + ": " + why);
        };
        RegistryEvent e;
        try {
            e = event_from_json(parse_document(line));
        } catch (const Error& err) {
            corrupt(err.what());
            break;
        }
        if (!first && e.seq != prev_seq + 1) {
            corrupt("sequence gap: " + std::to_string(prev_seq) + " -> " + std::to_string(e.seq));
            break;
        }
        first = false;
        prev_seq = e.seq;
        if (e.seq <= result.state.last_seq) continue;  // covered by the snapshot
        try {
            result.state.apply(e);
        } catch (const Error& err) {
            corrupt(err.what());
            break;
        }
        ++result.events_replayed;
    }
    return result;
}

RecoveryResult recover(const std::optional<std::filesystem::path>& log_path,
                       const std::optional<std::filesystem::path>& snapshot_path) {
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    std::optional<Json> snapshot;
    if (snapshot_path && std::filesystem::exists(*snapshot_path)) {
        try {
            snapshot = parse_document(slurp(*snapshot_path));
        } catch (const Error& e) {
            throw Error(ErrorCode::LogCorrupt, "snapshot unreadable: " + std::string(e.what()));
        }
    }
    std::string log_text;
    if (log_path && std::filesystem::exists(*log_path)) log_text = slurp(*log_path);
    return recover_from_text(log_text, snapshot);
}

void write_snapshot(const RegistryState& state, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << canonical(snapshot_document(state)) << '\n';
        out.flush();
        if (!out) throw Error(ErrorCode::Internal, "cannot write snapshot " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Registry::Registry(RegistryOptions options, std::vector<Certificate> anchors,
                   PolicySetPtr policies, Metrics* metrics)
    : options_(std::move(options)),
      anchors_(std::move(anchors)),
      metrics_(metrics),
      policies_(policies ? std::move(policies) : std::make_shared<const PolicySet>()) {
    if (options_.log_path || options_.snapshot_path) {
        RecoveryResult rec = recover(options_.log_path, options_.snapshot_path);
        if (rec.corruption) throw *rec.corruption;
        state_ = std::move(rec.state);
    }
    if (options_.log_path) log_.emplace(*options_.log_path, options_.fsync);
}

void Registry::set_policies(PolicySetPtr policies) {
    std::lock_guard lock(policy_mutex_);
    policies_ = policies ? std::move(policies) : std::make_shared<const PolicySet>();
}

PolicySetPtr Registry::policies() const {
    std::lock_guard lock(policy_mutex_);
    return policies_;
}

void Registry::commit(RegistryEvent event) {
    // Caller holds writer_mutex_, so state_ cannot change underneath.
    event.seq = state_.last_seq + 1;
    if (log_) log_->append(event);
    std::unique_lock lock(state_mutex_);
    state_.apply(event);
}

AgentRecord Registry::register_agent(const RegistrationRequest& req, UnixSeconds now) {
    AnsName name = [&] {
        try {
            return parse_name(req.name);
        } catch (const Error& e) {
            throw Error(ErrorCode::InvalidName, e.what());
        }
    }();

    {
        ScopedTimer timer(metrics_, Operation::ChainValidation);
        validate_chain(req.chain, anchors_, now);
    }

    if (!crypto::verify(req.chain.agent.public_key, canonical_request_bytes(req),
                        req.request_signature)) {
        throw Error(ErrorCode::BadSignature, "request signature does not verify under agent key");
    }

    if (req.chain.agent.subject_name != name) {
        throw Error(ErrorCode::NameMismatch, "certificate subject " +
                                                 format_name(*req.chain.agent.subject_name) +
                                                 " differs from requested name " + req.name);
    }
    if (req.did != req.chain.agent.subject_did) {
        throw Error(ErrorCode::NameMismatch, "request DID differs from certificate subject DID");
    }
    if (req.commitments != req.chain.agent.capability_commitments) {
        throw Error(ErrorCode::NameMismatch,
                    "request commitments differ from certificate commitments");
    }
    std::set<std::string> committed;
    for (const auto& c : req.commitments) {
        if (!committed.insert(c.capability.str()).second) {
            throw Error(ErrorCode::Malformed, "duplicate commitment for '" + c.capability.str() + "'");
        }
    }
    if (!committed.contains(name.capability.str())) {
        throw Error(ErrorCode::NameMismatch,
                    "name capability '" + name.capability.str() + "' has no commitment");
    }
    if (!valid_endpoint(req.endpoint)) {
        throw Error(ErrorCode::Malformed, "endpoint '" + req.endpoint + "' is not a URL");
    }
    if (!Label::is_valid(req.namespace_)) {
        throw Error(ErrorCode::Malformed, "namespace '" + req.namespace_ + "' is not a label");
    }

    AgentRecord record{name,          req.did,
                       req.endpoint,  req.chain,
                       req.commitments, Label::parse(req.namespace_),
                       now,           now + options_.record_ttl,
                       RecordStatus::Active};

    {
        AgentManifest manifest = manifest_for(record);
        PolicySetPtr policies = this->policies();
        PolicyDecision decision = [&] {
            ScopedTimer timer(metrics_, Operation::PolicyEval);
            return evaluate(EvaluationContext{manifest, Phase::Admission, now}, *policies);
        }();
        if (!decision.allowed) throw Error(ErrorCode::PolicyDenied, explain(decision));
    }

    std::lock_guard writer(writer_mutex_);
    std::string key = format_name(name);
    if (auto it = state_.records.find(key); it != state_.records.end()) {
        const AgentRecord& existing = it->second;
        if (existing.live(now) && existing.did != record.did) {
            throw Error(ErrorCode::DuplicateAgent, key + " is registered to " + existing.did.str());
        }
    }
    commit(RegistryEvent{0, EventKind::Registered, to_json(record), now});
    return record;
}

AgentRecord Registry::renew(std::string_view name, const crypto::Signature& signature,
                            UnixSeconds now) {
    std::lock_guard writer(writer_mutex_);
    return renew_locked(name, signature, now);
}

AgentRecord Registry::renew_locked(std::string_view name, const crypto::Signature& signature,
                                   UnixSeconds now) {
    auto it = state_.records.find(std::string(name));
    if (it == state_.records.end() || now > it->second.expires_at) {
        throw Error(ErrorCode::UnknownAgent, "no live registration for " + std::string(name));
    }
    const AgentRecord& rec = it->second;
    if (rec.status == RecordStatus::Revoked) {
        throw Error(ErrorCode::Revoked, std::string(name) + " has been revoked");
    }
    if (!verify_lifecycle(rec.chain.agent.public_key, "renew", name, signature, now)) {
        throw Error(ErrorCode::BadSignature, "renewal signature does not verify under agent key");
    }
    {
        ScopedTimer timer(metrics_, Operation::ChainValidation);
        validate_chain(rec.chain, anchors_, now);
    }
    UnixSeconds expires = now + options_.record_ttl;
    commit(RegistryEvent{0, EventKind::Renewed, Json{{"name", name}, {"expires_at", expires}}, now});
    return state_.records.at(std::string(name));
}

void Registry::revoke(std::string_view name, const crypto::Signature& signature, UnixSeconds now) {
    std::lock_guard writer(writer_mutex_);
    auto it = state_.records.find(std::string(name));
    if (it == state_.records.end()) {
        throw Error(ErrorCode::UnknownAgent, "no registration for " + std::string(name));
    }
    const AgentRecord& rec = it->second;
    bool authorised = verify_lifecycle(rec.chain.agent.public_key, "revoke", name, signature, now) ||
                      verify_lifecycle(rec.chain.intermediate.public_key, "revoke", name, signature, now) ||
                      verify_lifecycle(rec.chain.root.public_key, "revoke", name, signature, now);
    if (!authorised) {
        throw Error(ErrorCode::BadSignature,
                    "revocation must be signed by the agent or its issuing CA");
    }
    if (rec.status == RecordStatus::Revoked) return;
    commit(RegistryEvent{0, EventKind::Revoked, Json{{"name", name}}, now});
}

std::vector<AgentRecord> Registry::resolve(const NameQuery& query, UnixSeconds now) const {
    std::vector<AgentRecord> hits;
    {
        std::shared_lock lock(state_mutex_);
        auto consider = [&](const AgentRecord& rec) {
            if (rec.live(now) && matches(rec.name, query)) hits.push_back(rec);
        };
        if (query.capability) {
            auto it = state_.capability_index.find(query.capability->str());
            if (it != state_.capability_index.end()) {
                for (const auto& key : it->second) consider(state_.records.at(key));
            }
        } else {
            for (const auto& [_, rec] : state_.records) consider(rec);
        }
    }

    PolicySetPtr policies = this->policies();
    std::erase_if(hits, [&](const AgentRecord& rec) {
        AgentManifest manifest = manifest_for(rec);
        ScopedTimer timer(metrics_, Operation::PolicyEval);
        return !evaluate(EvaluationContext{manifest, Phase::Runtime, now}, *policies).allowed;
    });

    if (query.version_req && std::holds_alternative<VersionLatest>(*query.version_req)) {
        std::map<std::tuple<std::string, std::string, std::string, std::string>, Version> best;
        auto group = [](const AgentRecord& r) {
            return std::tuple(r.name.agent_id.str(), r.name.capability.str(), r.name.provider.str(),
                              r.name.extension.str());
        };
        for (const auto& r : hits) {
            auto [it, inserted] = best.emplace(group(r), r.name.version);
            if (!inserted && compare_versions(r.name.version, it->second) > 0) it->second = r.name.version;
        }
        std::erase_if(hits, [&](const AgentRecord& r) {
            return compare_versions(r.name.version, best.at(group(r))) != 0;
        });
    }

    std::vector<std::pair<std::string, AgentRecord>> keyed;
    keyed.reserve(hits.size());
    for (auto& r : hits) keyed.emplace_back(format_name(r.name), std::move(r));
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        auto c = compare_versions(a.second.name.version, b.second.name.version);
        if (c != 0) return c > 0;
        return a.first < b.first;
    });
    std::vector<AgentRecord> out;
    out.reserve(keyed.size());
    for (auto& [_, r] : keyed) out.push_back(std::move(r));
    return out;
}

std::optional<AgentRecord> Registry::find_live(std::string_view name, UnixSeconds now) const {
    std::shared_lock lock(state_mutex_);
    auto it = state_.records.find(std::string(name));
    if (it == state_.records.end() || !it->second.live(now)) return std::nullopt;
    return it->second;
}

std::size_t Registry::sweep_expired(UnixSeconds now) {
    std::lock_guard writer(writer_mutex_);
    std::unique_lock lock(state_mutex_);
    std::size_t removed = 0;
    for (auto it = state_.records.begin(); it != state_.records.end();) {
        if (now > it->second.expires_at) {
            index_remove(state_, it->second);
            it = state_.records.erase(it);
            ++removed;
        } else {
            ++it;
        }
    }
    return removed;
}

bool Registry::snapshot() const {
    if (!options_.snapshot_path) return false;
    RegistryState copy = state();
    write_snapshot(copy, *options_.snapshot_path);
    return true;
}

RegistryState Registry::state() const {
    std::shared_lock lock(state_mutex_);
    return state_;
}

std::uint64_t Registry::last_seq() const {
    std::shared_lock lock(state_mutex_);
    return state_.last_seq;
}

std::size_t Registry::live_count(UnixSeconds now) const {
    std::shared_lock lock(state_mutex_);
    return static_cast<std::size_t>(std::count_if(
        state_.records.begin(), state_.records.end(),
        [&](const auto& kv) { return kv.second.live(now); }));
}

std::size_t Registry::expiring_within(std::int64_t seconds, UnixSeconds now) const {
    std::shared_lock lock(state_mutex_);
    return static_cast<std::size_t>(std::count_if(
        state_.records.begin(), state_.records.end(), [&](const auto& kv) {
            return kv.second.live(now) && remaining_validity(kv.second.chain.agent, now) < seconds;
        }));
}

std::vector<AgentRecord> Registry::live_records(UnixSeconds now) const {
    std::shared_lock lock(state_mutex_);
    std::vector<AgentRecord> out;
    for (const auto& [_, rec] : state_.records) {
        if (rec.live(now)) out.push_back(rec);
    }
    return out;
}

}  // namespace ans
