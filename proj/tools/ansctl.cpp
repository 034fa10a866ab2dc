// ansctl: operator tool for keys, CA setup, registration, discovery,
// attestation, policy checks, serving and the evaluation harness.
//
// Exit codes: 0 success/allowed, 1 operational error, 2 usage error,
// 3 denied (policy or attestation).

#include <CLI11.hpp>
#include <signal.h>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "ans/harness.hpp"

namespace {

using namespace ans;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDenied = 3;

struct Options {
    std::string config_path;
    std::string registry;
    std::string anchors;
    std::string policy;
    std::string keys;
    std::string output;
};

// Effective settings after flags > environment > config file.
struct CliConfig {
    std::string registry_url = "http://127.0.0.1:8080";
    std::string anchors_path;
    std::string policy_path;
    std::string key_dir = ".ans";
    bool json = false;
};

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Malformed, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text, bool secret = false) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error(ErrorCode::Internal, "cannot write " + path.string());
    if (secret) {
        std::filesystem::permissions(path, std::filesystem::perms::owner_read |
                                               std::filesystem::perms::owner_write);
    }
}

CliConfig resolve_config(const Options& o) {
    CliConfig c;
    if (!o.config_path.empty()) {
        Json doc = parse_document(read_text(o.config_path));
        for (const auto& [k, v] : doc.items()) {
            if (k == "registry_url") c.registry_url = v.get<std::string>();
            else if (k == "anchors_path") c.anchors_path = v.get<std::string>();
            else if (k == "policy_path") c.policy_path = v.get<std::string>();
            else if (k == "key_dir") c.key_dir = v.get<std::string>();
            else if (k == "output") c.json = v.get<std::string>() == "json";
            else throw Error(ErrorCode::Malformed, "unknown config key '" + k + "'");
        }
    }
    auto env = [](const char* n) { const char* v = std::getenv(n); return v && *v ? std::string(v) : std::string(); };
    if (auto v = env("ANS_REGISTRY_URL"); !v.empty()) c.registry_url = v;
    if (auto v = env("ANS_ANCHORS_PATH"); !v.empty()) c.anchors_path = v;
    if (auto v = env("ANS_POLICY_PATH"); !v.empty()) c.policy_path = v;
    if (!o.registry.empty()) c.registry_url = o.registry;
    if (!o.anchors.empty()) c.anchors_path = o.anchors;
    if (!o.policy.empty()) c.policy_path = o.policy;
    if (!o.keys.empty()) c.key_dir = o.keys;
    if (!o.output.empty()) c.json = o.output == "json";
    return c;
}

std::filesystem::path identity_file(const std::string& key_dir, const AnsName& name) {
    std::string file = std::string(to_string(name.protocol)) + "_" + name.agent_id.str() + "." +
                       name.capability.str() + "." + name.provider.str() + ".v" +
                       format_version(name.version) + "." + name.extension.str() + ".json";
    return std::filesystem::path(key_dir) / file;
}

CertificateAuthority load_ca(const std::string& key_dir) {
    Json doc = parse_document(read_text((std::filesystem::path(key_dir) / "ca.json").string()));
    return CertificateAuthority{KeyPair::from_seed(require_hex<32>(doc, "root_seed")),
                                certificate_from_json(require(doc, "root")),
                                KeyPair::from_seed(require_hex<32>(doc, "intermediate_seed")),
                                certificate_from_json(require(doc, "intermediate"))};
}

std::vector<Certificate> load_anchors(const std::string& path) {
    if (path.empty()) return {};
    return anchors_from_json(parse_document(read_text(path)));
}

PolicySet load_policy_file(const std::string& path) {
    if (path.empty()) return {};
    return load_policies(read_text(path));
}

void print_json(const Json& j) { std::cout << j.dump(2) << "\n"; }

void print_record(const AgentRecord& r) {
    std::cout << format_name(r.name) << "\n"
              << "  did:        " << r.did.str() << "\n"
              << "  endpoint:   " << r.endpoint << "\n"
              << "  namespace:  " << r.namespace_.str() << "\n"
              << "  status:     " << to_string(r.status) << "\n"
              << "  expires_at: " << r.expires_at << "\n";
}

bool is_denial(ErrorCode code, bool attestation) {
    int status = http_status(code);
    return status == 403 || (attestation && status == 401);
}

int report_error(const CliConfig& c, ErrorCode code, const std::string& message, bool attestation) {
    if (c.json) {
        print_json(Json{{"error", to_string(code)}, {"message", message}});
    } else {
        std::cerr << "error: " << to_string(code) << ": " << message << "\n";
    }
    return is_denial(code, attestation) ? kExitDenied : kExitError;
}

// Runs a command body, mapping exceptions onto the exit-code contract.
int run(const CliConfig& c, bool attestation, const std::function<int()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        return report_error(c, e.code(), e.detail(), attestation);
    } catch (const TransportError& e) {
        if (c.json) {
            print_json(Json{{"error", "TRANSPORT"}, {"message", e.what()}});
        } else {
            std::cerr << "error: " << e.what() << "\n";
        }
        return kExitError;
    } catch (const std::exception& e) {
        return report_error(c, ErrorCode::Internal, e.what(), attestation);
    }
}

int cmd_keygen(const CliConfig& c, const std::string& out) {
    KeyPair kp = generate_keypair();
    Did did = Did::derive(kp.public_key());
    Json doc{{"did", did.str()},
             {"public_key", crypto::to_hex(kp.public_key())},
             {"seed", crypto::to_hex(kp.seed())}};
    std::filesystem::path path =
        out.empty() ? std::filesystem::path(c.key_dir) / ("key-" + did.str().substr(8, 12) + ".json")
                    : std::filesystem::path(out);
    write_text(path, doc.dump(2) + "\n", true);
    if (c.json) {
        print_json(Json{{"did", did.str()}, {"public_key", doc["public_key"]}, {"path", path.string()}});
    } else {
        std::cout << did.str() << "\nwritten to " << path.string() << "\n";
    }
    return kExitOk;
}

int cmd_ca_init(const CliConfig& c) {
    CertificateAuthority ca = CertificateAuthority::create(system_now());
    std::filesystem::path dir(c.key_dir);
    Json doc{{"root_seed", crypto::to_hex(ca.root_keys.seed())},
             {"intermediate_seed", crypto::to_hex(ca.intermediate_keys.seed())},
             {"root", to_json(ca.root)},
             {"intermediate", to_json(ca.intermediate)}};
    write_text(dir / "ca.json", doc.dump(2) + "\n", true);
    auto anchors = ca.anchors();
    write_text(dir / "anchors.json", to_json(std::span<const Certificate>(anchors)).dump(2) + "\n");
    if (c.json) {
        print_json(Json{{"root_did", ca.root.subject_did.str()},
                        {"intermediate_did", ca.intermediate.subject_did.str()},
                        {"anchors", (dir / "anchors.json").string()}});
    } else {
        std::cout << "root:         " << ca.root.subject_did.str() << "\n"
                  << "intermediate: " << ca.intermediate.subject_did.str() << "\n"
                  << "anchors:      " << (dir / "anchors.json").string() << "\n";
    }
    return kExitOk;
}

int cmd_cert_issue(const CliConfig& c, const std::string& name_text, const std::vector<std::string>& caps,
                   std::string endpoint, const std::string& validity) {
    CertificateAuthority ca = load_ca(c.key_dir);
    AnsName name = parse_name(name_text);
    std::vector<Label> extra;
    for (const auto& cap : caps) extra.push_back(Label::parse(cap));
    if (endpoint.empty()) endpoint = "http://" + name.agent_id.str() + ".local:8443";
    AgentIdentity id = ca.enroll(name, extra, endpoint, system_now(), parse_duration(validity));
    auto path = identity_file(c.key_dir, name);
    save_identity(id, path);
    if (c.json) {
        print_json(Json{{"name", format_name(name)},
                        {"did", id.chain.agent.subject_did.str()},
                        {"serial", id.chain.agent.serial},
                        {"not_after", id.chain.agent.not_after},
                        {"identity", path.string()}});
    } else {
        std::cout << "issued " << format_name(name) << " (" << id.chain.agent.subject_did.str() << ")\n"
                  << "identity: " << path.string() << "\n";
    }
    return kExitOk;
}

int cmd_register(const CliConfig& c, const std::string& name_text, const std::string& ns) {
    AgentIdentity id = load_identity(identity_file(c.key_dir, parse_name(name_text)));
    RegistryClient client(c.registry_url);
    AgentRecord rec = client.register_with(id, Label::parse(ns));
    if (c.json) {
        print_json(to_json(rec));
    } else {
        std::cout << "registered\n";
        print_record(rec);
    }
    return kExitOk;
}

int cmd_resolve(const CliConfig& c, const std::multimap<std::string, std::string>& params) {
    RegistryClient client(c.registry_url);
    auto records = client.discover(params);
    if (c.json) {
        Json arr = Json::array();
        for (const auto& r : records) arr.push_back(to_json(r));
        print_json(arr);
    } else if (records.empty()) {
        std::cout << "no matching agents\n";
    } else {
        for (const auto& r : records) print_record(r);
    }
    return kExitOk;
}

int cmd_attest(const CliConfig& c, const std::string& name_text, const std::string& capability) {
    AgentIdentity id = load_identity(identity_file(c.key_dir, parse_name(name_text)));
    Label cap = Label::parse(capability.empty() ? id.name.capability.str() : capability);
    RegistryClient client(c.registry_url);
    client.prove_capability(id, cap, system_now());
    if (c.json) {
        print_json(Json{{"granted", true}, {"agent", format_name(id.name)}, {"capability", cap.str()}});
    } else {
        std::cout << "granted: " << format_name(id.name) << " holds '" << cap.str() << "'\n";
    }
    return kExitOk;
}

int cmd_policy_test(const CliConfig& c, const std::string& manifest_path, const std::string& phase) {
    PolicySet policies = load_policy_file(c.policy_path);
    AgentManifest m = parse_manifest_text(read_text(manifest_path));
    PolicyDecision d = evaluate(
        EvaluationContext{m, phase == "runtime" ? Phase::Runtime : Phase::Admission, system_now()}, policies);
    if (c.json) {
        print_json(to_json(d));
    } else {
        std::cout << explain(d);
    }
    return d.allowed ? kExitOk : kExitDenied;
}

int cmd_admission(const CliConfig& c, const std::string& manifest_path, bool remote) {
    std::string text = read_text(manifest_path);
    Json decision;
    if (remote) {
        decision = RegistryClient(c.registry_url).admission(text);
    } else {
        AgentManifest m = parse_manifest_text(text);
        auto anchors = load_anchors(c.anchors_path);
        decision = admission_decision(m, anchors, load_policy_file(c.policy_path), system_now());
    }
    bool allowed = decision["allowed"].get<bool>();
    if (c.json) {
        print_json(decision);
    } else {
        std::cout << (allowed ? "allowed" : "denied") << "\n";
        for (const auto& r : decision["reasons"]) std::cout << "  - " << r.get<std::string>() << "\n";
    }
    return allowed ? kExitOk : kExitDenied;
}

struct ServeFlags {
    std::string listen, log, snapshot;
    bool no_fsync = false;
};

int cmd_serve(const Options& o, const CliConfig& c, const ServeFlags& f) {
    ServerConfig sc = o.config_path.empty() ? ServerConfig{} : load_server_config(o.config_path);
    apply_env_overrides(sc);
    if (!f.listen.empty()) sc.listen = f.listen;
    if (!f.log.empty()) sc.log_path = f.log;
    if (!f.snapshot.empty()) sc.snapshot_path = f.snapshot;
    if (!o.anchors.empty()) sc.anchors_path = o.anchors;
    if (!o.policy.empty()) sc.policy_path = o.policy;
    if (f.no_fsync) sc.fsync = false;

    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Server server(sc);
    server.start();
    if (c.json) {
        print_json(Json{{"listening", server.base_url()}, {"last_seq", server.registry().last_seq()}});
    } else {
        std::cout << "listening on " << server.base_url() << " (recovered through seq "
                  << server.registry().last_seq() << ")\n";
    }
    std::cout.flush();
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    if (!c.json) std::cout << "stopped; snapshot written\n";
    return kExitOk;
}

struct BenchFlags {
    harness::BenchConfig bench;
    int throughput_seconds = 0;
    double offered_rate = 30.0;
    std::string report;
};

int cmd_bench(const CliConfig& c, const BenchFlags& f) {
    harness::validate(f.bench);
    harness::BenchReport r = harness::run_benchmark(f.bench);
    Json doc{{"latency", harness::to_json(r)}};
    bool pass = r.pass;
    if (f.throughput_seconds > 0) {
        harness::ThroughputConfig tc;
        tc.registration_seconds = f.throughput_seconds;
        tc.offered_per_second = f.offered_rate;
        tc.seed = f.bench.seed;
        harness::ThroughputReport t = harness::run_throughput(tc);
        doc["throughput"] = harness::to_json(t);
        pass = pass && t.registration_floor_met;
    }
    doc["pass"] = pass;
    if (!f.report.empty()) write_text(f.report, doc.dump(2) + "\n");
    if (c.json) {
        print_json(doc);
    } else {
        for (Operation op : kAllOperations) {
            const auto& s = r.stats(op);
            std::printf("%-17s n=%-7llu p50=%8.3f p95=%8.3f p99=%8.3f ms (bound %.0f) %s\n",
                        std::string(to_string(op)).c_str(), static_cast<unsigned long long>(s.count),
                        s.p50_ms, s.p95_ms, s.p99_ms, harness::p99_bound(op),
                        r.within_bound[static_cast<std::size_t>(op)] ? "ok" : "FAIL");
        }
        if (doc.contains("throughput")) std::cout << "throughput: " << doc["throughput"].dump() << "\n";
        std::cout << (pass ? "PASS" : "FAIL") << "\n";
    }
    return pass ? kExitOk : kExitError;
}

int cmd_demo(const CliConfig& c, const harness::DemoConfig& dc, const std::string& report) {
    harness::DemoReport r = harness::run_demo(dc);
    Json doc = harness::to_json(r);
    if (!report.empty()) write_text(report, doc.dump(2) + "\n");
    if (c.json) {
        print_json(doc);
    } else {
        std::cout << r.succeeded << "/" << r.agents << " agents completed the lifecycle\n";
        for (const auto& p : r.phases) {
            std::printf("  %-11s ok=%-4llu p50=%7.3f p99=%7.3f ms\n", p.phase.c_str(),
                        static_cast<unsigned long long>(p.succeeded), p.latency.p50_ms, p.latency.p99_ms);
        }
        std::cout << "invalid manifest rejected: " << (r.invalid_manifest_rejected ? "yes" : "no") << "\n"
                  << "rollback state equal:      " << (r.rollback_state_equal ? "yes" : "no") << " ("
                  << r.rollback_queries << " queries)\n";
        for (const auto& f : r.failures) std::cout << "  failure: " << f << "\n";
        std::cout << (r.pass ? "PASS" : "FAIL") << "\n";
    }
    return r.pass ? kExitOk : kExitError;
}

int cmd_security(const CliConfig& c, int repeat) {
    std::map<std::string, int> passes;
    std::vector<harness::ScenarioResult> last;
    for (int i = 0; i < repeat; ++i) {
        last = harness::run_security_suite();
        for (const auto& s : last) passes[s.id] += s.pass ? 1 : 0;
    }
    bool all = true;
    Json arr = Json::array();
    for (const auto& s : last) {
        all = all && passes[s.id] == repeat;
        Json j = harness::to_json(s);
        j["passes"] = passes[s.id];
        j["repetitions"] = repeat;
        arr.push_back(j);
    }
    if (c.json) {
        print_json(Json{{"scenarios", arr}, {"pass", all}});
    } else {
        for (const auto& s : last) {
            std::cout << s.id << " " << passes[s.id] << "/" << repeat << " expected=" << s.expected
                      << " observed=" << s.observed << "  " << s.evidence << "\n";
        }
        std::cout << (all ? "PASS" : "FAIL") << "\n";
    }
    return all ? kExitOk : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ansctl: agent name service operator tool"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--config", o.config_path, "Config file (JSON); a server config for serve");
    app.add_option("--registry", o.registry, "Registry base URL (env ANS_REGISTRY_URL)");
    app.add_option("--anchors", o.anchors, "Trust anchor file");
    app.add_option("--policy", o.policy, "Policy file");
    app.add_option("--keys", o.keys, "Key directory");
    app.add_option("--output", o.output, "Output format")->check(CLI::IsMember({"human", "json"}));

    std::function<int(const CliConfig&)> action;

    auto* keygen = app.add_subcommand("keygen", "Generate an Ed25519 key and print its DID");
    std::string keygen_out;
    keygen->add_option("--out", keygen_out, "Output file");
    keygen->callback([&] { action = [&](const CliConfig& c) { return cmd_keygen(c, keygen_out); }; });

    auto* ca = app.add_subcommand("ca", "Certificate authority");
    ca->require_subcommand(1);
    auto* ca_init = ca->add_subcommand("init", "Create root and intermediate in the key directory");
    ca_init->callback([&] { action = [&](const CliConfig& c) { return cmd_ca_init(c); }; });

    auto* cert = app.add_subcommand("cert", "Certificates");
    cert->require_subcommand(1);
    auto* cert_issue = cert->add_subcommand("issue", "Enroll an agent identity");
    std::string issue_name, issue_endpoint, issue_validity = "90d";
    std::vector<std::string> issue_caps;
    cert_issue->add_option("--name", issue_name, "ANS name")->required();
    cert_issue->add_option("--capability", issue_caps, "Additional committed capability (repeatable)");
    cert_issue->add_option("--endpoint", issue_endpoint, "Agent endpoint URL");
    cert_issue->add_option("--validity", issue_validity, "Validity, e.g. 90d");
    cert_issue->callback([&] {
        action = [&](const CliConfig& c) {
            return cmd_cert_issue(c, issue_name, issue_caps, issue_endpoint, issue_validity);
        };
    });

    auto* reg = app.add_subcommand("register", "Register an enrolled identity");
    std::string reg_name, reg_ns = "default";
    reg->add_option("--name", reg_name, "ANS name")->required();
    reg->add_option("--namespace", reg_ns, "Namespace label");
    reg->callback([&] { action = [&](const CliConfig& c) { return cmd_register(c, reg_name, reg_ns); }; });

    auto* resolve = app.add_subcommand("resolve", "Discover agents");
    std::string q_cap, q_provider, q_protocol, q_env, q_version, q_agent;
    resolve->add_option("--capability", q_cap);
    resolve->add_option("--provider", q_provider);
    resolve->add_option("--protocol", q_protocol);
    resolve->add_option("--env", q_env);
    resolve->add_option("--version", q_version, "latest, 2.1 or >=2.0");
    resolve->add_option("--name", q_agent, "Agent id");
    resolve->callback([&] {
        action = [&](const CliConfig& c) {
            std::multimap<std::string, std::string> p;
            if (!q_cap.empty()) p.emplace("capability", q_cap);
            if (!q_provider.empty()) p.emplace("provider", q_provider);
            if (!q_protocol.empty()) p.emplace("protocol", q_protocol);
            if (!q_env.empty()) p.emplace("env", q_env);
            if (!q_version.empty()) p.emplace("version", q_version);
            if (!q_agent.empty()) p.emplace("agent", q_agent);
            return cmd_resolve(c, p);
        };
    });

    auto* attest = app.add_subcommand("attest", "Prove a capability to the registry");
    std::string att_name, att_cap;
    attest->add_option("--name", att_name, "ANS name")->required();
    attest->add_option("--capability", att_cap, "Capability (default: the name's)");
    attest->callback([&] { action = [&](const CliConfig& c) { return cmd_attest(c, att_name, att_cap); }; });

    auto* policy = app.add_subcommand("policy", "Policy tools");
    policy->require_subcommand(1);
    auto* policy_test = policy->add_subcommand("test", "Evaluate a manifest against the policy file");
    std::string pt_manifest, pt_phase = "admission";
    policy_test->add_option("--manifest", pt_manifest, "Manifest (YAML or JSON)")->required();
    policy_test->add_option("--phase", pt_phase)->check(CLI::IsMember({"admission", "runtime"}));
    policy_test->callback([&] {
        action = [&](const CliConfig& c) { return cmd_policy_test(c, pt_manifest, pt_phase); };
    });

    auto* admission = app.add_subcommand("admission", "Admission control");
    admission->require_subcommand(1);
    auto* adm_validate = admission->add_subcommand("validate", "Validate a manifest");
    std::string adm_manifest;
    bool adm_remote = false;
    adm_validate->add_option("--manifest", adm_manifest, "Manifest (YAML or JSON)")->required();
    adm_validate->add_flag("--remote", adm_remote, "Ask the registry instead of validating locally");
    adm_validate->callback([&] {
        action = [&](const CliConfig& c) { return cmd_admission(c, adm_manifest, adm_remote); };
    });

    auto* serve = app.add_subcommand("serve", "Run the registry server");
    ServeFlags sf;
    serve->add_option("--listen", sf.listen, "host:port");
    serve->add_option("--log", sf.log, "Event log path");
    serve->add_option("--snapshot", sf.snapshot, "Snapshot path");
    serve->add_flag("--no-fsync", sf.no_fsync, "Skip fsync on append");
    serve->callback([&] { action = [&](const CliConfig& c) { return cmd_serve(o, c, sf); }; });

    auto* bench = app.add_subcommand("bench", "Latency benchmark (and optional throughput run)");
    BenchFlags bf;
    bench->add_option("--agents", bf.bench.n_agents);
    bench->add_option("--namespaces", bf.bench.n_namespaces);
    bench->add_option("--duration", bf.bench.duration_seconds, "Measured seconds");
    bench->add_option("--warmup", bf.bench.warmup_seconds);
    bench->add_option("--seed", bf.bench.seed);
    bench->add_option("--think-ms", bf.bench.think_ms_mean, "Mean pause between agent operations");
    bench->add_option("--throughput-seconds", bf.throughput_seconds, "Registration throughput run length");
    bench->add_option("--offered-rate", bf.offered_rate, "Offered registrations per second");
    bench->add_option("--report", bf.report, "Write the JSON report here");
    bench->callback([&] { action = [&](const CliConfig& c) { return cmd_bench(c, bf); }; });

    auto* demo = app.add_subcommand("demo", "Scripted multi-agent lifecycle demo");
    harness::DemoConfig dc;
    std::string demo_report;
    demo->add_option("--agents", dc.n_agents);
    demo->add_option("--namespaces", dc.n_namespaces);
    demo->add_option("--seed", dc.seed);
    demo->add_option("--report", demo_report);
    demo->callback([&] { action = [&](const CliConfig& c) { return cmd_demo(c, dc, demo_report); }; });

    auto* security = app.add_subcommand("security", "Attack scenario suite");
    int repeat = 1;
    security->add_option("--repeat", repeat)->check(CLI::PositiveNumber);
    security->callback([&] { action = [&](const CliConfig& c) { return cmd_security(c, repeat); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    CliConfig config;
    try {
        // For serve, --config names a server config file instead.
        Options cli = o;
        if (serve->parsed()) cli.config_path.clear();
        config = resolve_config(cli);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    bool attestation = attest->parsed();
    return run(config, attestation, [&] { return action(config); });
}
