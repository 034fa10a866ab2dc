#include "support.hpp"

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ans::test {

crypto::Seed seed_of(std::uint8_t fill) {
    crypto::Seed s{};
    s.fill(fill);
    return s;
}

Pki::Pki()
    : ca(CertificateAuthority::create(generate_keypair(seed_of(0xa1)), generate_keypair(seed_of(0xa2)),
                                      kT0)),
      anchors(ca.anchors()) {}

AgentIdentity Pki::enroll(const std::string& name, const std::vector<std::string>& extra_caps,
                          UnixSeconds not_before, std::int64_t validity) const {
    AnsName n = parse_name(name);
    std::vector<Label> extra;
    for (const auto& c : extra_caps) extra.push_back(Label::parse(c));
    return ca.enroll(n, extra, "http://" + n.agent_id.str() + ".test:8443", not_before, validity);
}

PolicySetPtr allow_all() {
    return share(load_policies(
        R"({"policies":[{"id":"open","rules":[{"id":"allow-any","effect":"allow","match":{}}]}]})"));
}

PolicySetPtr share(PolicySet set) { return std::make_shared<const PolicySet>(std::move(set)); }

TempDir::TempDir() {
    // tmpfs avoids the data flush ext4 performs on rename-over-existing.
    std::filesystem::path base = std::filesystem::temp_directory_path();
    if (!std::getenv("TMPDIR") && std::filesystem::is_directory("/dev/shm")) base = "/dev/shm";
    std::string tmpl = (base / "ans-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string random_label(std::mt19937_64& rng, std::size_t max_len) {
    static constexpr char kEdge[] = "abcdefghijklmnopqrstuvwxyz0123456789";
    static constexpr char kInner[] = "abcdefghijklmnopqrstuvwxyz0123456789-";
    std::size_t len = std::uniform_int_distribution<std::size_t>(1, max_len)(rng);
    std::string out;
    for (std::size_t i = 0; i < len; ++i) {
        bool edge = i == 0 || i + 1 == len;
        const char* pool = edge ? kEdge : kInner;
        std::size_t n = edge ? sizeof(kEdge) - 1 : sizeof(kInner) - 1;
        out.push_back(pool[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
    }
    return out;
}

GeneratedName random_name(std::mt19937_64& rng) {
    static constexpr const char* kProtocols[] = {"a2a", "mcp", "acp", "custom"};
    GeneratedName g;
    g.protocol = kProtocols[rng() % 4];
    g.agent_id = random_label(rng);
    g.capability = random_label(rng);
    g.provider = random_label(rng);
    g.extension = random_label(rng);
    auto number = [&] {
        switch (rng() % 3) {
            case 0: return std::uint64_t{0};
            case 1: return std::uint64_t{rng() % 10};
            default: return std::uint64_t{rng() % 100'000};
        }
    };
    g.major = number();
    g.minor = number();
    if (rng() % 2) g.patch = number();
    g.text = g.protocol + "://" + g.agent_id + "." + g.capability + "." + g.provider + ".v" +
             std::to_string(g.major) + "." + std::to_string(g.minor) +
             (g.patch ? "." + std::to_string(*g.patch) : std::string()) + "." + g.extension;
    return g;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

CommandResult run_command(const std::string& command) {
    CommandResult r;
    FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
    int status = ::pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

}  // namespace ans::test
