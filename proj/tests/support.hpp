#pragma once

// Fixtures shared by the unit tests, the property suites and the acceptance
// runner.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ans/client.hpp"
#include "ans/policy.hpp"
#include "ans/registry.hpp"

namespace ans::test {

inline constexpr UnixSeconds kT0 = 1'750'000'000;

inline const char* const kDriftName =
    "a2a://concept-drift-detector.concept-drift-detection.research-lab.v2.1.prod";
inline const char* const kScannerName =
    "acp://security-scanner.security-scanning.devsecops-team.v3.2.hipaa";
inline const char* const kRetrainerName =
    "mcp://model-retrainer.model-training.mlops-team.v1.0.staging";

/// Root + intermediate created at kT0 from fixed seeds.
struct Pki {
    CertificateAuthority ca;
    std::vector<Certificate> anchors;

    Pki();
    AgentIdentity enroll(const std::string& name, const std::vector<std::string>& extra_caps = {},
                         UnixSeconds not_before = kT0,
                         std::int64_t validity = kDefaultAgentValidity) const;
};

crypto::Seed seed_of(std::uint8_t fill);

PolicySetPtr allow_all();
PolicySetPtr share(PolicySet set);

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

/// Random valid DNS-style label of 1..max_len characters.
std::string random_label(std::mt19937_64& rng, std::size_t max_len = 12);

/// Random valid name, assembled by hand so the parser under test is not
/// also the generator.
struct GeneratedName {
    std::string text;
    std::string protocol, agent_id, capability, provider, extension;
    std::uint64_t major = 0, minor = 0;
    std::optional<std::uint64_t> patch;
};
GeneratedName random_name(std::mt19937_64& rng);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& text);

struct CommandResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};
CommandResult run_command(const std::string& command);

}  // namespace ans::test
