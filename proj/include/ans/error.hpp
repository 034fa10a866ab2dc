#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ans {

/// Closed set of error codes surfaced by every layer (library, wire, CLI).
enum class ErrorCode {
    InvalidName,
    InvalidProtocol,
    InvalidLabel,
    InvalidVersion,
    Malformed,
    RoleViolation,
    WindowExceeded,
    UntrustedRoot,
    ChainInvalid,
    CertExpired,
    CertNotYetValid,
    ChallengeExpired,
    CapabilityMismatch,
    BadSignature,
    NonceReplay,
    PolicyParse,
    PolicyDenied,
    NameMismatch,
    DuplicateAgent,
    UnknownAgent,
    Revoked,
    LogCorrupt,
    UnknownCapability,
    HandshakeTimeout,
    Internal,
};

inline constexpr ErrorCode kAllErrorCodes[] = {
    ErrorCode::InvalidName,       ErrorCode::InvalidProtocol,    ErrorCode::InvalidLabel,
    ErrorCode::InvalidVersion,    ErrorCode::Malformed,          ErrorCode::RoleViolation,
    ErrorCode::WindowExceeded,    ErrorCode::UntrustedRoot,      ErrorCode::ChainInvalid,
    ErrorCode::CertExpired,       ErrorCode::CertNotYetValid,    ErrorCode::ChallengeExpired,
    ErrorCode::CapabilityMismatch, ErrorCode::BadSignature,      ErrorCode::NonceReplay,
    ErrorCode::PolicyParse,       ErrorCode::PolicyDenied,       ErrorCode::NameMismatch,
    ErrorCode::DuplicateAgent,    ErrorCode::UnknownAgent,       ErrorCode::Revoked,
    ErrorCode::LogCorrupt,        ErrorCode::UnknownCapability,  ErrorCode::HandshakeTimeout,
    ErrorCode::Internal,
};

/// Wire identifier, e.g. "CHAIN_INVALID".
std::string_view to_string(ErrorCode code) noexcept;

/// Inverse of to_string; returns false for identifiers outside the closed set.
bool parse_error_code(std::string_view text, ErrorCode& out) noexcept;

/// HTTP status used when the code is returned by the registry API.
int http_status(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message),
          code_(code),
          detail_(message) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace ans
