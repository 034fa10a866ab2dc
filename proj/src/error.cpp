#include "ans/error.hpp"

namespace ans {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidName: return "INVALID_NAME";
        case ErrorCode::InvalidProtocol: return "INVALID_PROTOCOL";
        case ErrorCode::InvalidLabel: return "INVALID_LABEL";
        case ErrorCode::InvalidVersion: return "INVALID_VERSION";
        case ErrorCode::Malformed: return "MALFORMED";
        case ErrorCode::RoleViolation: return "ROLE_VIOLATION";
        case ErrorCode::WindowExceeded: return "WINDOW_EXCEEDED";
        case ErrorCode::UntrustedRoot: return "UNTRUSTED_ROOT";
        case ErrorCode::ChainInvalid: return "CHAIN_INVALID";
        case ErrorCode::CertExpired: return "CERT_EXPIRED";
        case ErrorCode::CertNotYetValid: return "CERT_NOT_YET_VALID";
        case ErrorCode::ChallengeExpired: return "CHALLENGE_EXPIRED";
        case ErrorCode::CapabilityMismatch: return "CAPABILITY_MISMATCH";
        case ErrorCode::BadSignature: return "BAD_SIGNATURE";
        case ErrorCode::NonceReplay: return "NONCE_REPLAY";
        case ErrorCode::PolicyParse: return "POLICY_PARSE";
        case ErrorCode::PolicyDenied: return "POLICY_DENIED";
        case ErrorCode::NameMismatch: return "NAME_MISMATCH";
        case ErrorCode::DuplicateAgent: return "DUPLICATE_AGENT";
        case ErrorCode::UnknownAgent: return "UNKNOWN_AGENT";
        case ErrorCode::Revoked: return "REVOKED";
        case ErrorCode::LogCorrupt: return "LOG_CORRUPT";
        case ErrorCode::UnknownCapability: return "UNKNOWN_CAPABILITY";
        case ErrorCode::HandshakeTimeout: return "HANDSHAKE_TIMEOUT";
        case ErrorCode::Internal: return "INTERNAL";
    }
    return "INTERNAL";
}

bool parse_error_code(std::string_view text, ErrorCode& out) noexcept {
    for (ErrorCode code : kAllErrorCodes) {
        if (to_string(code) == text) {
            out = code;
            return true;
        }
    }
    return false;
}

// 400 malformed, 401 authentication, 403 authorization, 404 unknown,
// 409 conflict, 500 internal.
int http_status(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidName:
        case ErrorCode::InvalidProtocol:
        case ErrorCode::InvalidLabel:
        case ErrorCode::InvalidVersion:
        case ErrorCode::Malformed:
        case ErrorCode::RoleViolation:
        case ErrorCode::WindowExceeded:
        case ErrorCode::PolicyParse:
        case ErrorCode::NameMismatch:
            return 400;
        case ErrorCode::UntrustedRoot:
        case ErrorCode::ChainInvalid:
        case ErrorCode::CertExpired:
        case ErrorCode::CertNotYetValid:
        case ErrorCode::ChallengeExpired:
        case ErrorCode::BadSignature:
        case ErrorCode::NonceReplay:
            return 401;
        case ErrorCode::CapabilityMismatch:
        case ErrorCode::PolicyDenied:
        case ErrorCode::Revoked:
        case ErrorCode::UnknownCapability:
            return 403;
        case ErrorCode::UnknownAgent:
            return 404;
        case ErrorCode::DuplicateAgent:
            return 409;
        case ErrorCode::LogCorrupt:
        case ErrorCode::HandshakeTimeout:
        case ErrorCode::Internal:
            return 500;
    }
    return 500;
}

}  // namespace ans
