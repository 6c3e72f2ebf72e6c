#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cal {

enum class ErrorCode {
    not_found,
    conflict,
    bad_request,
    busy,
    parse,
    version,
    precondition,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::bad_request: return "bad_request";
    case ErrorCode::busy: return "busy";
    case ErrorCode::parse: return "parse";
    case ErrorCode::version: return "version";
    case ErrorCode::precondition: return "precondition";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace cal
