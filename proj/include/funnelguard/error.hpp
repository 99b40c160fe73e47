#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace funnelguard {

enum class ErrorCode {
    InvalidArgument,
    NonFinite,
    InitialConditionInfeasible,
    SingularMassMatrix,
    NonFiniteState,
    DelegateExceedsBound,
    TooShort,
    NotPersistentlyExciting,
    InsufficientHistory,
    NotPositiveDefinite,
    Config,
    Io,
};

[[nodiscard]] std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; `code()` distinguishes failure kinds.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Configuration error carrying the dotted field path (e.g. "controller.lambda").
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(ErrorCode::Config, field + ": " + message), field_(std::move(field)) {}

    [[nodiscard]] const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) throw Error(code, message);
}

}  // namespace funnelguard
