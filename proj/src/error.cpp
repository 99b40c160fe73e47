#include "funnelguard/error.hpp"

namespace funnelguard {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::InitialConditionInfeasible: return "InitialConditionInfeasible";
        case ErrorCode::SingularMassMatrix: return "SingularMassMatrix";
        case ErrorCode::NonFiniteState: return "NonFiniteState";
        case ErrorCode::DelegateExceedsBound: return "DelegateExceedsBound";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::NotPersistentlyExciting: return "NotPersistentlyExciting";
        case ErrorCode::InsufficientHistory: return "InsufficientHistory";
        case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorCode::Config: return "Config";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace funnelguard
