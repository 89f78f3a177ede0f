#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ensemble_trader {

enum class ErrorKind {
    InputEmpty,
    InputInvalid,
    RowError,
    AssetEmpty,
    RejectionCeiling,
    OutOfRange,
    InsufficientData,
    SingularCovariance,
    EpisodeFinished,
    ShapeError,
    GradInvalid,
    BufferUnderflow,
    ZeroVolatility,
    NoScores,
    ConfigError,
    IoError,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::InputEmpty: return "InputEmpty";
    case ErrorKind::InputInvalid: return "InputInvalid";
    case ErrorKind::RowError: return "RowError";
    case ErrorKind::AssetEmpty: return "AssetEmpty";
    case ErrorKind::RejectionCeiling: return "RejectionCeiling";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::SingularCovariance: return "SingularCovariance";
    case ErrorKind::EpisodeFinished: return "EpisodeFinished";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::GradInvalid: return "GradInvalid";
    case ErrorKind::BufferUnderflow: return "BufferUnderflow";
    case ErrorKind::ZeroVolatility: return "ZeroVolatility";
    case ErrorKind::NoScores: return "NoScores";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

    /// User errors (bad data, bad config, missing files) as opposed to
    /// numerical or internal failures.
    [[nodiscard]] bool is_user_error() const noexcept {
        switch (kind_) {
        case ErrorKind::InputEmpty:
        case ErrorKind::InputInvalid:
        case ErrorKind::RowError:
        case ErrorKind::AssetEmpty:
        case ErrorKind::RejectionCeiling:
        case ErrorKind::InsufficientData:
        case ErrorKind::ConfigError:
        case ErrorKind::IoError:
            return true;
        default:
            return false;
        }
    }

private:
    ErrorKind kind_;
};

}  // namespace ensemble_trader
