#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mepo {

enum class ErrorKind {
    NotSquare,
    NotSymmetric,
    NotPositiveDefinite,
    SingularDiagonal,
    DimensionMismatch,
    TooFewRows,
    NonFinite,
    TargetNotInMask,
    EmptyMask,
    StaleCache,
    EtaOutOfRange,
    InvalidCount,
    TooFewClasses,
    EmptyDataset,
    InsufficientClasses,
    InsufficientSamples,
    LabelOutOfRange,
    BatchTooSmall,
    EmptyLog,
    EmptyTestSet,
    MissingRecords,
    DegenerateGap,
    ConfigError,
    MissingArtifact,
    IoError,
    ParseError,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` is stable for callers
/// that need to branch (e.g. alignment falling back on NotPositiveDefinite).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace mepo
