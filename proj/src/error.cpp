#include "mepo/error.hpp"

namespace mepo {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NotSquare: return "NotSquare";
        case ErrorKind::NotSymmetric: return "NotSymmetric";
        case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorKind::SingularDiagonal: return "SingularDiagonal";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::TooFewRows: return "TooFewRows";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::TargetNotInMask: return "TargetNotInMask";
        case ErrorKind::EmptyMask: return "EmptyMask";
        case ErrorKind::StaleCache: return "StaleCache";
        case ErrorKind::EtaOutOfRange: return "EtaOutOfRange";
        case ErrorKind::InvalidCount: return "InvalidCount";
        case ErrorKind::TooFewClasses: return "TooFewClasses";
        case ErrorKind::EmptyDataset: return "EmptyDataset";
        case ErrorKind::InsufficientClasses: return "InsufficientClasses";
        case ErrorKind::InsufficientSamples: return "InsufficientSamples";
        case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorKind::BatchTooSmall: return "BatchTooSmall";
        case ErrorKind::EmptyLog: return "EmptyLog";
        case ErrorKind::EmptyTestSet: return "EmptyTestSet";
        case ErrorKind::MissingRecords: return "MissingRecords";
        case ErrorKind::DegenerateGap: return "DegenerateGap";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::MissingArtifact: return "MissingArtifact";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::ParseError: return "ParseError";
    }
    return "Unknown";
}

}  // namespace mepo
