#include "strlab/error.hpp"

namespace strlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::DetachedGraph: return "DetachedGraph";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::TargetTooLong: return "TargetTooLong";
    case ErrorCode::BlankInTarget: return "BlankInTarget";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::AlreadyAttached: return "AlreadyAttached";
    case ErrorCode::ArchMismatch: return "ArchMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::InvalidEncoding: return "InvalidEncoding";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::OovCodepoint: return "OovCodepoint";
    case ErrorCode::BadOrder: return "BadOrder";
    case ErrorCode::MissingGlyph: return "MissingGlyph";
    case ErrorCode::EmptyLexicon: return "EmptyLexicon";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InfeasibleTarget: return "InfeasibleTarget";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace strlab
