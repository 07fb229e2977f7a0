#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace strlab {

enum class ErrorCode {
  ShapeMismatch,
  NotScalar,
  DetachedGraph,
  NonFinite,
  TargetTooLong,
  BlankInTarget,
  VocabMismatch,
  TooLarge,
  BadConfig,
  AlreadyAttached,
  ArchMismatch,
  Io,
  BadMagic,
  HashMismatch,
  InvalidEncoding,
  EmptyCorpus,
  OovCodepoint,
  BadOrder,
  MissingGlyph,
  EmptyLexicon,
  EmptySet,
  EmptyDataset,
  InfeasibleTarget,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this exception. The code is the
// stable, testable part; the message carries context for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace strlab
