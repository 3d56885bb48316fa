#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace chatgate {

enum class ErrorKind {
  InvalidVoteCount,
  ParseError,
  DuplicateId,
  EmptyUtterance,
  MissingVotes,
  InvalidSpec,
  EmptyCorpus,
  InvalidFeature,
  DegenerateCorpus,
  FormatError,
  ShapeError,
  InvalidConfig,
  DivergenceError,
  SingleClassError,
  TooSmall,
  IoError,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for every failure the library reports; callers
// switch on kind() rather than on the dynamic type.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix, for re-raising with more context.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace chatgate
