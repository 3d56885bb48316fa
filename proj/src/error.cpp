#include "chatgate/error.hpp"

namespace chatgate {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidVoteCount: return "InvalidVoteCount";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::EmptyUtterance: return "EmptyUtterance";
    case ErrorKind::MissingVotes: return "MissingVotes";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::InvalidFeature: return "InvalidFeature";
    case ErrorKind::DegenerateCorpus: return "DegenerateCorpus";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DivergenceError: return "DivergenceError";
    case ErrorKind::SingleClassError: return "SingleClassError";
    case ErrorKind::TooSmall: return "TooSmall";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

}  // namespace chatgate
