#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace grammarlm {

enum class ErrorKind {
  // grammar parsing and catalogs
  Syntax,
  DuplicateRule,
  UnresolvedRule,
  CyclicRule,
  EmptyCatalog,
  NegativeWeight,
  MalformedLine,
  // compilation and replacement
  UnknownRoot,
  MissingCatalog,
  UnboundNonTerminal,
  RecursionTooDeep,
  // numeric
  DivergentMass,
  ZeroMass,
  CycleDetected,
  DeadEnd,
  PathCapExceeded,
  InvalidOrder,
  AllCountsZero,
  EmptyCounts,
  InfinitePerplexity,
  NonFiniteLoss,
  // models and data
  EmptyModel,
  MalformedArpa,
  NotSimplex,
  EmptyReference,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace grammarlm
