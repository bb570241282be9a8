#include "grammarlm/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include "grammarlm/error.hpp"

namespace grammarlm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Syntax: return "Syntax";
    case ErrorKind::DuplicateRule: return "DuplicateRule";
    case ErrorKind::UnresolvedRule: return "UnresolvedRule";
    case ErrorKind::CyclicRule: return "CyclicRule";
    case ErrorKind::EmptyCatalog: return "EmptyCatalog";
    case ErrorKind::NegativeWeight: return "NegativeWeight";
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::UnknownRoot: return "UnknownRoot";
    case ErrorKind::MissingCatalog: return "MissingCatalog";
    case ErrorKind::UnboundNonTerminal: return "UnboundNonTerminal";
    case ErrorKind::RecursionTooDeep: return "RecursionTooDeep";
    case ErrorKind::DivergentMass: return "DivergentMass";
    case ErrorKind::ZeroMass: return "ZeroMass";
    case ErrorKind::CycleDetected: return "CycleDetected";
    case ErrorKind::DeadEnd: return "DeadEnd";
    case ErrorKind::PathCapExceeded: return "PathCapExceeded";
    case ErrorKind::InvalidOrder: return "InvalidOrder";
    case ErrorKind::AllCountsZero: return "AllCountsZero";
    case ErrorKind::EmptyCounts: return "EmptyCounts";
    case ErrorKind::InfinitePerplexity: return "InfinitePerplexity";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyModel: return "EmptyModel";
    case ErrorKind::MalformedArpa: return "MalformedArpa";
    case ErrorKind::NotSimplex: return "NotSimplex";
    case ErrorKind::EmptyReference: return "EmptyReference";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

namespace {
bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
}  // namespace

Words split_words(std::string_view text) {
  Words out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_words(const Words& words, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

std::string_view trim(std::string_view text) {
  while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
  return text;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(ErrorKind::Io, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

std::string format_general(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, value);
  return buf;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

}  // namespace grammarlm
