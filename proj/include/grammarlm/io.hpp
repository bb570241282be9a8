#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace grammarlm {

using Words = std::vector<std::string>;

/// Splits on runs of ASCII whitespace.
Words split_words(std::string_view text);
std::string join_words(const Words& words, std::string_view sep = " ");
std::string_view trim(std::string_view text);

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling file and renames it into place, so a
/// reader never observes a half-written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Formats with printf-style "%.<digits>g".
std::string format_general(double value, int digits);
/// Formats with printf-style "%.<decimals>f".
std::string format_fixed(double value, int decimals);

}  // namespace grammarlm
