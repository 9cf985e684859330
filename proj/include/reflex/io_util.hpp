#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace reflex {

/// Shortest decimal form that parses back to the same double (locale-free).
std::string format_double(double v);

double parse_double(const std::string& s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> split(const std::string& line, char sep);

/// FNV-1a over raw bytes, used to fingerprint artifacts in manifests.
std::uint64_t fnv1a_hash(const std::string& bytes);

}  // namespace reflex
