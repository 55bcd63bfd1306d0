#pragma once

#include <string>
#include <vector>

namespace surgvae {

/// Shortest round-trip decimal encoding of a double (std::to_chars).
/// Deterministic and value-exact on reparse.
std::string format_double(double v);

/// Splits one CSV record on commas. No quoting: the dataset contract has
/// plain identifiers and numbers only.
std::vector<std::string> split_csv_line(const std::string& line);

/// Parses a double, rejecting trailing garbage. Returns false for empty.
bool parse_double_cell(const std::string& cell, double& out);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace surgvae
