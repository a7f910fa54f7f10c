#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cellguard::io {

std::string read_file(const std::filesystem::path& path);

// Writes atomically: temp file in the same directory, then rename.
void write_file(const std::filesystem::path& path, std::string_view content);

// Calls `fn(line_number, object)` for every line of a line-delimited JSON file.
// Line numbers are 1-based. A line that is not a JSON object raises ParseError
// naming the line. A trailing newline at EOF does not produce an extra record.
void for_each_json_line(const std::filesystem::path& path,
                        const std::function<void(std::size_t, const nlohmann::json&)>& fn);
void for_each_json_line(std::string_view text,
                        const std::function<void(std::size_t, const nlohmann::json&)>& fn);

// One compact object per line; keys sorted (nlohmann objects are ordered maps).
std::string to_json_lines(const std::vector<nlohmann::json>& records);

// Parses a whole-file JSON document; syntax errors become ParseError naming the file.
nlohmann::json read_json(const std::filesystem::path& path);

// Pretty document with a trailing newline.
std::string to_document(const nlohmann::json& doc);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace cellguard::io
