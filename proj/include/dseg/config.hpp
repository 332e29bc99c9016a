#pragma once

// Flat `key = value` run configuration: one assignment per line, '#' starts
// a comment, blank lines are fine. The CLI validates keys against its schema
// and rejects anything it does not know.

#include <cctype>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "dseg/fileio.hpp"

namespace dseg {

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::size_t line_start = 0;
    int line_no = 0;
    while (line_start <= text.size()) {
        ++line_no;
        std::size_t line_end = text.find('\n', line_start);
        if (line_end == std::string::npos) line_end = text.size();
        std::string line = text.substr(line_start, line_end - line_start);
        line_start = line_end + 1;

        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": empty key");
        if (!out.emplace(key, value).second)
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": duplicate key '" + key + "'");
        if (line_end == text.size()) break;
    }
    return out;
}

inline std::map<std::string, std::string> load_kv_file(const std::filesystem::path& path) {
    return parse_kv_text(read_binary_file(path));
}

}  // namespace dseg
