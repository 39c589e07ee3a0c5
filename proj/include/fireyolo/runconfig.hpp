#pragma once

// Flat key=value config files with '#' comments. Command-line flags override
// file values; every command echoes the fully resolved map before working.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fy {

using KeyValueConfig = std::map<std::string, std::string>;

inline KeyValueConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    KeyValueConfig out;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key=value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

inline void write_resolved_config(const std::string& path, const KeyValueConfig& cfg) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write resolved config: " + path);
    os << "# resolved configuration (all defaults materialized)\n";
    for (const auto& [k, v] : cfg) os << k << " = " << v << "\n";
}

}  // namespace fy
