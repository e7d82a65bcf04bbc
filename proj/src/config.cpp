#include "jumpctl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace jumpctl {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
        throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
    return v;
}

}  // namespace

Config Config::parse(std::istream& is, const std::string& origin) {
    Config c;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        bool quoted = false;
        for (std::size_t k = 0; k < line.size(); ++k) {
            if (line[k] == '"') quoted = !quoted;
            if (line[k] == '#' && !quoted) {
                line.resize(k);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        if (!section.empty()) key = section + "." + key;
        if (c.has(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        c.entries_[key] = value;
    }
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, path);
}

void Config::set(const std::string& key, const std::string& value) { entries_[key] = value; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : to_double(key, it->second);
}

int Config::get_int(const std::string& key, int fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string t = trim(it->second);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
        throw ConfigError("config key '" + key + "': '" + it->second + "' is not an integer");
    return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string t = trim(it->second);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
        throw ConfigError("config key '" + key + "': '" + it->second + "' is not an unsigned integer");
    return v;
}

std::vector<double> Config::get_list(const std::string& key, const std::vector<double>& fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::string t = trim(it->second);
    if (!t.empty() && t.front() == '[') {
        if (t.back() != ']') throw ConfigError("config key '" + key + "': unterminated list");
        t = t.substr(1, t.size() - 2);
    }
    std::vector<double> out;
    std::stringstream ss(t);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(key, item));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

void Config::require_known(const std::vector<std::string>& allowed) const {
    for (const auto& [key, value] : entries_)
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown config key '" + key + "'");
}

void Config::write(std::ostream& os) const {
    for (const auto& [key, value] : entries_) os << key << " = " << value << '\n';
}

}  // namespace jumpctl
