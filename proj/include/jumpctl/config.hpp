#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace jumpctl {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat `key = value` text. `[section]` lines prefix the following keys with
/// `section.`; `#` starts a comment; lists are comma separated, optionally in
/// brackets; strings may be double-quoted.
class Config {
public:
    static Config parse(std::istream& is, const std::string& origin = "<config>");
    static Config load(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const;

    /// Throws ConfigError naming the first key not in `allowed`.
    void require_known(const std::vector<std::string>& allowed) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }
    void write(std::ostream& os) const;

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace jumpctl
