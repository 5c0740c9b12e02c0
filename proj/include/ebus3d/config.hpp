#pragma once

// Line-oriented `key = value` config files. Blank lines and `#` comments
// are ignored; anything else must parse, and errors carry the line number.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebus3d {

struct ConfigError : std::runtime_error {
    int line = 0;
    ConfigError(const std::string& msg, int line_no)
        : std::runtime_error("config line " + std::to_string(line_no) + ": " + msg), line(line_no) {}
};

class KeyValueConfig {
public:
    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // Keys in first-seen order, for config echo.
    const std::vector<std::string>& keys() const { return order_; }

    // Keys never read back by the consumer; used to reject unknown options.
    std::vector<std::string> unread_keys() const;

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
    mutable std::map<std::string, bool> read_;
};

}  // namespace ebus3d
