#include "ebus3d/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace ebus3d {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("expected `key = value`", line_no);
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key", line_no);
        if (value.empty()) throw ConfigError("empty value for key `" + key + "`", line_no);
        if (cfg.values_.count(key)) throw ConfigError("duplicate key `" + key + "`", line_no);
        cfg.values_[key] = value;
        cfg.order_.push_back(key);
    }
    return cfg;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    read_[key] = true;
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    read_[key] = true;
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size())
        throw std::runtime_error("config key `" + key + "`: not a number: " + it->second);
    return v;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
    read_[key] = true;
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t pos = 0;
    std::int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size())
        throw std::runtime_error("config key `" + key + "`: not an integer: " + it->second);
    return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    read_[key] = true;
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("config key `" + key + "`: not a boolean: " + v);
}

std::vector<std::string> KeyValueConfig::unread_keys() const {
    std::vector<std::string> out;
    for (const auto& k : order_) {
        auto it = read_.find(k);
        if (it == read_.end() || !it->second) out.push_back(k);
    }
    return out;
}

}  // namespace ebus3d
