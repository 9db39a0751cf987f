#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crocodil/numerics/tensor.hpp"

namespace crocodil {

// Sectioned key-value configuration. Text form:
//
//   [corpus]
//   vocab_size = 64        # comment
//   seq_len = 16
//
// Keys are unique within a section. The canonical text (sections and keys
// sorted) is what the config hash covers, so flag-override order does not
// change the hash of an identical effective config.
class Config {
  public:
    Config() = default;

    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip_comment(line);
            s = trim(s);
            if (s.empty()) continue;
            if (s.front() == '[') {
                CROC_CHECK(s.back() == ']', "config: unterminated section header at line " +
                                                std::to_string(lineno));
                section = trim(s.substr(1, s.size() - 2));
                continue;
            }
            auto eq = s.find('=');
            CROC_CHECK(eq != std::string::npos,
                       "config: expected 'key = value' at line " + std::to_string(lineno));
            std::string key = trim(s.substr(0, eq));
            std::string val = trim(s.substr(eq + 1));
            CROC_CHECK(!key.empty(), "config: empty key at line " + std::to_string(lineno));
            cfg.values_[section][key] = val;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        CROC_CHECK(in.good(), "config: cannot open '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& sec, const std::string& key) const {
        auto s = values_.find(sec);
        return s != values_.end() && s->second.count(key) > 0;
    }

    std::string get_str(const std::string& sec, const std::string& key,
                        const std::string& fallback) const {
        auto s = values_.find(sec);
        if (s == values_.end()) return fallback;
        auto k = s->second.find(key);
        return k == s->second.end() ? fallback : k->second;
    }

    std::string require_str(const std::string& sec, const std::string& key) const {
        CROC_CHECK(has(sec, key), "config: missing required key [" + sec + "] " + key);
        return values_.at(sec).at(key);
    }

    int64_t get_i64(const std::string& sec, const std::string& key, int64_t fallback) const {
        if (!has(sec, key)) return fallback;
        return std::stoll(values_.at(sec).at(key));
    }

    double get_f64(const std::string& sec, const std::string& key, double fallback) const {
        if (!has(sec, key)) return fallback;
        return std::stod(values_.at(sec).at(key));
    }

    bool get_bool(const std::string& sec, const std::string& key, bool fallback) const {
        if (!has(sec, key)) return fallback;
        const std::string& v = values_.at(sec).at(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw std::runtime_error("config: bad boolean '" + v + "' for [" + sec + "] " + key);
    }

    std::vector<double> get_f64_list(const std::string& sec, const std::string& key,
                                     std::vector<double> fallback = {}) const {
        if (!has(sec, key)) return fallback;
        std::vector<double> out;
        std::istringstream ss(values_.at(sec).at(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(std::stod(item));
        }
        return out;
    }

    std::vector<std::string> get_str_list(const std::string& sec, const std::string& key,
                                          std::vector<std::string> fallback = {}) const {
        if (!has(sec, key)) return fallback;
        std::vector<std::string> out;
        std::istringstream ss(values_.at(sec).at(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    void set(const std::string& sec, const std::string& key, const std::string& val) {
        values_[sec][key] = val;
    }
    void set_i64(const std::string& sec, const std::string& key, int64_t v) {
        set(sec, key, std::to_string(v));
    }
    void set_f64(const std::string& sec, const std::string& key, double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        set(sec, key, ss.str());
    }

    // overlay wins on conflicts
    void merge_from(const Config& overlay) {
        for (const auto& [sec, kv] : overlay.values_)
            for (const auto& [k, v] : kv) values_[sec][k] = v;
    }

    std::string to_text() const {
        std::ostringstream out;
        for (const auto& [sec, kv] : values_) {
            if (!sec.empty()) out << "[" << sec << "]\n";
            for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
        }
        return out.str();
    }

    uint64_t hash() const { return fnv1a(to_text()); }

    static uint64_t fnv1a(const std::string& s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return values_;
    }

  private:
    static std::string strip_comment(const std::string& s) {
        auto pos = s.find('#');
        return pos == std::string::npos ? s : s.substr(0, pos);
    }
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::map<std::string, std::string>> values_;
};

} // namespace crocodil
