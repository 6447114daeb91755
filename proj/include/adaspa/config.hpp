#pragma once

// Flat key-value experiment manifests:
//
//   # comment            (also ';')
//   [section]
//   key = value
//
// Keys are addressed as (section, key). Environment variables named
// ADASPA_<SECTION>_<KEY> (upper-cased) override file values for keys the
// config already knows; command-line flags are applied last by the caller.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace adaspa {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, std::size_t line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    explicit ConfigError(const std::string& what) : std::runtime_error(what), line_(0) {}

    /// 1-based line of the offending entry; 0 when not tied to a file line.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class Config {
public:
    struct Entry {
        std::string value;
        std::string source = "<default>";
        std::size_t line = 0;
    };

    static Config parse(std::string_view text, const std::string& source = "<string>") {
        Config cfg;
        cfg.merge(text, source);
        return cfg;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path.string());
        std::stringstream buffer;
        buffer << in.rdbuf();
        return parse(buffer.str(), path.string());
    }

    /// Parses `text` on top of the current entries.
    void merge(std::string_view text, const std::string& source) {
        std::string section;
        std::size_t line_no = 0;
        std::map<std::string, std::size_t> seen;
        std::istringstream in{std::string(text)};
        std::string raw;
        while (std::getline(in, raw)) {
            ++line_no;
            const std::string line = trim(raw);
            if (line.empty() || line[0] == '#' || line[0] == ';') continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(source, line_no, "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty()) throw ConfigError(source, line_no, "empty section name");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(source, line_no, "expected 'key = value'");
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError(source, line_no, "empty key");
            const std::string name = qualified(section, key);
            if (const auto it = seen.find(name); it != seen.end()) {
                throw ConfigError(source, line_no,
                                  "duplicate key '" + name + "' (first set on line " + std::to_string(it->second) + ")");
            }
            seen.emplace(name, line_no);
            entries_[name] = Entry{trim(line.substr(eq + 1)), source, line_no};
        }
    }

    void set(const std::string& section, const std::string& key, std::string value,
             std::string source = "<override>") {
        entries_[qualified(section, key)] = Entry{std::move(value), std::move(source), 0};
    }

    bool has(const std::string& section, const std::string& key) const {
        return entries_.count(qualified(section, key)) != 0;
    }

    std::optional<std::string> get(const std::string& section, const std::string& key) const {
        const auto it = entries_.find(qualified(section, key));
        if (it == entries_.end()) return std::nullopt;
        return it->second.value;
    }

    std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
        return get(section, key).value_or(fallback);
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        return convert<double>(section, key, fallback, [](const std::string& s, std::size_t* pos) {
            return std::stod(s, pos);
        });
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const {
        return convert<std::uint64_t>(section, key, fallback, [](const std::string& s, std::size_t* pos) {
            if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
            return static_cast<std::uint64_t>(std::stoull(s, pos));
        });
    }

    std::size_t get_size(const std::string& section, const std::string& key, std::size_t fallback) const {
        return static_cast<std::size_t>(get_u64(section, key, fallback));
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        const auto it = entries_.find(qualified(section, key));
        if (it == entries_.end()) return fallback;
        const auto parsed = parse_bool(it->second.value);
        if (!parsed) fail(it->second, key, "expects a boolean (true/false/1/0/yes/no/on/off)");
        return *parsed;
    }

    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    const std::vector<double>& fallback) const {
        const auto it = entries_.find(qualified(section, key));
        if (it == entries_.end()) return fallback;
        try {
            return parse_list<double>(it->second.value, [](const std::string& s, std::size_t* pos) {
                return std::stod(s, pos);
            });
        } catch (const std::exception&) {
            fail(it->second, key, "expects a comma-separated list of numbers");
        }
    }

    std::vector<std::size_t> get_sizes(const std::string& section, const std::string& key,
                                       const std::vector<std::size_t>& fallback) const {
        const auto it = entries_.find(qualified(section, key));
        if (it == entries_.end()) return fallback;
        try {
            return parse_list<std::size_t>(it->second.value, [](const std::string& s, std::size_t* pos) {
                if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
                return static_cast<std::size_t>(std::stoull(s, pos));
            });
        } catch (const std::exception&) {
            fail(it->second, key, "expects a comma-separated list of non-negative integers");
        }
    }

    /// ADASPA_<SECTION>_<KEY> overrides for every key already present.
    /// `lookup` defaults to std::getenv; tests inject their own.
    template <typename Lookup>
    void apply_env(Lookup&& lookup, const std::string& prefix = "ADASPA") {
        for (auto& [name, entry] : entries_) {
            std::string var = prefix + "_" + name;
            std::replace(var.begin(), var.end(), '.', '_');
            std::transform(var.begin(), var.end(), var.begin(),
                           [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
            if (const char* value = lookup(var.c_str())) entry = Entry{value, "env:" + var, 0};
        }
    }

    void apply_env() {
        apply_env([](const char* name) -> const char* { return std::getenv(name); });
    }

    /// Stable text form: sections and keys in lexicographic order.
    std::string to_text() const {
        std::ostringstream out;
        std::string current;
        bool first = true;
        for (const auto& [name, entry] : entries_) {
            const auto dot = name.find('.');
            const std::string section = dot == std::string::npos ? "" : name.substr(0, dot);
            const std::string key = dot == std::string::npos ? name : name.substr(dot + 1);
            if (first || section != current) {
                if (!first) out << "\n";
                if (!section.empty()) out << "[" << section << "]\n";
                current = section;
                first = false;
            }
            out << key << " = " << entry.value << "\n";
        }
        return out.str();
    }

    const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

    static std::optional<bool> parse_bool(std::string value) {
        std::transform(value.begin(), value.end(), value.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
        if (value == "false" || value == "0" || value == "no" || value == "off") return false;
        return std::nullopt;
    }

private:
    static std::string qualified(const std::string& section, const std::string& key) {
        return section.empty() ? key : section + "." + key;
    }

    static std::string trim(std::string_view s) {
        const auto first = s.find_first_not_of(" \t\r\n");
        if (first == std::string_view::npos) return {};
        const auto last = s.find_last_not_of(" \t\r\n");
        return std::string(s.substr(first, last - first + 1));
    }

    [[noreturn]] static void fail(const Entry& entry, const std::string& key, const std::string& what) {
        const std::string msg = "key '" + key + "' = '" + entry.value + "' " + what;
        if (entry.line > 0) throw ConfigError(entry.source, entry.line, msg);
        throw ConfigError(entry.source + ": " + msg);
    }

    template <typename T, typename Parse>
    T convert(const std::string& section, const std::string& key, T fallback, Parse&& parse) const {
        const auto it = entries_.find(qualified(section, key));
        if (it == entries_.end()) return fallback;
        try {
            return parse_one<T>(it->second.value, parse);
        } catch (const std::exception&) {
            fail(it->second, key, "is not a valid number");
        }
    }

    template <typename T, typename Parse>
    static T parse_one(const std::string& text, Parse&& parse) {
        const std::string s = trim(text);
        std::size_t pos = 0;
        T value = parse(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return value;
    }

    template <typename T, typename Parse>
    static std::vector<T> parse_list(const std::string& text, Parse&& parse) {
        std::vector<T> out;
        std::string item;
        std::istringstream in(text);
        while (std::getline(in, item, ',')) {
            if (trim(item).empty()) continue;
            out.push_back(parse_one<T>(item, parse));
        }
        return out;
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace adaspa
