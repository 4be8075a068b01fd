#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace drfuser {

// Plain-text configuration:
//
//   # comment
//   [section]
//   key = value
//
// Keys are addressed as "section.key" (or just "key" before the first
// section). Lists are comma separated.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::size_t> get_sizes(const std::string& key,
                                       const std::vector<std::size_t>& fallback) const;

    // Keys never read through a getter; callers reject them as unknown.
    std::vector<std::string> unused_keys() const;

    // Sections in key order, "section.key = value" regrouped under [section].
    std::string to_string() const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> read_;
    std::string origin_;

    const std::string* lookup(const std::string& key) const;
};

}  // namespace drfuser
