#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sedsr {

/// Flat key/value configuration document.
///
/// File syntax is line oriented:
///
///     # comment
///     seed = 7
///     [train]
///     iterations = 500        # becomes train.iterations
///
/// Keys are dotted paths; a `[section]` header prefixes the keys that follow it.
/// Values are kept as text and converted on access, so a bad value surfaces as a
/// ConfigError naming the offending key.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::filesystem::path& path);

    /// Applies a `key=value` override (the CLI's `--set`).
    void apply_override(const std::string& assignment);
    void set(const std::string& key, std::string value);

    bool contains(const std::string& key) const;
    const std::map<std::string, std::string>& entries() const { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::optional<std::string> find(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int64_t> get_int_list(const std::string& key,
                                      const std::vector<int64_t>& fallback) const;

    /// Throws ConfigError for any key not in `known`.
    void reject_unknown(const std::vector<std::string>& known) const;

    /// Serializes back to the file syntax, one `key = value` per line, sorted.
    std::string to_string() const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace sedsr
