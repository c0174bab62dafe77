#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcli {

/// Schema or syntax violation; maps to exit status 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Output location; excluded from the canonical text so the hash ignores where files go.
inline constexpr const char* kOutputKey = "run.out";

enum class ValueKind { real, integer, text, real_list };

struct KeySpec {
    std::string key;  // dotted: section.name
    ValueKind kind = ValueKind::real;
    std::string default_value;
    bool required = false;  // must appear in the config file
    std::string doc;        // units and meaning
    std::vector<std::string> choices;  // allowed values for text keys, empty for free text
};

struct Schema {
    std::string name;
    std::string summary;
    std::vector<KeySpec> keys;

    const KeySpec* find(const std::string& key) const;
};

/// Parses `key = value` lines with `[section]` headers and `#` comments into dotted keys.
/// A top-level `experiment = name` line is returned under the key "experiment".
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin);
std::map<std::string, std::string> parse_config_file(const std::string& path);

class Config {
public:
    Config() = default;
    Config(std::string experiment, std::map<std::string, std::string> values);

    const std::string& experiment() const { return experiment_; }
    const std::map<std::string, std::string>& values() const { return values_; }

    double real(const std::string& key) const;
    long integer(const std::string& key) const;
    std::uint64_t seed() const;
    const std::string& text(const std::string& key) const;
    std::vector<double> reals(const std::string& key) const;

    /// Sorted `key = value` lines; the hashed identity of a run.
    std::string canonical() const;

private:
    const std::string& raw(const std::string& key) const;
    std::string experiment_;
    std::map<std::string, std::string> values_;
};

/// Validates file values against the schema, applies overrides, then fills defaults.
/// Unknown keys, bad values and missing required keys raise ConfigError naming the key.
Config resolve(const Schema& schema, const std::map<std::string, std::string>& file_values,
               const std::map<std::string, std::string>& overrides);

/// Config file text listing every key with its default; parses back to a valid config.
std::string schema_template(const Schema& schema);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& data);

}  // namespace qcli
