#include "cli/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace qcli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    });
}

bool parse_real(const std::string& s, double& out) {
    if (s.empty()) return false;
    errno = 0;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return errno == 0 && end == s.c_str() + s.size() && std::isfinite(out);
}

bool parse_integer(const std::string& s, long& out) {
    if (s.empty()) return false;
    errno = 0;
    char* end = nullptr;
    out = std::strtol(s.c_str(), &end, 10);
    return errno == 0 && end == s.c_str() + s.size();
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

const char* kind_name(ValueKind k) {
    switch (k) {
        case ValueKind::real: return "real";
        case ValueKind::integer: return "integer";
        case ValueKind::text: return "text";
        case ValueKind::real_list: return "list of reals";
    }
    return "";
}

void check_value(const KeySpec& spec, const std::string& value) {
    const auto fail = [&](const std::string& why) {
        throw ConfigError("key '" + spec.key + "': " + why + " (got '" + value + "')");
    };
    switch (spec.kind) {
        case ValueKind::real: {
            double v;
            if (!parse_real(value, v)) fail("expected a finite real number");
            break;
        }
        case ValueKind::integer: {
            long v;
            if (!parse_integer(value, v)) fail("expected an integer");
            break;
        }
        case ValueKind::real_list: {
            const auto items = split_list(value);
            if (items.empty()) fail("expected a comma-separated list of reals");
            for (const auto& it : items) {
                double v;
                if (!parse_real(it, v)) fail("expected a comma-separated list of reals");
            }
            break;
        }
        case ValueKind::text:
            if (!spec.choices.empty() &&
                std::find(spec.choices.begin(), spec.choices.end(), value) == spec.choices.end()) {
                std::string allowed;
                for (const auto& c : spec.choices) allowed += (allowed.empty() ? "" : "|") + c;
                fail("expected one of " + allowed);
            }
            break;
    }
}

}  // namespace

const KeySpec* Schema::find(const std::string& key) const {
    for (const auto& k : keys)
        if (k.key == key) return &k;
    return nullptr;
}

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_name(section)) throw ConfigError(where + "invalid section name '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
        const std::string name = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!valid_name(name)) throw ConfigError(where + "invalid key name '" + name + "'");
        const std::string key = section.empty() ? name : section + "." + name;
        if (out.count(key)) throw ConfigError(where + "key '" + key + "' given twice");
        out[key] = value;
    }
    return out;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path);
}

Config::Config(std::string experiment, std::map<std::string, std::string> values)
    : experiment_(std::move(experiment)), values_(std::move(values)) {}

const std::string& Config::raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("key '" + key + "' is not part of the " + experiment_ + " schema");
    return it->second;
}

double Config::real(const std::string& key) const {
    double v;
    if (!parse_real(raw(key), v)) throw ConfigError("key '" + key + "': expected a real number");
    return v;
}

long Config::integer(const std::string& key) const {
    long v;
    if (!parse_integer(raw(key), v)) throw ConfigError("key '" + key + "': expected an integer");
    return v;
}

std::uint64_t Config::seed() const {
    const long s = integer("run.seed");
    if (s < 0) throw ConfigError("key 'run.seed': must be non-negative");
    return static_cast<std::uint64_t>(s);
}

const std::string& Config::text(const std::string& key) const { return raw(key); }

std::vector<double> Config::reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& it : split_list(raw(key))) {
        double v;
        if (!parse_real(it, v)) throw ConfigError("key '" + key + "': expected a list of reals");
        out.push_back(v);
    }
    return out;
}

std::string Config::canonical() const {
    std::string s = "experiment = " + experiment_ + "\n";
    for (const auto& [k, v] : values_)
        if (k != kOutputKey) s += k + " = " + v + "\n";
    return s;
}

Config resolve(const Schema& schema, const std::map<std::string, std::string>& file_values,
               const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> values;
    for (const auto& [k, v] : file_values) {
        if (k == "experiment") {
            if (v != schema.name)
                throw ConfigError("key 'experiment': config is for '" + v + "', not '" + schema.name + "'");
            continue;
        }
        const KeySpec* spec = schema.find(k);
        if (!spec) throw ConfigError("unknown key '" + k + "' for experiment " + schema.name);
        check_value(*spec, v);
        values[k] = v;
    }
    for (const auto& spec : schema.keys)
        if (spec.required && !values.count(spec.key))
            throw ConfigError("missing required key '" + spec.key + "' for experiment " + schema.name);
    for (const auto& [k, v] : overrides) {
        const KeySpec* spec = schema.find(k);
        if (!spec) throw ConfigError("unknown key '" + k + "' for experiment " + schema.name);
        check_value(*spec, v);
        values[k] = v;
    }
    for (const auto& spec : schema.keys)
        if (!values.count(spec.key)) values[spec.key] = spec.default_value;
    return Config(schema.name, std::move(values));
}

std::string schema_template(const Schema& schema) {
    std::ostringstream out;
    out << "# " << schema.name << ": " << schema.summary << "\n";
    out << "experiment = " << schema.name << "\n";
    std::string section;
    for (const auto& spec : schema.keys) {
        const auto dot = spec.key.find('.');
        const std::string sec = spec.key.substr(0, dot);
        const std::string name = spec.key.substr(dot + 1);
        if (sec != section) {
            out << "\n[" << sec << "]\n";
            section = sec;
        }
        out << "# " << (spec.required ? "required" : "optional") << ", " << kind_name(spec.kind);
        if (!spec.choices.empty()) {
            out << " {";
            for (std::size_t i = 0; i < spec.choices.size(); ++i) out << (i ? "|" : "") << spec.choices[i];
            out << "}";
        }
        out << ": " << spec.doc << "\n";
        out << name << " = " << spec.default_value << "\n";
    }
    return out.str();
}

std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace qcli
