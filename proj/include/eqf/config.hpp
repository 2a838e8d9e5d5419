#pragma once

// Run configuration: a key = value text file with [section] headers, JSON
// sidecars from earlier runs, and --set overrides. Values use JSON syntax
// (numbers, "strings", true/false, [arrays]), which is also valid TOML for
// everything the schema accepts.

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agents.hpp"
#include "error.hpp"
#include "kmc.hpp"
#include "meanfield.hpp"
#include "protocol.hpp"

namespace eqf::config {

using json = nlohmann::json;

enum class Kind { Number, Integer, String, Bool, Vector, Matrix };

struct KeySpec {
    std::string key;
    Kind kind;
    /// null: optional with no default.
    json fallback;
};

inline std::string_view kind_name(Kind k) {
    switch (k) {
    case Kind::Number: return "a number";
    case Kind::Integer: return "a non-negative integer";
    case Kind::String: return "a string";
    case Kind::Bool: return "true or false";
    case Kind::Vector: return "an array of numbers";
    case Kind::Matrix: return "an array of number arrays";
    }
    return "a value";
}

inline bool matches(const json& v, Kind k) {
    auto numbers = [](const json& a) {
        if (!a.is_array()) return false;
        for (const auto& e : a)
            if (!e.is_number()) return false;
        return true;
    };
    switch (k) {
    case Kind::Number: return v.is_number();
    case Kind::Integer: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case Kind::String: return v.is_string();
    case Kind::Bool: return v.is_boolean();
    case Kind::Vector: return numbers(v);
    case Kind::Matrix:
        if (!v.is_array()) return false;
        for (const auto& row : v)
            if (!numbers(row)) return false;
        return true;
    }
    return false;
}

/// Model parameter keys and defaults of each simulator.
inline json model_defaults(const std::string& simulator) {
    json m = json::object();
    auto fill = [&](const auto& p) {
        for (auto n : p.names()) m[std::string(n)] = p.get(n);
    };
    if (simulator == "meanfield") fill(meanfield::MfParams{});
    else if (simulator == "kmc") fill(kmc::KmcParams{});
    else if (simulator == "agents") fill(agents::AgentParams{});
    else throw ConfigError("unknown simulator '" + simulator + "' (known: meanfield kmc agents)");
    return m;
}

inline const std::vector<KeySpec>& schema() {
    static const std::vector<KeySpec> s = [] {
        const ProtocolConfig pc;
        const agents::AgentParams ap;
        std::vector<KeySpec> v{
            {"simulator", Kind::String, "meanfield"},
            {"seed", Kind::Integer, 0},
            {"threads", Kind::Integer, 1},
            {"out", Kind::String, "out"},

            {"meanfield.dt", Kind::Number, 1e-3},
            {"kmc.width", Kind::Integer, 128},
            {"kmc.height", Kind::Integer, 128},
            {"kmc.mixing", Kind::String, "well_mixed"},
            {"agents.N", Kind::Integer, ap.N},
            {"agents.lifting", Kind::String, "delta"},
            {"agents.spread", Kind::Number, 0.0},
            {"ensemble.n_realizations", Kind::Integer, 1},

            {"simulate.start", Kind::Vector, nullptr},
            {"simulate.T", Kind::Number, 10.0},
            {"simulate.sample_dt", Kind::Number, 0.1},

            {"protocol.parameter", Kind::String, nullptr},
            {"protocol.start", Kind::Vector, nullptr},
            {"protocol.u0", Kind::Number, nullptr},
            {"protocol.gain", Kind::Number, pc.gain},
            {"protocol.chord_fraction", Kind::Number, pc.chord_fraction},
            {"protocol.expansion", Kind::Number, nullptr},
            {"protocol.tol1", Kind::Number, nullptr},
            {"protocol.tol2", Kind::Number, nullptr},
            {"protocol.tol3", Kind::Number, nullptr},
            {"protocol.min_width", Kind::Number, nullptr},
            {"protocol.T", Kind::Number, pc.T},
            {"protocol.T_r", Kind::Number, pc.T_r},
            {"protocol.T_s", Kind::Number, pc.T_s},
            {"protocol.max_outer", Kind::Integer, pc.max_outer},
            {"protocol.max_inner", Kind::Integer, pc.max_inner},
            {"protocol.noise_multiplier", Kind::Number, pc.noise_multiplier},
            {"protocol.divergence_window", Kind::Integer, pc.divergence_window},
            {"protocol.divergence_factor", Kind::Number, pc.divergence_factor},
            {"protocol.parameter_min", Kind::Number, pc.parameter_min},
            {"protocol.parameter_max", Kind::Number, nullptr},
            {"protocol.drift_signs", Kind::Vector, nullptr},

            {"trace.parameter", Kind::String, nullptr},
            {"trace.grid", Kind::Vector, nullptr},
            {"trace.grid_start", Kind::Number, nullptr},
            {"trace.grid_stop", Kind::Number, nullptr},
            {"trace.grid_step", Kind::Number, nullptr},
            {"trace.stable_starts", Kind::Matrix, json::array()},
            {"trace.stable_reverse", Kind::Vector, nullptr},
            {"trace.settle_T", Kind::Number, 50.0},
            {"trace.jump_threshold", Kind::Number, 0.1},
            {"trace.saddle", Kind::Bool, false},
            {"trace.saddle_start", Kind::Vector, nullptr},
            {"trace.steer", Kind::String, ""},
            {"trace.warm_start", Kind::Bool, true},
            {"trace.max_consecutive_failures", Kind::Integer, 2},
            {"trace.max_slope", Kind::Number, nullptr},
            {"trace.window", Kind::Vector, nullptr},

            {"eigs.parameter", Kind::String, "beta"},
            {"eigs.grid", Kind::Vector, nullptr},
            {"eigs.grid_start", Kind::Number, nullptr},
            {"eigs.grid_stop", Kind::Number, nullptr},
            {"eigs.grid_step", Kind::Number, nullptr},
        };
        return v;
    }();
    return s;
}

inline const KeySpec* find_key(const std::string& key) {
    for (const auto& k : schema())
        if (k.key == key) return &k;
    return nullptr;
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

/// Drop a trailing # comment that is not inside a string.
inline std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
        else if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

class RunConfig {
public:
    struct Entry {
        json value;
        /// "file:line", "--set" or "sidecar", for error messages.
        std::string origin;
    };

    /// Parse key = value text. `source` names it in error messages.
    void load_text(const std::string& text, const std::string& source) {
        std::istringstream in(text);
        std::string line, section;
        std::map<std::string, int> seen;
        for (int n = 1; std::getline(in, line); ++n) {
            const std::string where = source + ":" + std::to_string(n);
            const std::string body = trim(strip_comment(line));
            if (body.empty()) continue;
            if (body.front() == '[') {
                if (body.back() != ']') throw ConfigError(where + ": malformed section header");
                section = trim(body.substr(1, body.size() - 2));
                if (section.empty()) throw ConfigError(where + ": empty section name");
                continue;
            }
            const auto eq = body.find('=');
            if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
            const std::string name = trim(body.substr(0, eq));
            if (name.empty()) throw ConfigError(where + ": missing key");
            const std::string key = section.empty() ? name : section + "." + name;
            if (auto it = seen.find(key); it != seen.end())
                throw ConfigError(where + ": '" + key + "' already set on line " + std::to_string(it->second));
            seen[key] = n;
            json v = json::parse(trim(body.substr(eq + 1)), nullptr, false);
            if (v.is_discarded()) throw ConfigError(where + ": cannot parse the value of '" + key + "'");
            put(key, std::move(v), where);
        }
    }

    /// A sidecar ({"config": {...}}) or a flat JSON object of dotted keys.
    void load_json(const json& j, const std::string& source) {
        const json& flat = j.contains("config") ? j.at("config") : j;
        if (!flat.is_object()) throw ConfigError(source + ": expected a JSON object of settings");
        for (const auto& [k, v] : flat.items()) {
            if (v.is_null()) continue; // unset optional in a resolved config
            put(k, v, source + ": " + k);
        }
    }

    void load_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ConfigError("cannot read config '" + path + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        const std::string text = ss.str();
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && text[first] == '{') {
            json j = json::parse(text, nullptr, false);
            if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
            load_json(j, path);
        } else {
            load_text(text, path);
        }
    }

    /// "key=value"; a value that is not valid JSON is taken as a bare string.
    void set_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) throw ConfigError("--set " + assignment + ": expected key=value");
        const std::string key = trim(assignment.substr(0, eq));
        const std::string text = trim(assignment.substr(eq + 1));
        json v = json::parse(text, nullptr, false);
        if (v.is_discarded()) v = text;
        put(key, std::move(v), "--set " + key);
    }

    void set(const std::string& key, json v, const std::string& origin) { put(key, std::move(v), origin); }

    std::string simulator() const {
        auto it = entries_.find("simulator");
        if (it == entries_.end()) return "meanfield";
        if (!it->second.value.is_string()) throw ConfigError(it->second.origin + ": 'simulator' must be a string");
        return it->second.value.get<std::string>();
    }

    /// Reject unknown keys and values of the wrong type.
    void validate() const {
        const std::string sim = simulator();
        const json model = model_defaults(sim);
        for (const auto& [key, e] : entries_) {
            if (key.rfind("model.", 0) == 0) {
                const std::string name = key.substr(6);
                if (!model.contains(name)) {
                    std::string known;
                    for (const auto& [n, _] : model.items()) known += " " + n;
                    throw ConfigError(e.origin + ": unknown model parameter '" + name + "' for " + sim +
                                      " (known:" + known + ")");
                }
                if (!e.value.is_number()) throw ConfigError(e.origin + ": '" + key + "' must be a number");
                continue;
            }
            const KeySpec* spec = find_key(key);
            if (!spec) throw ConfigError(e.origin + ": unknown key '" + key + "'");
            if (!matches(e.value, spec->kind))
                throw ConfigError(e.origin + ": '" + key + "' must be " + std::string(kind_name(spec->kind)));
        }
    }

    bool has(const std::string& key) const { return !value(key).is_null(); }

    /// Effective value: explicit setting, else the schema or model default.
    json value(const std::string& key) const {
        if (auto it = entries_.find(key); it != entries_.end()) return it->second.value;
        if (key.rfind("model.", 0) == 0) {
            const json model = model_defaults(simulator());
            const std::string name = key.substr(6);
            return model.contains(name) ? model.at(name) : json();
        }
        if (const KeySpec* spec = find_key(key)) return spec->fallback;
        throw ConfigError("unknown key '" + key + "'");
    }

    std::string origin(const std::string& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? "default " + key : it->second.origin;
    }

    template <class T>
    T get(const std::string& key) const {
        const json v = value(key);
        if (v.is_null()) throw ConfigError(origin(key) + ": '" + key + "' is required");
        return v.get<T>();
    }

    template <class T>
    std::optional<T> get_optional(const std::string& key) const {
        const json v = value(key);
        if (v.is_null()) return std::nullopt;
        return v.get<T>();
    }

    /// Every key with its effective value (null for unset optionals); model
    /// parameters of the selected simulator included.
    json resolved() const {
        validate();
        json out = json::object();
        for (const auto& k : schema()) out[k.key] = value(k.key);
        const json model = model_defaults(simulator());
        for (const auto& [name, v] : model.items()) out["model." + name] = value("model." + name);
        return out;
    }

private:
    void put(const std::string& key, json v, const std::string& origin) {
        if (key.empty()) throw ConfigError(origin + ": empty key");
        entries_[key] = {std::move(v), origin};
    }

    std::map<std::string, Entry> entries_;
};

/// Grid from `prefix.grid`, or from prefix.grid_start/grid_stop/grid_step
/// (stop included when it lies on the lattice). Empty when neither is set.
inline std::vector<double> grid(const RunConfig& cfg, const std::string& prefix) {
    if (auto g = cfg.get_optional<std::vector<double>>(prefix + ".grid")) return *g;
    const auto a = cfg.get_optional<double>(prefix + ".grid_start");
    const auto b = cfg.get_optional<double>(prefix + ".grid_stop");
    const auto h = cfg.get_optional<double>(prefix + ".grid_step");
    if (!a && !b && !h) return {};
    if (!a || !b || !h) throw ConfigError(prefix + ": grid_start, grid_stop and grid_step go together");
    if (!(*h > 0.0) || !(*b >= *a)) throw ConfigError(prefix + ": need grid_step > 0 and grid_stop >= grid_start");
    std::vector<double> out;
    const auto n = static_cast<long long>(std::floor((*b - *a) / *h + 1e-9));
    for (long long i = 0; i <= n; ++i) out.push_back(*a + static_cast<double>(i) * *h);
    return out;
}

} // namespace eqf::config
