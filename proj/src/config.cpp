#include "csfc/config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>
#include <vector>

namespace csfc {

Variant parse_variant(std::string_view name) {
    if (name == "fc") return Variant::fc;
    if (name == "vanilla") return Variant::vanilla;
    if (name == "alt") return Variant::alt;
    if (name == "comb") return Variant::comb;
    throw ConfigError("unknown variant '" + std::string(name) +
                      "' (expected fc, vanilla, alt, or comb)");
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::fc: return "fc";
        case Variant::vanilla: return "vanilla";
        case Variant::alt: return "alt";
        case Variant::comb: return "comb";
    }
    return "fc";
}

void ModelConfig::validate() const {
    const std::pair<const char*, std::size_t> positives[] = {
        {"n", n}, {"m", m}, {"t", t}, {"w", w}, {"e", e}, {"L", L}, {"h", h}, {"b", b}};
    for (const auto& [key, value] : positives) {
        if (value == 0) {
            throw ConfigError(std::string("config: ") + key + " must be positive");
        }
    }
    if (v < 5 || z < 5) {
        throw ConfigError("config: vocabulary sizes must exceed the 4 special ids");
    }
    if (e % h != 0) {
        throw ConfigError("config: e=" + std::to_string(e) + " is not divisible by h=" +
                          std::to_string(h));
    }
    if (!(r > 0.0)) {
        throw ConfigError("config: r must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("config: dropout must lie in [0, 1)");
    }
}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0' || errno == ERANGE ||
        value.find('-') != std::string::npos) {
        throw ConfigError("config: " + key + " must be a nonnegative integer, got '" +
                          value + "'");
    }
    return static_cast<std::size_t>(parsed);
}

double parse_double(const std::string& key, const std::string& value) {
    errno = 0;
    char* end = nullptr;
    const double parsed = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0' || errno == ERANGE) {
        throw ConfigError("config: " + key + " must be a number, got '" + value + "'");
    }
    return parsed;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: " + key + " must be true or false, got '" + value + "'");
}

} // namespace

ModelConfig parse_model_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": empty key or value");
        }
        if (!kv.emplace(key, value).second) {
            throw ConfigError("config: duplicate key '" + key + "'");
        }
    }

    static const std::vector<std::string> required{
        "n", "m", "t", "w", "v", "z", "e", "L", "h", "b", "r", "variant", "seed", "dropout"};
    std::string missing;
    for (const auto& key : required) {
        if (!kv.count(key)) {
            missing += missing.empty() ? key : ", " + key;
        }
    }
    if (!missing.empty()) {
        throw ConfigError("config: missing keys: " + missing);
    }
    for (const auto& [key, value] : kv) {
        (void)value;
        if (std::find(required.begin(), required.end(), key) == required.end() &&
            key != "swap_cross") {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }

    ModelConfig cfg;
    cfg.n = parse_size("n", kv.at("n"));
    cfg.m = parse_size("m", kv.at("m"));
    cfg.t = parse_size("t", kv.at("t"));
    cfg.w = parse_size("w", kv.at("w"));
    cfg.v = parse_size("v", kv.at("v"));
    cfg.z = parse_size("z", kv.at("z"));
    cfg.e = parse_size("e", kv.at("e"));
    cfg.L = parse_size("L", kv.at("L"));
    cfg.h = parse_size("h", kv.at("h"));
    cfg.b = parse_size("b", kv.at("b"));
    cfg.r = parse_double("r", kv.at("r"));
    cfg.variant = parse_variant(kv.at("variant"));
    cfg.seed = static_cast<std::uint64_t>(parse_size("seed", kv.at("seed")));
    cfg.dropout = parse_double("dropout", kv.at("dropout"));
    if (kv.count("swap_cross")) {
        cfg.swap_cross = parse_bool("swap_cross", kv.at("swap_cross"));
    }
    cfg.validate();
    return cfg;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read config file '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_model_config(buf.str());
}

std::string serialize_model_config(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "n = " << cfg.n << '\n'
       << "m = " << cfg.m << '\n'
       << "t = " << cfg.t << '\n'
       << "w = " << cfg.w << '\n'
       << "v = " << cfg.v << '\n'
       << "z = " << cfg.z << '\n'
       << "e = " << cfg.e << '\n'
       << "L = " << cfg.L << '\n'
       << "h = " << cfg.h << '\n'
       << "b = " << cfg.b << '\n';
    char num[64];
    std::snprintf(num, sizeof(num), "%.17g", cfg.r);
    os << "r = " << num << '\n';
    os << "variant = " << variant_name(cfg.variant) << '\n';
    os << "seed = " << cfg.seed << '\n';
    std::snprintf(num, sizeof(num), "%.17g", cfg.dropout);
    os << "dropout = " << num << '\n';
    os << "swap_cross = " << (cfg.swap_cross ? "true" : "false") << '\n';
    return os.str();
}

} // namespace csfc
