#pragma once
// Run configuration: plain key=value text, strict keys, typed values.
// The same serialization is embedded in checkpoints.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "elecrec/errors.hpp"

namespace elec {

enum class Sharing { ES, FS };
enum class SamplerMode { Multinomial, Argmax };
enum class Variant { Elecrec, GeneratorOnly, SequentialBce };

inline std::string to_string(Sharing s) { return s == Sharing::ES ? "es" : "fs"; }
inline std::string to_string(SamplerMode m) { return m == SamplerMode::Multinomial ? "multinomial" : "argmax"; }
inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::Elecrec: return "elecrec";
        case Variant::GeneratorOnly: return "generator_only";
        default: return "sequential_bce";
    }
}

struct TrainConfig {
    double alpha = 0.5;
    double lambda = 0.5;
    Sharing sharing_mode = Sharing::ES;
    SamplerMode sampler_mode = SamplerMode::Multinomial;
    Variant variant = Variant::Elecrec;
    double lr = 1e-3;
    double dropout = 0.2;
    int batch_size = 256;
    int max_len = 50;
    int hidden = 64;
    int layers = 2;
    int heads = 2;
    int epochs_max = 200;
    int patience = 40;
    std::uint64_t seed = 42;
    std::string data;
    std::string out;

    void validate() const {
        std::vector<std::string> bad;
        if (alpha < 0.0 || alpha > 1.0) bad.push_back("alpha must be in [0,1]");
        if (lambda < 0.0) bad.push_back("lambda must be >= 0");
        if (lr < 0.0) bad.push_back("lr must be >= 0");
        if (dropout < 0.0 || dropout >= 1.0) bad.push_back("dropout must be in [0,1)");
        if (batch_size < 1) bad.push_back("batch_size must be >= 1");
        if (max_len < 2) bad.push_back("max_len must be >= 2");
        if (hidden < 1) bad.push_back("d must be >= 1");
        if (layers < 1) bad.push_back("layers must be >= 1");
        if (heads < 1) bad.push_back("heads must be >= 1");
        if (hidden % heads != 0) bad.push_back("d must be divisible by heads");
        if (epochs_max < 1) bad.push_back("epochs_max must be >= 1");
        if (patience < 1) bad.push_back("patience must be >= 1");
        if (!bad.empty()) {
            std::string msg = "invalid config:";
            for (const auto& b : bad) msg += "\n  " + b;
            throw ConfigError(msg);
        }
    }
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    try {
        size_t n = 0;
        out = std::stod(s, &n);
        return n == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

inline bool parse_int(const std::string& s, int& out) {
    try {
        size_t n = 0;
        out = std::stoi(s, &n);
        return n == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

inline bool parse_u64(const std::string& s, std::uint64_t& out) {
    try {
        size_t n = 0;
        out = std::stoull(s, &n);
        return n == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Parses key=value text. Unknown keys and untypable values are all collected
// and reported together. '#' starts a comment line.
inline TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::vector<std::string> errors;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(line_no) + ": expected key=value, got '" + t + "'");
            continue;
        }
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string val = detail::trim(t.substr(eq + 1));
        auto bad_value = [&] { errors.push_back("key '" + key + "': bad value '" + val + "'"); };
        if (key == "alpha") {
            if (!detail::parse_double(val, cfg.alpha)) bad_value();
        } else if (key == "lambda") {
            if (!detail::parse_double(val, cfg.lambda)) bad_value();
        } else if (key == "sharing_mode") {
            if (val == "es") cfg.sharing_mode = Sharing::ES;
            else if (val == "fs") cfg.sharing_mode = Sharing::FS;
            else bad_value();
        } else if (key == "sampler_mode") {
            if (val == "multinomial") cfg.sampler_mode = SamplerMode::Multinomial;
            else if (val == "argmax") cfg.sampler_mode = SamplerMode::Argmax;
            else bad_value();
        } else if (key == "variant") {
            if (val == "elecrec") cfg.variant = Variant::Elecrec;
            else if (val == "generator_only") cfg.variant = Variant::GeneratorOnly;
            else if (val == "sequential_bce") cfg.variant = Variant::SequentialBce;
            else bad_value();
        } else if (key == "lr") {
            if (!detail::parse_double(val, cfg.lr)) bad_value();
        } else if (key == "dropout") {
            if (!detail::parse_double(val, cfg.dropout)) bad_value();
        } else if (key == "batch_size") {
            if (!detail::parse_int(val, cfg.batch_size)) bad_value();
        } else if (key == "max_len") {
            if (!detail::parse_int(val, cfg.max_len)) bad_value();
        } else if (key == "d") {
            if (!detail::parse_int(val, cfg.hidden)) bad_value();
        } else if (key == "layers") {
            if (!detail::parse_int(val, cfg.layers)) bad_value();
        } else if (key == "heads") {
            if (!detail::parse_int(val, cfg.heads)) bad_value();
        } else if (key == "epochs_max") {
            if (!detail::parse_int(val, cfg.epochs_max)) bad_value();
        } else if (key == "patience") {
            if (!detail::parse_int(val, cfg.patience)) bad_value();
        } else if (key == "seed") {
            if (!detail::parse_u64(val, cfg.seed)) bad_value();
        } else if (key == "data") {
            cfg.data = val;
        } else if (key == "out") {
            cfg.out = val;
        } else {
            errors.push_back("unknown key '" + key + "'");
        }
    }
    if (!errors.empty()) {
        std::string msg = "config errors:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

inline std::string serialize_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "alpha=" << cfg.alpha << '\n';
    os << "lambda=" << cfg.lambda << '\n';
    os << "sharing_mode=" << to_string(cfg.sharing_mode) << '\n';
    os << "sampler_mode=" << to_string(cfg.sampler_mode) << '\n';
    os << "variant=" << to_string(cfg.variant) << '\n';
    os << "lr=" << cfg.lr << '\n';
    os << "dropout=" << cfg.dropout << '\n';
    os << "batch_size=" << cfg.batch_size << '\n';
    os << "max_len=" << cfg.max_len << '\n';
    os << "d=" << cfg.hidden << '\n';
    os << "layers=" << cfg.layers << '\n';
    os << "heads=" << cfg.heads << '\n';
    os << "epochs_max=" << cfg.epochs_max << '\n';
    os << "patience=" << cfg.patience << '\n';
    os << "seed=" << cfg.seed << '\n';
    os << "data=" << cfg.data << '\n';
    os << "out=" << cfg.out << '\n';
    return os.str();
}

// Maps a CLI variant name onto config fields. "elecrec_es"/"elecrec_fs" pin
// the sharing mode; "generator_only" forces lambda to 0.
inline void apply_variant(TrainConfig& cfg, const std::string& name) {
    if (name == "elecrec_es") {
        cfg.variant = Variant::Elecrec;
        cfg.sharing_mode = Sharing::ES;
    } else if (name == "elecrec_fs") {
        cfg.variant = Variant::Elecrec;
        cfg.sharing_mode = Sharing::FS;
    } else if (name == "generator_only") {
        cfg.variant = Variant::GeneratorOnly;
        cfg.lambda = 0.0;
    } else if (name == "sequential_bce") {
        cfg.variant = Variant::SequentialBce;
    } else {
        throw ConfigError("unknown variant '" + name +
                          "' (expected elecrec_es, elecrec_fs, generator_only or sequential_bce)");
    }
}

}  // namespace elec
