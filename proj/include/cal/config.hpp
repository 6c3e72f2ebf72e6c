#pragma once

// Flat key = value configuration files. Blank lines and '#' comments are
// ignored, values may be double-quoted, and [section] headers are accepted
// for readability but do not namespace keys.

#include "engine.hpp"
#include "error.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

namespace cal {

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

} // namespace detail

inline KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto body = detail::trim(line);
        if (body.empty() || (body.front() == '[' && body.back() == ']')) continue;
        auto eq = body.find_first_of("=:");
        if (eq == std::string::npos) {
            throw Error(ErrorCode::parse, "config line " + std::to_string(line_no) + ": expected key = value");
        }
        auto key = detail::trim(std::string_view(body).substr(0, eq));
        auto value = detail::trim(std::string_view(body).substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        if (key.empty()) {
            throw Error(ErrorCode::parse, "config line " + std::to_string(line_no) + ": empty key");
        }
        kv[key] = value;
    }
    return kv;
}

inline KeyValues read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::not_found, "file not found: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_key_values(buf.str());
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::bad_request, "config key '" + key + "' expects a number, got '" + v + "'");
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        auto n = std::stoull(v, &used);
        if (used == v.size() && v.find('-') == std::string::npos) return n;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::bad_request, "config key '" + key + "' expects a non-negative integer, got '" + v + "'");
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw Error(ErrorCode::bad_request, "config key '" + key + "' expects true/false, got '" + v + "'");
}

} // namespace detail

/// Applies one EngineConfig key; false when the key is not an engine key.
inline bool apply_engine_key(EngineConfig& c, const std::string& key, const std::string& v) {
    using namespace detail;
    if (key == "alpha") c.alpha = to_double(key, v);
    else if (key == "confidence") c.alpha = 1.0 - to_double(key, v);
    else if (key == "validation_fraction") c.validation_fraction = to_double(key, v);
    else if (key == "min_labels_before_training") c.min_labels_before_training = to_uint(key, v);
    else if (key == "k_top") c.selection.k_top = to_uint(key, v);
    else if (key == "k_cluster") c.selection.k_cluster = to_uint(key, v);
    else if (key == "high_fraction") c.selection.high_fraction = to_double(key, v);
    else if (key == "retrain_policy") c.retrain = RetrainPolicy::parse(v);
    else if (key == "seed") c.seed = to_uint(key, v);
    else if (key == "l2") c.train.l2 = to_double(key, v);
    else if (key == "max_epochs") c.train.max_epochs = static_cast<int>(to_uint(key, v));
    else if (key == "class_weighting") c.train.class_weighting = to_bool(key, v);
    else if (key == "min_df") c.vocab.min_df = to_uint(key, v);
    else if (key == "max_features") c.vocab.max_features = to_uint(key, v);
    else if (key == "lowercase") c.vocab.lowercase = to_bool(key, v);
    else if (key == "eval_scope") c.eval_scope = parse_eval_scope(v);
    else if (key == "background_training") c.background_training = to_bool(key, v);
    else return false;
    return true;
}

inline EngineConfig engine_config_from(const KeyValues& kv, EngineConfig base = {}) {
    for (const auto& [k, v] : kv) {
        if (!apply_engine_key(base, k, v)) {
            throw Error(ErrorCode::bad_request, "unknown config key '" + k + "'");
        }
    }
    base.validate();
    return base;
}

} // namespace cal
