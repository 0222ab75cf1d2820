#pragma once

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>
#include <string_view>

namespace onionpos {

/// Invalid configuration file. what() carries "source:line: message".
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace config {

using Json = nlohmann::json;

/// Parses JSON text, rewriting syntax errors as "source:line:col: ...".
Json parse(std::string_view text, const std::string& source);

/// Reads a file; throws ConfigError("source: cannot open") when unreadable.
std::string readFile(const std::string& path);

/// 1-based line of the first occurrence of "key" in text, or 0.
int lineOfKey(std::string_view text, std::string_view key);

/// Throws ConfigError pointing at the line holding `key`.
[[noreturn]] void fail(std::string_view text, const std::string& source, std::string_view key,
                       const std::string& message);

/// Rejects keys of `obj` outside `allowed`.
void rejectUnknownKeys(const Json& obj, std::initializer_list<std::string_view> allowed, std::string_view text,
                       const std::string& source);

template <typename T>
T required(const Json& obj, const char* key, std::string_view text, const std::string& source)
{
    if (!obj.contains(key))
        fail(text, source, "", std::string("missing required key '") + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const Json::exception&) {
        fail(text, source, key, std::string("key '") + key + "' has the wrong type");
    }
}

template <typename T>
T optional(const Json& obj, const char* key, T fallback, std::string_view text, const std::string& source)
{
    if (!obj.contains(key))
        return fallback;
    return required<T>(obj, key, text, source);
}

} // namespace config
} // namespace onionpos
