#include "onionpos/address.hpp"
#include "onionpos/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace onionpos {

Address Address::parse(std::string_view text)
{
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos)
        throw std::invalid_argument("address '" + std::string(text) + "' lacks ':port'");
    Address a;
    auto host = text.substr(0, colon);
    auto portText = text.substr(colon + 1);
    unsigned port = 0;
    auto [pp, pe] = std::from_chars(portText.data(), portText.data() + portText.size(), port);
    if (pe != std::errc{} || pp != portText.data() + portText.size() || port > 65535)
        throw std::invalid_argument("bad port in address '" + std::string(text) + "'");
    a.port = static_cast<std::uint16_t>(port);
    std::size_t start = 0;
    for (int i = 0; i < 4; ++i) {
        auto dot = host.find('.', start);
        if ((i < 3) != (dot != std::string_view::npos))
            throw std::invalid_argument("bad IPv4 host in address '" + std::string(text) + "'");
        auto part = host.substr(start, i < 3 ? dot - start : std::string_view::npos);
        unsigned v = 0;
        auto [p, e] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (e != std::errc{} || p != part.data() + part.size() || part.empty() || v > 255)
            throw std::invalid_argument("bad IPv4 host in address '" + std::string(text) + "'");
        a.ip[i] = static_cast<std::uint8_t>(v);
        start = dot + 1;
    }
    return a;
}

std::string Address::toString() const
{
    return std::to_string(ip[0]) + "." + std::to_string(ip[1]) + "." + std::to_string(ip[2]) + "." +
           std::to_string(ip[3]) + ":" + std::to_string(port);
}

namespace config {

Json parse(std::string_view text, const std::string& source)
{
    try {
        return Json::parse(text.begin(), text.end());
    } catch (const Json::parse_error& e) {
        // Convert the byte offset into line:col.
        std::size_t offset = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
        int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + offset, '\n'));
        auto lastNl = text.rfind('\n', offset == 0 ? 0 : offset - 1);
        std::size_t col = lastNl == std::string_view::npos ? offset + 1 : offset - lastNl;
        throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON syntax error");
    }
}

std::string readFile(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError(path + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int lineOfKey(std::string_view text, std::string_view key)
{
    std::string needle = "\"" + std::string(key) + "\"";
    auto pos = text.find(needle);
    if (pos == std::string_view::npos)
        return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + pos, '\n'));
}

void fail(std::string_view text, const std::string& source, std::string_view key, const std::string& message)
{
    int line = key.empty() ? 0 : lineOfKey(text, key);
    if (line > 0)
        throw ConfigError(source + ":" + std::to_string(line) + ": " + message);
    throw ConfigError(source + ": " + message);
}

void rejectUnknownKeys(const Json& obj, std::initializer_list<std::string_view> allowed, std::string_view text,
                       const std::string& source)
{
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            fail(text, source, it.key(), "unknown key '" + it.key() + "'");
    }
}

} // namespace config
} // namespace onionpos
