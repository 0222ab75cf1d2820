#pragma once

#include "onionpos/bytes.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace onionpos {

/// IPv4 address plus port; 6 bytes on the wire.
struct Address {
    std::array<std::uint8_t, 4> ip{};
    std::uint16_t port = 0;

    static constexpr std::size_t kEncodedSize = 6;

    void encodeTo(ByteWriter& w) const { w.raw(ip).u16(port); }
    static Address decodeFrom(ByteReader& r)
    {
        Address a;
        a.ip = r.fixed<4>();
        a.port = r.u16();
        return a;
    }

    /// "a.b.c.d:port"; throws std::invalid_argument on malformed input.
    static Address parse(std::string_view text);
    std::string toString() const;

    auto operator<=>(const Address&) const = default;
};

} // namespace onionpos
