#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace onionpos {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Thrown by every canonical decoder on truncated, oversized or non-canonical input.
class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Big-endian append-only encoder used by all wire and hashing formats.
class ByteWriter {
public:
    ByteWriter() = default;
    explicit ByteWriter(std::size_t reserve) { buf_.reserve(reserve); }

    ByteWriter& u8(std::uint8_t v);
    ByteWriter& u16(std::uint16_t v);
    ByteWriter& u32(std::uint32_t v);
    ByteWriter& u64(std::uint64_t v);
    ByteWriter& raw(ByteView data);

    template <std::size_t N>
    ByteWriter& raw(const std::array<std::uint8_t, N>& data)
    {
        return raw(ByteView(data));
    }

    std::size_t size() const { return buf_.size(); }
    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

/// Cursor over a byte view. All reads throw DecodeError when input runs short.
class ByteReader {
public:
    explicit ByteReader(ByteView data) : data_(data) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    ByteView raw(std::size_t n);

    template <std::size_t N>
    std::array<std::uint8_t, N> fixed()
    {
        std::array<std::uint8_t, N> out{};
        auto v = raw(N);
        std::copy(v.begin(), v.end(), out.begin());
        return out;
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }
    void expectEnd() const;

private:
    ByteView data_;
    std::size_t pos_ = 0;
};

std::string toHex(ByteView data);
Bytes fromHex(std::string_view hex);

template <std::size_t N>
std::array<std::uint8_t, N> fixedFromHex(std::string_view hex)
{
    auto b = fromHex(hex);
    if (b.size() != N)
        throw DecodeError("expected " + std::to_string(N) + " hex bytes, got " + std::to_string(b.size()));
    std::array<std::uint8_t, N> out{};
    std::copy(b.begin(), b.end(), out.begin());
    return out;
}

inline ByteView asBytes(std::string_view s)
{
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

Bytes concat(std::initializer_list<ByteView> parts);

} // namespace onionpos
