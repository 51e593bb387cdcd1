// Byte-buffer helpers: hex codec, big-endian scalar IO, length-prefixed fields.
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace attbus {

using Bytes = std::vector<uint8_t>;
using BytesView = std::span<const uint8_t>;
using Bytes32 = std::array<uint8_t, 32>;
using Signature = std::array<uint8_t, 64>;

struct CodecError : std::runtime_error {
    explicit CodecError(const std::string& what) : std::runtime_error(what) {}
};

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

inline std::string to_string(BytesView b) {
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

inline std::string to_hex(BytesView b) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(b.size() * 2);
    for (uint8_t v : b) {
        out.push_back(digits[v >> 4]);
        out.push_back(digits[v & 0xf]);
    }
    return out;
}

inline int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

inline Bytes from_hex(std::string_view h) {
    if (h.size() % 2 != 0) throw CodecError("hex string with odd length");
    Bytes out(h.size() / 2);
    for (size_t i = 0; i < out.size(); ++i) {
        int hi = hex_nibble(h[2 * i]), lo = hex_nibble(h[2 * i + 1]);
        if (hi < 0 || lo < 0) throw CodecError("invalid hex digit");
        out[i] = static_cast<uint8_t>(hi << 4 | lo);
    }
    return out;
}

template <size_t N>
std::array<uint8_t, N> from_hex_array(std::string_view h) {
    Bytes b = from_hex(h);
    if (b.size() != N) throw CodecError("hex value has wrong length");
    std::array<uint8_t, N> out;
    std::memcpy(out.data(), b.data(), N);
    return out;
}

inline void append(Bytes& out, BytesView b) {
    out.insert(out.end(), b.begin(), b.end());
}

inline bool equal_bytes(BytesView a, BytesView b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size()) == 0;
}

// Big-endian writer with uniform u16-length-prefixed fields.
class ByteWriter {
public:
    void u8(uint8_t v) { out_.push_back(v); }
    void u16(uint16_t v) {
        out_.push_back(static_cast<uint8_t>(v >> 8));
        out_.push_back(static_cast<uint8_t>(v));
    }
    void u24(uint32_t v) {
        out_.push_back(static_cast<uint8_t>(v >> 16));
        out_.push_back(static_cast<uint8_t>(v >> 8));
        out_.push_back(static_cast<uint8_t>(v));
    }
    void u32(uint32_t v) {
        u16(static_cast<uint16_t>(v >> 16));
        u16(static_cast<uint16_t>(v));
    }
    void u64(uint64_t v) {
        u32(static_cast<uint32_t>(v >> 32));
        u32(static_cast<uint32_t>(v));
    }
    void raw(BytesView b) { append(out_, b); }
    void field(BytesView b) {
        if (b.size() > 0xffff) throw CodecError("field exceeds u16 length prefix");
        u16(static_cast<uint16_t>(b.size()));
        raw(b);
    }
    void field(std::string_view s) {
        field(BytesView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
    }
    const Bytes& bytes() const { return out_; }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class ByteReader {
public:
    explicit ByteReader(BytesView data) : data_(data) {}

    uint8_t u8() { return take(1)[0]; }
    uint16_t u16() {
        auto b = take(2);
        return static_cast<uint16_t>(b[0] << 8 | b[1]);
    }
    uint32_t u24() {
        auto b = take(3);
        return static_cast<uint32_t>(b[0]) << 16 | static_cast<uint32_t>(b[1]) << 8 | b[2];
    }
    uint32_t u32() {
        uint32_t hi = u16();
        return hi << 16 | u16();
    }
    uint64_t u64() {
        uint64_t hi = u32();
        return hi << 32 | u32();
    }
    BytesView take(size_t n) {
        if (remaining() < n) throw CodecError("buffer underrun");
        BytesView out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    Bytes field() {
        size_t n = u16();
        auto v = take(n);
        return Bytes(v.begin(), v.end());
    }
    std::string field_string() {
        Bytes f = field();
        return to_string(f);
    }
    size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return remaining() == 0; }
    void expect_done() const {
        if (!done()) throw CodecError("trailing bytes after message");
    }

private:
    BytesView data_;
    size_t pos_ = 0;
};

}  // namespace attbus
