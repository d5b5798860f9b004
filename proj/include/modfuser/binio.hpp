#pragma once

// Little-endian primitives for the on-disk formats. All readers throw
// FormatError on truncation so corrupt files fail loudly.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace modfuser {

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw FormatError("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw FormatError("unexpected end of file");
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }

inline void write_u16(std::ostream& os, std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
    write_bytes(os, b, 2);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    write_bytes(os, b, 8);
}

inline void write_f64(std::ostream& os, double v) {
    write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint8_t read_u8(std::istream& is) {
    std::uint8_t v;
    read_bytes(is, &v, 1);
    return v;
}

inline std::uint16_t read_u16(std::istream& is) {
    std::uint8_t b[2];
    read_bytes(is, b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint8_t b[4];
    read_bytes(is, b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint64_t read_u64(std::istream& is) {
    std::uint8_t b[8];
    read_bytes(is, b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline void write_str(std::ostream& os, const std::string& s) {
    if (s.size() > 0xFFFF) throw FormatError("string too long for format");
    write_u16(os, static_cast<std::uint16_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline std::string read_str(std::istream& is) {
    const std::uint16_t n = read_u16(is);
    std::string s(n, '\0');
    if (n) read_bytes(is, s.data(), n);
    return s;
}

}  // namespace modfuser
