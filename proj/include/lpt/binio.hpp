#pragma once

#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

// little-endian binary stream helpers shared by dataset and checkpoint files

namespace lpt::binio {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("binio: unexpected end of file");
    return v;
}

inline void write_u32(std::ostream& os, std::uint32_t v) { write_pod(os, v); }
inline std::uint32_t read_u32(std::istream& is) { return read_pod<std::uint32_t>(is); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_pod(os, v); }
inline std::uint64_t read_u64(std::istream& is) { return read_pod<std::uint64_t>(is); }
inline void write_f64(std::ostream& os, double v) { write_pod(os, v); }
inline double read_f64(std::istream& is) { return read_pod<double>(is); }

template <typename T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_vec(std::istream& is) {
    std::vector<T> v(read_u64(is));
    is.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
    if (!is) throw std::runtime_error("binio: unexpected end of file");
    return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_str(std::istream& is) {
    std::string s(read_u64(is), '\0');
    is.read(s.data(), std::streamsize(s.size()));
    if (!is) throw std::runtime_error("binio: unexpected end of file");
    return s;
}

inline void write_magic(std::ostream& os, const char m[5]) { os.write(m, 4); }

inline void expect_magic(std::istream& is, const char m[5], const std::string& what) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::string(buf, 4) != std::string(m, 4))
        throw std::runtime_error(what + ": bad magic, not a valid file");
}

}  // namespace lpt::binio
