#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace texfield {
namespace binio {

// Little-endian scalar I/O on binary streams. The in-memory representation on
// every supported target is already little-endian; memcpy keeps it aliasing-safe.

template <typename T>
void write_scalar(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(buf, sizeof(T));
}

template <typename T>
T read_scalar(std::istream& is, const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    is.read(buf, sizeof(T));
    if (!is) throw std::runtime_error(std::string("truncated file while reading ") + what);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

template <typename T>
void write_array(std::ostream& os, const T* data, std::size_t n) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
}

template <typename T>
void read_array(std::istream& is, T* data, std::size_t n, const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is) throw std::runtime_error(std::string("truncated file while reading ") + what);
}

inline void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char magic[4], const std::string& path) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0)
        throw std::runtime_error(path + ": bad magic, expected '" + std::string(magic, 4) + "'");
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_scalar<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
    const auto n = read_scalar<std::uint32_t>(is, what);
    std::string s(n, '\0');
    if (n) {
        is.read(s.data(), n);
        if (!is) throw std::runtime_error(std::string("truncated file while reading ") + what);
    }
    return s;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return is;
}

// Writes through a sibling temp file and renames into place, so readers never
// observe a half-written file.
template <typename Fn>
void atomic_write(const std::string& path, Fn&& fill) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os = open_out(tmp);
        fill(os);
        os.flush();
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace binio
}  // namespace texfield
