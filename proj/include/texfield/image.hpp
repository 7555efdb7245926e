#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "texfield/binio.hpp"

namespace texfield {

// 8-bit RGB raster, row-major with the top row first.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 bytes per pixel

    bool empty() const { return width == 0 || height == 0; }

    const std::uint8_t* texel(int row, int col) const {
        return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
    }
    std::uint8_t* texel(int row, int col) {
        return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
    }

    // Nearest-texel lookup. u grows rightward, v grows upward (v=0 is the
    // bottom row), both clamped to [0,1]. Returns channels in [0,1].
    std::array<double, 3> sample_nearest(double u, double v) const {
        u = std::clamp(u, 0.0, 1.0);
        v = std::clamp(v, 0.0, 1.0);
        const int col = static_cast<int>(std::lround(u * (width - 1)));
        const int row = (height - 1) - static_cast<int>(std::lround(v * (height - 1)));
        const std::uint8_t* t = texel(row, col);
        return {t[0] / 255.0, t[1] / 255.0, t[2] / 255.0};
    }
};

namespace detail {

inline int ppm_next_int(std::istream& is, const std::string& path) {
    // header tokens are separated by whitespace; '#' starts a comment to EOL
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            c = is.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) throw std::runtime_error(path + ": malformed header");
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > 1000000) throw std::runtime_error(path + ": header value out of range");
        c = is.get();
    }
    if (c != EOF) is.unget();
    return static_cast<int>(v);
}

}  // namespace detail

inline Image load_ppm(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    char m0 = 0, m1 = 0;
    is.get(m0); is.get(m1);
    if (m0 != 'P' || m1 != '6') throw std::runtime_error(path + ": not a P6 ppm file");
    Image img;
    img.width = detail::ppm_next_int(is, path);
    img.height = detail::ppm_next_int(is, path);
    const int maxval = detail::ppm_next_int(is, path);
    if (img.width <= 0 || img.height <= 0 || maxval != 255)
        throw std::runtime_error(path + ": unsupported ppm dimensions or depth");
    is.get();  // single whitespace byte after maxval
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw std::runtime_error(path + ": truncated pixel data");
    return img;
}

inline void save_ppm(const std::string& path, const Image& img) {
    std::ofstream os = binio::open_out(path);
    os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw std::runtime_error(path + ": write failed");
}

namespace detail {

inline std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

// Reads an 8-bit truecolor png (color type 2 or 6, no interlacing); an alpha
// channel is dropped. Covers what texture atlases in the wild actually use
// without pulling in a full decoder.
inline Image load_png(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
        throw std::runtime_error(path + ": not a png file");

    std::uint32_t width = 0, height = 0;
    int channels = 0;
    std::vector<std::uint8_t> idat;
    bool saw_end = false;

    std::size_t off = 8;
    while (off + 8 <= file.size()) {
        const std::uint32_t len = detail::be32(&file[off]);
        const char* type = reinterpret_cast<const char*>(&file[off + 4]);
        if (off + 12 + static_cast<std::size_t>(len) > file.size())
            throw std::runtime_error(path + ": truncated chunk");
        const std::uint8_t* data = &file[off + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error(path + ": bad IHDR");
            width = detail::be32(data);
            height = detail::be32(data + 4);
            const int bit_depth = data[8], color_type = data[9];
            const int compression = data[10], filter = data[11], interlace = data[12];
            if (bit_depth != 8)
                throw std::runtime_error(path + ": only 8-bit pngs are supported");
            if (color_type == 2) channels = 3;
            else if (color_type == 6) channels = 4;
            else throw std::runtime_error(path + ": only truecolor pngs are supported (color type " +
                                          std::to_string(color_type) + ")");
            if (compression != 0 || filter != 0)
                throw std::runtime_error(path + ": unsupported compression or filter method");
            if (interlace != 0)
                throw std::runtime_error(path + ": interlaced pngs are not supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
            break;
        }
        off += 12 + len;
    }
    if (!channels || !saw_end || width == 0 || height == 0)
        throw std::runtime_error(path + ": missing IHDR or IEND");

    const std::size_t rowbytes = static_cast<std::size_t>(width) * channels;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (rowbytes + 1));
    {
        z_stream zs{};
        if (inflateInit(&zs) != Z_OK) throw std::runtime_error("zlib init failed");
        zs.next_in = idat.data();
        zs.avail_in = static_cast<uInt>(idat.size());
        zs.next_out = raw.data();
        zs.avail_out = static_cast<uInt>(raw.size());
        const int rc = inflate(&zs, Z_FINISH);
        inflateEnd(&zs);
        if (rc != Z_STREAM_END || zs.total_out != raw.size())
            throw std::runtime_error(path + ": png image data is corrupt");
    }

    Image img;
    img.width = static_cast<int>(width);
    img.height = static_cast<int>(height);
    img.pixels.resize(static_cast<std::size_t>(width) * height * 3);

    std::vector<std::uint8_t> prev(rowbytes, 0), cur(rowbytes);
    for (std::uint32_t y = 0; y < height; ++y) {
        const std::uint8_t* line = &raw[static_cast<std::size_t>(y) * (rowbytes + 1)];
        const int ft = line[0];
        const std::uint8_t* src = line + 1;
        for (std::size_t x = 0; x < rowbytes; ++x) {
            const int a = x >= static_cast<std::size_t>(channels) ? cur[x - channels] : 0;
            const int b = prev[x];
            const int c = x >= static_cast<std::size_t>(channels) ? prev[x - channels] : 0;
            int v = src[x];
            switch (ft) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw std::runtime_error(path + ": bad scanline filter " + std::to_string(ft));
            }
            cur[x] = static_cast<std::uint8_t>(v & 0xff);
        }
        std::uint8_t* dst = img.texel(static_cast<int>(y), 0);
        for (std::uint32_t x = 0; x < width; ++x)
            std::memcpy(dst + x * 3, cur.data() + static_cast<std::size_t>(x) * channels, 3);
        std::swap(prev, cur);
    }
    return img;
}

// Dispatches on content, not extension: png signature or ppm magic.
inline Image load_image(const std::string& path) {
    std::ifstream is = binio::open_in(path);
    char head[2] = {0, 0};
    is.read(head, 2);
    is.close();
    if (head[0] == 'P' && head[1] == '6') return load_ppm(path);
    if (static_cast<std::uint8_t>(head[0]) == 137 && head[1] == 'P') return load_png(path);
    throw std::runtime_error(path + ": unrecognized image format (png and binary ppm are supported)");
}

}  // namespace texfield
