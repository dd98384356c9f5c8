#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "salfx/maps.hpp"
#include "salfx/tensor.hpp"

namespace salfx::io {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

/// Decoded netpbm raster: samples row-major, interleaved channels.
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    unsigned maxval = 255;
    std::vector<std::uint16_t> samples;
};

namespace detail {

class PnmReader {
public:
    PnmReader(const std::vector<unsigned char>& bytes, std::string name)
        : b_(bytes), name_(std::move(name))
    {
    }

    std::string magic()
    {
        if (b_.size() < 2) fail("truncated header");
        pos_ = 2;
        return std::string(b_.begin(), b_.begin() + 2);
    }

    unsigned long number()
    {
        skip_space();
        if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail("malformed header");
        unsigned long v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_++] - '0');
            if (v > 1u << 24) fail("header value too large");
        }
        return v;
    }

    void end_header()
    {
        if (pos_ >= b_.size() || !std::isspace(b_[pos_])) fail("malformed header");
        ++pos_;
    }

    std::size_t remaining() const { return b_.size() - pos_; }
    const unsigned char* here() const { return b_.data() + pos_; }

    [[noreturn]] void fail(const std::string& what) const { throw IoError(name_ + ": " + what); }

private:
    void skip_space()
    {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& b_;
    std::string name_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Binary PGM (P5) or PPM (P6), 8- or 16-bit.
inline Raster decode_pnm(const std::vector<unsigned char>& bytes, const std::string& name = "<memory>")
{
    detail::PnmReader r(bytes, name);
    const std::string magic = r.magic();
    Raster img;
    if (magic == "P5")
        img.channels = 1;
    else if (magic == "P6")
        img.channels = 3;
    else
        r.fail("unsupported netpbm variant '" + magic + "'");
    img.width = r.number();
    img.height = r.number();
    img.maxval = static_cast<unsigned>(r.number());
    r.end_header();
    if (img.width == 0 || img.height == 0) r.fail("empty image");
    if (img.maxval == 0 || img.maxval > 65535) r.fail("maxval out of range");
    const std::size_t bps = img.maxval > 255 ? 2 : 1;
    const std::size_t n = img.width * img.height * img.channels;
    if (r.remaining() < n * bps) r.fail("truncated pixel data");
    img.samples.resize(n);
    const unsigned char* p = r.here();
    for (std::size_t i = 0; i < n; ++i)
        img.samples[i] = bps == 2 ? static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]) : p[i];
    return img;
}

inline std::vector<unsigned char> encode_pnm(const Raster& img)
{
    const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" +
                               std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                               std::to_string(img.maxval) + "\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    const bool wide = img.maxval > 255;
    out.reserve(out.size() + img.samples.size() * (wide ? 2 : 1));
    for (std::uint16_t s : img.samples) {
        if (wide) out.push_back(static_cast<unsigned char>(s >> 8));
        out.push_back(static_cast<unsigned char>(s & 0xff));
    }
    return out;
}

/// RGB image as a [3,H,W] tensor with values in [0,1].
inline Tensor raster_to_tensor(const Raster& img)
{
    Tensor t(Shape{3, img.height, img.width});
    const std::size_t hw = img.width * img.height;
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t src = img.channels == 3 ? i * 3 + c : i;
            t[c * hw + i] = static_cast<double>(img.samples[src]) / img.maxval;
        }
    return t;
}

inline Tensor decode_png(const std::vector<unsigned char>& bytes, const std::string& name)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError(name + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError(name + ": " + msg);
    }
    Raster r{image.width, image.height, 3, 255, std::vector<std::uint16_t>(buf.begin(), buf.end())};
    return raster_to_tensor(r);
}

/// Load a P6 PPM or PNG file as a [3,H,W] tensor in [0,1].
inline Tensor load_image(const std::filesystem::path& path)
{
    const auto bytes = read_bytes(path);
    static constexpr unsigned char kPng[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::equal(kPng, kPng + 8, bytes.begin()))
        return decode_png(bytes, path.string());
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6')
        return raster_to_tensor(decode_pnm(bytes, path.string()));
    throw IoError(path.string() + ": unsupported image format");
}

/// 8-bit P6 from a [3,H,W] tensor; values are clamped to [0,1] and rounded.
inline void save_ppm(const std::filesystem::path& path, const Tensor& rgb)
{
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("save_ppm expects [3,H,W]");
    const std::size_t h = rgb.dim(1), w = rgb.dim(2), hw = h * w;
    Raster r{w, h, 3, 255, std::vector<std::uint16_t>(hw * 3)};
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            r.samples[i * 3 + c] =
                static_cast<std::uint16_t>(std::lround(std::clamp(rgb[c * hw + i], 0.0, 1.0) * 255.0));
    write_bytes(path, encode_pnm(r));
}

/// 16-bit P5 with values clamped to [0,1] and scaled by 65535.
inline void save_pgm16(const std::filesystem::path& path, const SaliencyMap& m)
{
    Raster r{m.width(), m.height(), 1, 65535, std::vector<std::uint16_t>(m.size())};
    for (std::size_t i = 0; i < m.size(); ++i)
        r.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(m[i], 0.0, 1.0) * 65535.0));
    write_bytes(path, encode_pnm(r));
}

/// Any P5 file as a map in [0,1] (samples divided by maxval).
inline SaliencyMap load_pgm(const std::filesystem::path& path)
{
    const Raster r = decode_pnm(read_bytes(path), path.string());
    if (r.channels != 1) throw IoError(path.string() + ": expected a grayscale PGM");
    SaliencyMap m(r.width, r.height);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(r.samples[i]) / r.maxval;
    return m;
}

/// Export helper: scale by the maximum so the peak maps to 65535.
inline void save_map_pgm16(const std::filesystem::path& path, const SaliencyMap& m)
{
    SaliencyMap scaled = m;
    const double mx = m.empty() ? 0.0 : m.max();
    for (double& v : scaled.values()) v = mx > 0.0 ? std::max(v, 0.0) / mx : 0.0;
    save_pgm16(path, scaled);
}

} // namespace salfx::io
