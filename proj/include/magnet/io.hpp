#pragma once

#include <png.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "magnet/errors.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

/// Raw dense tensor: shape plus f32 payload in row-major order.
struct RawTensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace wire {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

/// ndim, dims, payload; little-endian. Shared by .mgt files and the process protocol.
inline void encode_tensor_body(std::vector<std::uint8_t>& out, const RawTensor& t) {
    out.reserve(out.size() + 4 + 4 * t.dims.size() + 4 * t.data.size());
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (float v : t.data) put_f32(out, v);
}

}  // namespace wire

inline constexpr char kTensorFileMagic[4] = {'M', 'G', 'T', '1'};
inline constexpr std::uint32_t kMaxTensorDims = 8;

inline RawTensor to_raw(const ProbMap& m) {
    return {{static_cast<std::uint32_t>(m.height()), static_cast<std::uint32_t>(m.width()),
             static_cast<std::uint32_t>(m.channels())},
            m.raw()};
}

inline RawTensor to_raw(const ScalarMap& m) {
    return {{static_cast<std::uint32_t>(m.height()), static_cast<std::uint32_t>(m.width())}, m.raw()};
}

inline RawTensor to_raw(const Image& m) {
    return {{static_cast<std::uint32_t>(m.height()), static_cast<std::uint32_t>(m.width()), 3u}, m.raw()};
}

/// Reshapes a raw tensor into a (H, W, C) ProbMap without renormalizing.
inline ProbMap prob_map_from_raw(RawTensor t) {
    if (t.dims.size() != 3) throw DimMismatch("probability tensor must have 3 dims, got " + std::to_string(t.dims.size()));
    return ProbMap(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]),
                   std::move(t.data));
}

inline ScalarMap scalar_map_from_raw(RawTensor t) {
    if (t.dims.size() == 3 && t.dims[2] == 1) t.dims.pop_back();
    if (t.dims.size() != 2) throw DimMismatch("scalar tensor must have 2 dims");
    return ScalarMap(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), 1, std::move(t.data));
}

inline std::vector<std::uint8_t> encode_tensor_file(const RawTensor& t) {
    std::vector<std::uint8_t> out(std::begin(kTensorFileMagic), std::end(kTensorFileMagic));
    wire::encode_tensor_body(out, t);
    return out;
}

inline RawTensor decode_tensor_file(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kTensorFileMagic, 4) != 0) {
        throw IOError("not an MGT1 tensor file");
    }
    const std::uint32_t ndim = wire::get_u32(bytes.data() + 4);
    if (ndim == 0 || ndim > kMaxTensorDims) throw IOError("tensor file has unsupported ndim " + std::to_string(ndim));
    std::size_t pos = 8;
    if (bytes.size() < pos + 4u * ndim) throw IOError("truncated tensor header");
    RawTensor t;
    for (std::uint32_t i = 0; i < ndim; ++i, pos += 4) t.dims.push_back(wire::get_u32(bytes.data() + pos));
    const std::size_t n = t.element_count();
    if (bytes.size() != pos + 4 * n) throw IOError("tensor payload size does not match its dims");
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i, pos += 4) t.data[i] = wire::get_f32(bytes.data() + pos);
    return t;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IOError("write failed for " + path.string());
}

inline void write_tensor(const std::filesystem::path& path, const RawTensor& t) {
    write_file_bytes(path, encode_tensor_file(t));
}

inline RawTensor read_tensor(const std::filesystem::path& path) { return decode_tensor_file(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngPixels {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 or 3
    std::vector<std::uint8_t> data;
};

inline PngPixels read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IOError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IOError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IOError("png_create_info_struct failed");
    }
    PngPixels px;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IOError("failed to decode PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    px.width = static_cast<int>(png_get_image_width(png, info));
    px.height = static_cast<int>(png_get_image_height(png, info));
    px.channels = static_cast<int>(png_get_channels(png, info));
    px.data.resize(static_cast<std::size_t>(px.width) * static_cast<std::size_t>(px.height) *
                   static_cast<std::size_t>(px.channels));
    rows.resize(static_cast<std::size_t>(px.height));
    for (int r = 0; r < px.height; ++r) {
        rows[static_cast<std::size_t>(r)] =
            px.data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(px.width * px.channels);
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return px;
}

inline void write_png(const std::filesystem::path& path, const PngPixels& px) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IOError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IOError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IOError("png_create_info_struct failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(px.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IOError("failed to encode PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(px.width), static_cast<png_uint_32>(px.height), 8,
                 px.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // No timestamps or text chunks: output bytes depend only on pixels.
    png_write_info(png, info);
    for (int r = 0; r < px.height; ++r) {
        rows[static_cast<std::size_t>(r)] = const_cast<png_bytep>(
            px.data.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(px.width * px.channels));
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline Image read_image_png(const std::filesystem::path& path) {
    auto px = detail::read_png(path);
    Image img(px.height, px.width, 0.0f);
    auto out = img.values();
    for (int r = 0; r < px.height; ++r) {
        for (int c = 0; c < px.width; ++c) {
            for (int k = 0; k < 3; ++k) {
                const std::size_t src = (static_cast<std::size_t>(r) * static_cast<std::size_t>(px.width) +
                                         static_cast<std::size_t>(c)) *
                                            static_cast<std::size_t>(px.channels) +
                                        static_cast<std::size_t>(px.channels == 3 ? k : 0);
                out[img.offset(r, c, k)] = static_cast<float>(px.data[src]) / 255.0f;
            }
        }
    }
    return img;
}

inline void write_image_png(const std::filesystem::path& path, const Image& img) {
    detail::PngPixels px{img.height(), img.width(), 3, {}};
    px.data.reserve(img.size());
    for (float v : img.values()) {
        px.data.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    detail::write_png(path, px);
}

/// 8-bit single-channel label PNG; values >= 255 are stored as the ignore index 255.
inline LabelMap read_label_png(const std::filesystem::path& path) {
    auto px = detail::read_png(path);
    if (px.channels != 1) throw IOError("label PNG must be single-channel: " + path.string());
    LabelMap out(px.height, px.width, 0);
    auto dst = out.values();
    for (std::size_t i = 0; i < px.data.size(); ++i) dst[i] = static_cast<std::int32_t>(px.data[i]);
    return out;
}

inline void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
    detail::PngPixels px{labels.height(), labels.width(), 1, {}};
    px.data.reserve(labels.size());
    for (auto v : labels.values()) {
        px.data.push_back(static_cast<std::uint8_t>(v < 0 || v > 255 ? kDefaultIgnoreIndex : v));
    }
    detail::write_png(path, px);
}

}  // namespace magnet
