#include "iidm/raster.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace iidm {

namespace {

constexpr char kMagic[4] = {'R', 'A', 'S', '1'};

void put_u32le(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& is, std::size_t offset, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw RasterFormatError(std::string("RAS1: truncated ") + what + " at offset " +
                                std::to_string(offset));
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void put_f32le(std::ostream& os, float v) {
    static_assert(sizeof(float) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(os, bits);
}

} // namespace

Raster Raster::make_f32(std::uint32_t h, std::uint32_t w, std::uint32_t c, float fill) {
    Raster r;
    r.height = h;
    r.width = w;
    r.channels = c;
    r.dtype = RasterDtype::F32;
    r.f32.assign(std::size_t(h) * w * c, fill);
    return r;
}

Raster Raster::make_u8(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint8_t fill) {
    Raster r;
    r.height = h;
    r.width = w;
    r.channels = c;
    r.dtype = RasterDtype::U8;
    r.u8.assign(std::size_t(h) * w * c, fill);
    return r;
}

Raster Raster::make_u32(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint32_t fill) {
    Raster r;
    r.height = h;
    r.width = w;
    r.channels = c;
    r.dtype = RasterDtype::U32;
    r.u32.assign(std::size_t(h) * w * c, fill);
    return r;
}

void Raster::validate() const {
    if (height == 0 || width == 0 || channels == 0)
        throw std::invalid_argument("raster: zero extent");
    const std::size_t n = value_count();
    const std::size_t have = dtype == RasterDtype::F32   ? f32.size()
                             : dtype == RasterDtype::U8  ? u8.size()
                                                         : u32.size();
    if (have != n) throw std::invalid_argument("raster: buffer size does not match extents");
    if (nodata_mask && nodata_mask->size() != pixel_count())
        throw std::invalid_argument("raster: nodata mask size does not match extents");
}

void write_raster(const Raster& r, std::ostream& os) {
    r.validate();
    os.write(kMagic, 4);
    put_u32le(os, r.height);
    put_u32le(os, r.width);
    put_u32le(os, r.channels);
    const std::uint8_t code = static_cast<std::uint8_t>(r.dtype);
    os.put(static_cast<char>(code));
    os.put(r.nodata_mask ? '\x01' : '\x00');
    switch (r.dtype) {
        case RasterDtype::F32:
            for (float v : r.f32) put_f32le(os, v);
            break;
        case RasterDtype::U8:
            os.write(reinterpret_cast<const char*>(r.u8.data()),
                     static_cast<std::streamsize>(r.u8.size()));
            break;
        case RasterDtype::U32:
            for (std::uint32_t v : r.u32) put_u32le(os, v);
            break;
    }
    if (r.nodata_mask)
        os.write(reinterpret_cast<const char*>(r.nodata_mask->data()),
                 static_cast<std::streamsize>(r.nodata_mask->size()));
    if (!os) throw std::runtime_error("RAS1: write failed");
}

void write_raster(const Raster& r, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("RAS1: cannot open for write: " + path);
    write_raster(r, os);
}

Raster read_raster(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw RasterFormatError("RAS1: bad magic at offset 0");
    Raster r;
    r.height = get_u32le(is, 4, "height");
    r.width = get_u32le(is, 8, "width");
    r.channels = get_u32le(is, 12, "channels");
    int code = is.get();
    if (code == EOF) throw RasterFormatError("RAS1: truncated dtype at offset 16");
    int has_mask = is.get();
    if (has_mask == EOF) throw RasterFormatError("RAS1: truncated mask flag at offset 17");
    if (code != 0 && code != 1 && code != 2)
        throw RasterFormatError("RAS1: unknown dtype code " + std::to_string(code) +
                                " at offset 16");
    if (has_mask != 0 && has_mask != 1)
        throw RasterFormatError("RAS1: bad mask flag at offset 17");
    r.dtype = static_cast<RasterDtype>(code);
    if (r.height == 0 || r.width == 0 || r.channels == 0)
        throw RasterFormatError("RAS1: zero extent in header at offset 4");

    const std::size_t n = r.value_count();
    std::size_t offset = 18;
    switch (r.dtype) {
        case RasterDtype::F32: {
            r.f32.resize(n);
            for (std::size_t i = 0; i < n; ++i, offset += 4) {
                const std::uint32_t bits = get_u32le(is, offset, "payload");
                float v;
                std::memcpy(&v, &bits, 4);
                r.f32[i] = v;
            }
            break;
        }
        case RasterDtype::U8: {
            r.u8.resize(n);
            if (!is.read(reinterpret_cast<char*>(r.u8.data()), static_cast<std::streamsize>(n)))
                throw RasterFormatError("RAS1: truncated payload at offset " +
                                        std::to_string(offset));
            offset += n;
            break;
        }
        case RasterDtype::U32: {
            r.u32.resize(n);
            for (std::size_t i = 0; i < n; ++i, offset += 4)
                r.u32[i] = get_u32le(is, offset, "payload");
            break;
        }
    }
    if (has_mask == 1) {
        std::vector<std::uint8_t> mask(r.pixel_count());
        if (!is.read(reinterpret_cast<char*>(mask.data()),
                     static_cast<std::streamsize>(mask.size())))
            throw RasterFormatError("RAS1: truncated mask at offset " + std::to_string(offset));
        r.nodata_mask = std::move(mask);
    }
    return r;
}

Raster read_raster(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("RAS1: cannot open for read: " + path);
    return read_raster(is);
}

Raster binarize_mask(const Raster& r, float threshold) {
    r.validate();
    if (r.channels != 1)
        throw std::invalid_argument("binarize_mask: input must be single-channel");
    Raster out = Raster::make_u8(r.height, r.width, 1);
    for (std::size_t i = 0; i < r.pixel_count(); ++i) {
        float v;
        switch (r.dtype) {
            case RasterDtype::F32: v = r.f32[i]; break;
            case RasterDtype::U8: v = static_cast<float>(r.u8[i]); break;
            case RasterDtype::U32: v = static_cast<float>(r.u32[i]); break;
            default: v = 0.f;
        }
        out.u8[i] = v >= threshold ? 255 : 0;
    }
    return out;
}

bool is_binary_mask(const Raster& r) {
    if (r.dtype != RasterDtype::U8 || r.channels != 1) return false;
    for (auto v : r.u8)
        if (v != 0 && v != 255) return false;
    return true;
}

} // namespace iidm
