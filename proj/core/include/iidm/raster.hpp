#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace iidm {

enum class RasterDtype : std::uint8_t { F32 = 0, U8 = 1, U32 = 2 };

/// H x W x C grid of scalars, row-major and band-interleaved by pixel, with an
/// optional per-pixel nodata mask. Exactly one of the typed buffers is active,
/// selected by dtype.
struct Raster {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 1;
    RasterDtype dtype = RasterDtype::F32;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;
    std::vector<std::uint32_t> u32;
    std::optional<std::vector<std::uint8_t>> nodata_mask; // height*width entries

    static Raster make_f32(std::uint32_t h, std::uint32_t w, std::uint32_t c, float fill = 0.f);
    static Raster make_u8(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint8_t fill = 0);
    static Raster make_u32(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint32_t fill = 0);

    std::size_t pixel_count() const { return std::size_t(height) * width; }
    std::size_t value_count() const { return pixel_count() * channels; }
    std::size_t index(std::uint32_t y, std::uint32_t x, std::uint32_t c = 0) const {
        return (std::size_t(y) * width + x) * channels + c;
    }

    float& at(std::uint32_t y, std::uint32_t x, std::uint32_t c = 0) { return f32[index(y, x, c)]; }
    float at(std::uint32_t y, std::uint32_t x, std::uint32_t c = 0) const { return f32[index(y, x, c)]; }
    std::uint8_t& u8_at(std::uint32_t y, std::uint32_t x, std::uint32_t c = 0) { return u8[index(y, x, c)]; }
    std::uint8_t u8_at(std::uint32_t y, std::uint32_t x, std::uint32_t c = 0) const { return u8[index(y, x, c)]; }
    std::uint32_t& u32_at(std::uint32_t y, std::uint32_t x, std::uint32_t c = 0) { return u32[index(y, x, c)]; }
    std::uint32_t u32_at(std::uint32_t y, std::uint32_t x, std::uint32_t c = 0) const { return u32[index(y, x, c)]; }

    /// Structural validity: active buffer sized height*width*channels, mask
    /// sized height*width when present. Throws std::invalid_argument.
    void validate() const;
};

/// Thrown on malformed RAS1 payloads; message carries the byte offset.
struct RasterFormatError : std::runtime_error {
    explicit RasterFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// RAS1 container: "RAS1" magic, LE u32 height/width/channels, u8 dtype code
// (0=f32 LE, 1=u8, 2=u32 LE), u8 has_mask, row-major band-interleaved payload,
// then height*width mask bytes when has_mask is set.
void write_raster(const Raster& r, std::ostream& os);
void write_raster(const Raster& r, const std::string& path);
Raster read_raster(std::istream& is);
Raster read_raster(const std::string& path);

/// Thresholds a single-channel raster into a {0,255} u8 mask; pixels >=
/// threshold map to 255. Multi-channel input is a contract error.
Raster binarize_mask(const Raster& r, float threshold);

/// True when the raster is a u8 mask containing only {0,255}.
bool is_binary_mask(const Raster& r);

} // namespace iidm
