#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitprune {

/// 8-bit RGB, row-major, interleaved.
struct ImageRGB {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    ImageRGB() = default;
    ImageRGB(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t channel) { return pixels[(y * width + x) * 3 + channel]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t channel) const {
        return pixels[(y * width + x) * 3 + channel];
    }

    friend bool operator==(const ImageRGB&, const ImageRGB&) = default;
};

/// Per-channel input normalization: (value / 255 - mean) / std.
struct Normalization {
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> std{0.229f, 0.224f, 0.225f};

    float apply(std::uint8_t value, std::size_t channel) const {
        return (float(value) / 255.0f - mean[channel]) / std[channel];
    }

    friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Nearest-neighbor resize to a square target.
inline ImageRGB resize_nearest(const ImageRGB& src, std::size_t target) {
    if (src.width == target && src.height == target) return src;
    if (src.width == 0 || src.height == 0) throw std::invalid_argument("resize_nearest: empty image");
    ImageRGB out(target, target);
    for (std::size_t y = 0; y < target; ++y) {
        const std::size_t sy = y * src.height / target;
        for (std::size_t x = 0; x < target; ++x) {
            const std::size_t sx = x * src.width / target;
            for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = src.at(sx, sy, c);
        }
    }
    return out;
}

} // namespace vitprune
