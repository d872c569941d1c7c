#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gifdl {

// 8-bit grayscale image, row-major. The cover/stego/fluctuation carrier.
struct ImageGray {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    ImageGray() = default;
    ImageGray(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int i, int j) { return pixels[static_cast<std::size_t>(i) * width + j]; }
    std::uint8_t at(int i, int j) const { return pixels[static_cast<std::size_t>(i) * width + j]; }

    std::size_t size() const { return pixels.size(); }
    bool same_shape(const ImageGray& o) const { return height == o.height && width == o.width; }

    bool operator==(const ImageGray& o) const {
        return height == o.height && width == o.width && pixels == o.pixels;
    }
};

// Mean squared error over all pixels; shapes must match.
double mse(const ImageGray& a, const ImageGray& b);

// Reads PGM (P5/P2, maxval 255). PPM (P6/P3) is converted to grayscale with
// the BT.601 luma weights at ingest. Throws ParseError naming the offending
// header field or payload defect.
ImageGray load_image(const std::filesystem::path& path);

// Parses the same formats from an in-memory buffer (backend responses).
ImageGray decode_image(const std::string& bytes, const std::string& origin);

// Writes binary PGM (P5, maxval 255). load_image(save_image(img)) == img.
void save_image(const ImageGray& img, const std::filesystem::path& path);

std::string encode_pgm(const ImageGray& img);

}  // namespace gifdl
