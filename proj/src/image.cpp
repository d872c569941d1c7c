#include "gifdl/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gifdl/errors.hpp"

namespace gifdl {

namespace {

// Skips whitespace and '#' comments between header tokens.
void skip_separators(const std::string& s, std::size_t& pos) {
    while (pos < s.size()) {
        if (std::isspace(static_cast<unsigned char>(s[pos]))) {
            ++pos;
        } else if (s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
}

int read_header_int(const std::string& s, std::size_t& pos, const std::string& field,
                    const std::string& origin) {
    skip_separators(s, pos);
    if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])))
        throw ParseError(origin + ": missing or non-numeric " + field);
    long v = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
        v = v * 10 + (s[pos] - '0');
        if (v > 1'000'000'000) throw ParseError(origin + ": " + field + " out of range");
        ++pos;
    }
    return static_cast<int>(v);
}

std::uint8_t luma601(int r, int g, int b) {
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    const long v = std::lround(y);
    return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
}

}  // namespace

ImageGray decode_image(const std::string& s, const std::string& origin) {
    if (s.size() < 2 || s[0] != 'P')
        throw ParseError(origin + ": bad magic, expected P2/P3/P5/P6");
    const char kind = s[1];
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
        throw ParseError(origin + ": unsupported magic P" + std::string(1, kind));
    const bool binary = (kind == '5' || kind == '6');
    const bool color = (kind == '3' || kind == '6');

    std::size_t pos = 2;
    const int width = read_header_int(s, pos, "width", origin);
    const int height = read_header_int(s, pos, "height", origin);
    const int maxval = read_header_int(s, pos, "maxval", origin);
    if (width <= 0 || height <= 0)
        throw ParseError(origin + ": non-positive dimensions");
    if (maxval != 255)
        throw ParseError(origin + ": maxval must be 255, got " + std::to_string(maxval));

    ImageGray img(height, width);
    const std::size_t n = img.size();
    const std::size_t samples = n * (color ? 3 : 1);

    if (binary) {
        // Exactly one whitespace byte separates the header from the payload.
        if (pos >= s.size() || !std::isspace(static_cast<unsigned char>(s[pos])))
            throw ParseError(origin + ": missing separator before payload");
        ++pos;
        if (s.size() - pos < samples)
            throw ParseError(origin + ": truncated payload, expected " +
                             std::to_string(samples) + " bytes, got " +
                             std::to_string(s.size() - pos));
        if (color) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto* p = reinterpret_cast<const unsigned char*>(s.data() + pos + 3 * i);
                img.pixels[i] = luma601(p[0], p[1], p[2]);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i)
                img.pixels[i] = static_cast<std::uint8_t>(s[pos + i]);
        }
    } else {
        std::vector<int> vals;
        vals.reserve(samples);
        for (std::size_t i = 0; i < samples; ++i) {
            int v = read_header_int(s, pos, "pixel value", origin);
            if (v > 255) throw ParseError(origin + ": pixel value exceeds maxval");
            vals.push_back(v);
        }
        if (color) {
            for (std::size_t i = 0; i < n; ++i)
                img.pixels[i] = luma601(vals[3 * i], vals[3 * i + 1], vals[3 * i + 2]);
        } else {
            for (std::size_t i = 0; i < n; ++i)
                img.pixels[i] = static_cast<std::uint8_t>(vals[i]);
        }
    }
    return img;
}

double mse(const ImageGray& a, const ImageGray& b) {
    if (!a.same_shape(b))
        throw ShapeError("mse: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
    double acc = 0.0;
    for (std::size_t k = 0; k < a.pixels.size(); ++k) {
        const double d = double(a.pixels[k]) - double(b.pixels[k]);
        acc += d * d;
    }
    return acc / double(a.pixels.size());
}

ImageGray load_image(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image file: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_image(ss.str(), path.string());
}

std::string encode_pgm(const ImageGray& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.size());
    return out;
}

void save_image(const ImageGray& img, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open image file for writing: " + path.string());
    const std::string bytes = encode_pgm(img);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
}

}  // namespace gifdl
