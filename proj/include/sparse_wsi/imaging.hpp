#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparse_wsi {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct Rect {
    std::int64_t x0 = 0;
    std::int64_t y0 = 0;
    std::int64_t x1 = 0;
    std::int64_t y1 = 0;

    std::int64_t width() const { return x1 > x0 ? x1 - x0 : 0; }
    std::int64_t height() const { return y1 > y0 ? y1 - y0 : 0; }
    std::int64_t area() const { return width() * height(); }
    bool empty() const { return width() == 0 || height() == 0; }

    Rect clipped(std::int64_t w, std::int64_t h) const;

    friend bool operator==(const Rect&, const Rect&) = default;
};

/// 8-bit grayscale raster, row-major, top-left origin.
class GrayImage {
public:
    GrayImage(int width, int height, std::uint8_t fill = 0);
    GrayImage(int width, int height, std::vector<std::uint8_t> pixels);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return pixels_.size(); }

    std::uint8_t operator()(int x, int y) const { return pixels_[index(x, y)]; }
    std::uint8_t& operator()(int x, int y) { return pixels_[index(x, y)]; }

    const std::vector<std::uint8_t>& pixels() const { return pixels_; }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_;
    int height_;
    std::vector<std::uint8_t> pixels_;
};

/// Row-major {0,1} raster.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height, bool fill = false);
    BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return bits_.size(); }

    bool operator()(int x, int y) const { return bits_[index(x, y)] != 0; }
    void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }

    const std::vector<std::uint8_t>& bits() const { return bits_; }
    std::uint64_t count() const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Summed area table with a zero guard row and column: (width+1) x (height+1) entries.
class IntegralImage {
public:
    IntegralImage() = default;
    IntegralImage(int width, int height, std::vector<std::uint64_t> table);

    int width() const { return width_; }
    int height() const { return height_; }

    /// Sum over [0,x) x [0,y).
    std::uint64_t at(int x, int y) const {
        return table_[static_cast<std::size_t>(y) * (static_cast<std::size_t>(width_) + 1) +
                      static_cast<std::size_t>(x)];
    }

    const std::vector<std::uint64_t>& table() const { return table_; }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint64_t> table_{0};
};

struct Component {
    int id = 0;
    std::int64_t area = 0;
    Rect bounding_box;
};

/// Separable Gaussian, radius ceil(3*sigma), half-sample symmetric reflection at borders.
/// Both passes run in double precision; the result is rounded once.
GrayImage gaussian_blur(const GrayImage& img, double sigma);

/// Otsu's threshold over the 256-bin histogram; class 0 is pixels <= t.
/// Ties resolve to the smallest t. A constant image returns its intensity.
int otsu_threshold(const GrayImage& img);

BinaryMask binarize(const GrayImage& img, int threshold);
GrayImage invert(const GrayImage& img);

/// Box-filter area average; edge blocks average over the pixels they actually cover.
GrayImage downsample(const GrayImage& img, int factor);

IntegralImage build_integral(const BinaryMask& mask);

/// Number of set bits in `rect` after clipping to the image. Constant time.
std::uint64_t query_region_sum(const IntegralImage& ii, const Rect& rect);

/// 8-connected components, ids 1.. in raster-scan discovery order.
std::vector<Component> connected_components(const BinaryMask& mask);

// Binary PGM (P5, maxval 255).
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
BinaryMask read_mask_pgm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);

GrayImage decode_pgm(const std::string& bytes);
std::string encode_pgm(const GrayImage& img);

}  // namespace sparse_wsi
