#include "sparse_wsi/imaging.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "sparse_wsi/io.hpp"

namespace sparse_wsi {

namespace {

using u128 = unsigned __int128;

// Index into the half-sample symmetric extension of [0,n): ... 1 0 | 0 1 .. n-1 | n-1 n-2 ...
int reflect(int i, int n) {
    const int period = 2 * n;
    int m = i % period;
    if (m < 0) {
        m += period;
    }
    return m < n ? m : period - 1 - m;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-static_cast<double>(i) * i / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        total += w;
    }
    for (auto& w : k) {
        w /= total;
    }
    return k;
}

// sign(a/b - c/d) without overflow; b, d > 0.
int compare_fraction(u128 a, u128 b, u128 c, u128 d) {
    for (;;) {
        const u128 qa = a / b;
        const u128 qc = c / d;
        if (qa != qc) {
            return qa < qc ? -1 : 1;
        }
        const u128 ra = a % b;
        const u128 rc = c % d;
        if (ra == 0 || rc == 0) {
            if (ra == rc) {
                return 0;
            }
            return ra == 0 ? -1 : 1;
        }
        // sign(ra/b - rc/d) == sign(d/rc - b/ra)
        const u128 na = d, nb = rc, nc = b, nd = ra;
        a = na;
        b = nb;
        c = nc;
        d = nd;
    }
}

std::uint8_t round_to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

}  // namespace

Rect Rect::clipped(std::int64_t w, std::int64_t h) const {
    Rect r{std::clamp<std::int64_t>(x0, 0, w), std::clamp<std::int64_t>(y0, 0, h),
           std::clamp<std::int64_t>(x1, 0, w), std::clamp<std::int64_t>(y1, 0, h)};
    if (r.x1 < r.x0) r.x1 = r.x0;
    if (r.y1 < r.y0) r.y1 = r.y0;
    return r;
}

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
    if (width < 1 || height < 1) {
        throw Error("GrayImage dimensions must be positive");
    }
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width < 1 || height < 1) {
        throw Error("GrayImage dimensions must be positive");
    }
    if (pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw Error("GrayImage pixel count does not match dimensions");
    }
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
    if (width < 0 || height < 0) {
        throw Error("BinaryMask dimensions must be non-negative");
    }
    bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill ? 1 : 0);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
    if (width < 0 || height < 0) {
        throw Error("BinaryMask dimensions must be non-negative");
    }
    if (bits_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw Error("BinaryMask bit count does not match dimensions");
    }
    for (auto& b : bits_) {
        b = b != 0 ? 1 : 0;
    }
}

std::uint64_t BinaryMask::count() const {
    return static_cast<std::uint64_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

IntegralImage::IntegralImage(int width, int height, std::vector<std::uint64_t> table)
    : width_(width), height_(height), table_(std::move(table)) {
    if (table_.size() != (static_cast<std::size_t>(width) + 1) * (static_cast<std::size_t>(height) + 1)) {
        throw Error("IntegralImage table size does not match dimensions");
    }
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    if (!(sigma >= 0.0)) {
        throw Error("gaussian_blur: sigma must be non-negative");
    }
    if (sigma == 0.0) {
        return img;
    }
    const auto kernel = gaussian_kernel(sigma);
    const int radius = static_cast<int>(kernel.size() / 2);
    const int w = img.width();
    const int h = img.height();

    std::vector<double> horizontal(img.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[static_cast<std::size_t>(i + radius)] * img(reflect(x + i, w), y);
            }
            horizontal[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }

    GrayImage out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       horizontal[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
            }
            out(x, y) = round_to_byte(acc);
        }
    }
    return out;
}

int otsu_threshold(const GrayImage& img) {
    const std::uint64_t n = img.size();
    // Keeps the squared class-mean separation below 2^128.
    if (n >= (std::uint64_t{1} << 28)) {
        throw Error("otsu_threshold: image too large");
    }
    std::array<std::uint64_t, 256> hist{};
    for (auto p : img.pixels()) {
        ++hist[p];
    }
    std::uint64_t total_sum = 0;
    for (std::uint64_t i = 0; i < 256; ++i) {
        total_sum += i * hist[i];
    }

    // Between-class variance is proportional to (s0*n - S*w0)^2 / (w0*w1).
    u128 best_num = 0;
    u128 best_den = 1;
    int best_t = -1;
    std::uint64_t w0 = 0;
    std::uint64_t s0 = 0;
    for (int t = 0; t < 256; ++t) {
        w0 += hist[static_cast<std::size_t>(t)];
        s0 += static_cast<std::uint64_t>(t) * hist[static_cast<std::size_t>(t)];
        const std::uint64_t w1 = n - w0;
        if (w0 == 0 || w1 == 0) {
            continue;
        }
        const u128 lhs = static_cast<u128>(s0) * n;
        const u128 rhs = static_cast<u128>(total_sum) * w0;
        const u128 d = lhs > rhs ? lhs - rhs : rhs - lhs;
        const u128 num = d * d;
        const u128 den = static_cast<u128>(w0) * w1;
        if (compare_fraction(num, den, best_num, best_den) > 0) {
            best_num = num;
            best_den = den;
            best_t = t;
        }
    }
    if (best_t < 0) {
        // Constant image.
        return static_cast<int>(img.pixels().front());
    }
    return best_t;
}

BinaryMask binarize(const GrayImage& img, int threshold) {
    std::vector<std::uint8_t> bits(img.size());
    std::transform(img.pixels().begin(), img.pixels().end(), bits.begin(),
                   [threshold](std::uint8_t p) { return static_cast<std::uint8_t>(p > threshold ? 1 : 0); });
    return BinaryMask(img.width(), img.height(), std::move(bits));
}

GrayImage invert(const GrayImage& img) {
    std::vector<std::uint8_t> px(img.size());
    std::transform(img.pixels().begin(), img.pixels().end(), px.begin(),
                   [](std::uint8_t p) { return static_cast<std::uint8_t>(255 - p); });
    return GrayImage(img.width(), img.height(), std::move(px));
}

GrayImage downsample(const GrayImage& img, int factor) {
    if (factor < 1) {
        throw Error("downsample: factor must be >= 1");
    }
    if (factor == 1) {
        return img;
    }
    const int ow = (img.width() + factor - 1) / factor;
    const int oh = (img.height() + factor - 1) / factor;
    GrayImage out(ow, oh);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const int x_end = std::min(img.width(), (ox + 1) * factor);
            const int y_end = std::min(img.height(), (oy + 1) * factor);
            std::uint64_t sum = 0;
            std::uint64_t count = 0;
            for (int y = oy * factor; y < y_end; ++y) {
                for (int x = ox * factor; x < x_end; ++x) {
                    sum += img(x, y);
                    ++count;
                }
            }
            out(ox, oy) = static_cast<std::uint8_t>((2 * sum + count) / (2 * count));
        }
    }
    return out;
}

IntegralImage build_integral(const BinaryMask& mask) {
    const auto w = static_cast<std::size_t>(mask.width());
    const auto h = static_cast<std::size_t>(mask.height());
    const std::size_t stride = w + 1;
    std::vector<std::uint64_t> table(stride * (h + 1), 0);
    const auto& bits = mask.bits();
    for (std::size_t y = 0; y < h; ++y) {
        std::uint64_t row = 0;
        for (std::size_t x = 0; x < w; ++x) {
            row += bits[y * w + x];
            table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
        }
    }
    return IntegralImage(mask.width(), mask.height(), std::move(table));
}

std::uint64_t query_region_sum(const IntegralImage& ii, const Rect& rect) {
    const Rect r = rect.clipped(ii.width(), ii.height());
    if (r.empty()) {
        return 0;
    }
    const int x0 = static_cast<int>(r.x0), x1 = static_cast<int>(r.x1);
    const int y0 = static_cast<int>(r.y0), y1 = static_cast<int>(r.y1);
    return ii.at(x1, y1) - ii.at(x1, y0) - ii.at(x0, y1) + ii.at(x0, y0);
}

std::vector<Component> connected_components(const BinaryMask& mask) {
    const int w = mask.width();
    const int h = mask.height();
    std::vector<int> labels(mask.size(), 0);
    std::vector<Component> out;
    std::vector<std::pair<int, int>> stack;

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto seed = static_cast<std::size_t>(y) * w + x;
            if (!mask(x, y) || labels[seed] != 0) {
                continue;
            }
            Component c;
            c.id = static_cast<int>(out.size()) + 1;
            c.bounding_box = Rect{x, y, x + 1, y + 1};
            labels[seed] = c.id;
            stack.assign(1, {x, y});
            while (!stack.empty()) {
                const auto [cx, cy] = stack.back();
                stack.pop_back();
                ++c.area;
                c.bounding_box.x0 = std::min<std::int64_t>(c.bounding_box.x0, cx);
                c.bounding_box.y0 = std::min<std::int64_t>(c.bounding_box.y0, cy);
                c.bounding_box.x1 = std::max<std::int64_t>(c.bounding_box.x1, cx + 1);
                c.bounding_box.y1 = std::max<std::int64_t>(c.bounding_box.y1, cy + 1);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx;
                        const int ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) {
                            continue;
                        }
                        const auto ni = static_cast<std::size_t>(ny) * w + nx;
                        if (mask(nx, ny) && labels[ni] == 0) {
                            labels[ni] = c.id;
                            stack.emplace_back(nx, ny);
                        }
                    }
                }
            }
            out.push_back(c);
        }
    }
    return out;
}

GrayImage decode_pgm(const std::string& bytes) {
    std::size_t pos = 0;
    auto next_token = [&]() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            }
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
            ++pos;
        }
        if (start == pos) {
            throw Error("PGM: truncated header");
        }
        return bytes.substr(start, pos - start);
    };
    if (next_token() != "P5") {
        throw Error("PGM: expected binary P5 format");
    }
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::logic_error&) {
        throw Error("PGM: malformed header");
    }
    if (maxval < 1 || maxval > 255) {
        throw Error("PGM: only 8-bit maxval is supported");
    }
    ++pos;  // single whitespace before raster
    const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (w < 1 || h < 1 || bytes.size() < pos + n) {
        throw Error("PGM: truncated raster");
    }
    std::vector<std::uint8_t> px(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return GrayImage(w, h, std::move(px));
}

std::string encode_pgm(const GrayImage& img) {
    std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    out.append(img.pixels().begin(), img.pixels().end());
    return out;
}

GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
    write_file_atomic(path, encode_pgm(img));
}

BinaryMask read_mask_pgm(const std::filesystem::path& path) {
    const auto img = read_pgm(path);
    return BinaryMask(img.width(), img.height(), img.pixels());
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
    if (mask.width() < 1 || mask.height() < 1) {
        throw Error("write_mask_pgm: empty mask");
    }
    std::vector<std::uint8_t> px(mask.size());
    std::transform(mask.bits().begin(), mask.bits().end(), px.begin(),
                   [](std::uint8_t b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
    write_pgm(path, GrayImage(mask.width(), mask.height(), std::move(px)));
}

}  // namespace sparse_wsi
