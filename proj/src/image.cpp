#include "dsnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

namespace dsnet {

namespace {

void require_rgb(const Image& image, const char* op) {
    if (image.rank() != 3 || image.shape()[0] != 3) {
        throw DimensionError(std::string(op) + ": expected [3, H, W] image, got " +
                             shape_str(image.shape()));
    }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* field) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > (1u << 24)) throw DecodeError(std::string("PPM ") + field + " too large", start);
            ++pos_;
        }
        if (pos_ == start) throw DecodeError(std::string("PPM header: missing ") + field, start);
        return value;
    }

    std::size_t pos() const { return pos_; }
    void advance() { ++pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DecodeError("cannot open image '" + path + "'", 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Separable filtering along one axis with edge replication.
std::vector<double> filter_axis(std::span<const double> src, std::size_t h, std::size_t w,
                                std::span<const double> taps, bool horizontal) {
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    std::vector<double> out(src.size());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0;
            for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
                std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y);
                std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x);
                if (horizontal) {
                    sx = std::clamp<std::ptrdiff_t>(sx + t, 0, static_cast<std::ptrdiff_t>(w) - 1);
                } else {
                    sy = std::clamp<std::ptrdiff_t>(sy + t, 0, static_cast<std::ptrdiff_t>(h) - 1);
                }
                acc += taps[static_cast<std::size_t>(t + radius)] *
                       src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
            }
            out[y * w + x] = acc;
        }
    }
    return out;
}

} // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw DecodeError("not a binary PPM (expected magic P6)", 0);
    }
    HeaderReader reader(bytes.subspan(2));
    const std::size_t width = reader.number("width");
    const std::size_t height = reader.number("height");
    reader.skip_space_and_comments();
    const std::size_t maxval_offset = reader.pos() + 2;
    const std::size_t maxval = reader.number("maxval");
    if (maxval != 255) {
        throw DecodeError("unsupported PPM maxval " + std::to_string(maxval), maxval_offset);
    }
    if (width == 0 || height == 0) throw DecodeError("PPM has zero extent", 2);
    const std::size_t sep = reader.pos() + 2;
    if (sep >= bytes.size() || !std::isspace(bytes[sep])) {
        throw DecodeError("PPM header not terminated by whitespace", sep);
    }
    const std::size_t payload = sep + 1;
    const std::size_t need = width * height * 3;
    if (bytes.size() - payload < need) {
        throw DecodeError("truncated PPM payload: need " + std::to_string(need) + " bytes, have " +
                              std::to_string(bytes.size() - payload),
                          bytes.size());
    }
    Image img({3, height, width});
    auto out = img.data();
    const std::size_t plane = height * width;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            out[c * plane + i] = static_cast<double>(bytes[payload + i * 3 + c]) / 255.0;
        }
    }
    return img;
}

Image decode_image(const std::string& path) {
    const auto bytes = read_file(path);
    return decode_ppm(bytes);
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
    require_rgb(image, "encode_ppm");
    const std::size_t h = image.shape()[1], w = image.shape()[2], plane = h * w;
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(header.size() + plane * 3);
    const auto v = image.data();
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            bytes.push_back(static_cast<std::uint8_t>(std::lround(clamp01(v[c * plane + i]) * 255.0)));
        }
    }
    return bytes;
}

void write_ppm(const std::string& path, const Image& image) {
    const auto bytes = encode_ppm(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_pgm(const std::string& path, std::span<const double> plane, std::size_t height,
               std::size_t width) {
    if (plane.size() != height * width) throw DimensionError("write_pgm: plane size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write '" + path + "'");
    out << "P5\n" << width << " " << height << "\n255\n";
    for (double v : plane) out.put(static_cast<char>(std::lround(clamp01(v) * 255.0)));
}

Image resize_bilinear(const Image& image, std::size_t side) {
    require_rgb(image, "resize_bilinear");
    if (side < 1) throw ArgumentError("resize_bilinear: side must be >= 1");
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    if (h < 2 || w < 2) throw ArgumentError("resize_bilinear: source must be at least 2x2");

    struct Tap {
        std::size_t i0, i1;
        double frac;
    };
    auto taps = [side](std::size_t in) {
        std::vector<Tap> t(side);
        const double ratio = static_cast<double>(in) / static_cast<double>(side);
        for (std::size_t o = 0; o < side; ++o) {
            double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(src));
            t[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(h);
    const auto tx = taps(w);
    Image out({3, side, side});
    auto dst = out.data();
    const auto src = image.data();
    for (std::size_t c = 0; c < 3; ++c) {
        const double* p = src.data() + c * h * w;
        for (std::size_t y = 0; y < side; ++y) {
            const auto& a = ty[y];
            for (std::size_t x = 0; x < side; ++x) {
                const auto& b = tx[x];
                const double top = p[a.i0 * w + b.i0] * (1 - b.frac) + p[a.i0 * w + b.i1] * b.frac;
                const double bot = p[a.i1 * w + b.i0] * (1 - b.frac) + p[a.i1 * w + b.i1] * b.frac;
                dst[(c * side + y) * side + x] = clamp01(top * (1 - a.frac) + bot * a.frac);
            }
        }
    }
    return out;
}

Image enhance(const Image& image, EnhanceKind kind, double factor) {
    require_rgb(image, "enhance");
    if (!(factor >= 0)) throw ArgumentError("enhance: factor must be non-negative");
    const std::size_t h = image.shape()[1], w = image.shape()[2], plane = h * w;
    const auto src = image.data();
    std::vector<double> degenerate(src.size(), 0.0);
    auto luma = [&](std::size_t i) {
        return 0.299 * src[i] + 0.587 * src[plane + i] + 0.114 * src[2 * plane + i];
    };
    switch (kind) {
    case EnhanceKind::chromaticity:
        for (std::size_t i = 0; i < plane; ++i) {
            const double l = luma(i);
            for (std::size_t c = 0; c < 3; ++c) degenerate[c * plane + i] = l;
        }
        break;
    case EnhanceKind::brightness:
        break;
    case EnhanceKind::contrast: {
        double total = 0;
        for (std::size_t i = 0; i < plane; ++i) total += luma(i);
        std::fill(degenerate.begin(), degenerate.end(), total / static_cast<double>(plane));
        break;
    }
    case EnhanceKind::sharpness: {
        std::copy(src.begin(), src.end(), degenerate.begin());
        // 3x3 smoothing [[1,1,1],[1,5,1],[1,1,1]] / 13, border row/column left as is.
        for (std::size_t c = 0; c < 3; ++c) {
            const double* p = src.data() + c * plane;
            for (std::size_t y = 1; y + 1 < h; ++y) {
                for (std::size_t x = 1; x + 1 < w; ++x) {
                    double acc = 0;
                    for (std::size_t dy = 0; dy < 3; ++dy) {
                        for (std::size_t dx = 0; dx < 3; ++dx) {
                            acc += p[(y + dy - 1) * w + (x + dx - 1)];
                        }
                    }
                    acc += 4.0 * p[y * w + x];
                    degenerate[c * plane + y * w + x] = acc / 13.0;
                }
            }
        }
        break;
    }
    default:
        throw ArgumentError("enhance: unknown kind");
    }
    Image out(image.shape());
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = clamp01(degenerate[i] * (1.0 - factor) + src[i] * factor);
    }
    return out;
}

Image rotate(const Image& image, double degrees) {
    require_rgb(image, "rotate");
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    const double rad = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cx = (static_cast<double>(w) - 1) / 2.0;
    const double cy = (static_cast<double>(h) - 1) / 2.0;
    Image out(image.shape());
    auto dst = out.data();
    const auto src = image.data();
    const auto hi = static_cast<std::ptrdiff_t>(h), wi = static_cast<std::ptrdiff_t>(w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double sx = cs * dx - sn * dy + cx;
            const double sy = sn * dx + cs * dy + cy;
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            const double ax = sx - fx0, ay = sy - fy0;
            const auto x0 = static_cast<std::ptrdiff_t>(fx0);
            const auto y0 = static_cast<std::ptrdiff_t>(fy0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double* p = src.data() + c * h * w;
                auto sample = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
                    if (yy < 0 || yy >= hi || xx < 0 || xx >= wi) return 0.0;
                    return p[yy * wi + xx];
                };
                const double v = sample(y0, x0) * (1 - ax) * (1 - ay) +
                                 sample(y0, x0 + 1) * ax * (1 - ay) +
                                 sample(y0 + 1, x0) * (1 - ax) * ay +
                                 sample(y0 + 1, x0 + 1) * ax * ay;
                dst[(c * h + y) * w + x] = clamp01(v);
            }
        }
    }
    return out;
}

std::array<double, 5> gaussian_taps(double sigma) {
    std::array<double, 5> t{};
    double total = 0;
    for (int i = 0; i < 5; ++i) {
        const double d = i - 2;
        t[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        total += t[static_cast<std::size_t>(i)];
    }
    for (auto& v : t) v /= total;
    return t;
}

Image blur(const Image& image, BlurKind kind) {
    require_rgb(image, "blur");
    const std::size_t h = image.shape()[1], w = image.shape()[2], plane = h * w;
    if (h < 5 || w < 5) throw DimensionError("blur: image must be at least 5x5");
    const std::array<double, 5> taps =
        kind == BlurKind::gaussian ? gaussian_taps() : std::array<double, 5>{0.2, 0.2, 0.2, 0.2, 0.2};
    Image out(image.shape());
    auto dst = out.data();
    const auto src = image.data();
    for (std::size_t c = 0; c < 3; ++c) {
        const auto rows = filter_axis(src.subspan(c * plane, plane), h, w, taps, true);
        const auto both = filter_axis(rows, h, w, taps, false);
        for (std::size_t i = 0; i < plane; ++i) dst[c * plane + i] = clamp01(both[i]);
    }
    return out;
}

std::string to_string(TransformKind kind) {
    switch (kind) {
    case TransformKind::chromaticity: return "chromaticity";
    case TransformKind::brightness: return "brightness";
    case TransformKind::contrast: return "contrast";
    case TransformKind::sharpness: return "sharpness";
    case TransformKind::rotation: return "rotation";
    case TransformKind::gaussian_blur: return "gaussian_blur";
    case TransformKind::mean_blur: return "mean_blur";
    }
    return "unknown";
}

TransformKind parse_transform_kind(const std::string& text) {
    for (auto k : kAllTransforms) {
        if (to_string(k) == text) return k;
    }
    throw ArgumentError("unknown transform kind '" + text + "'");
}

double sample_transform_parameter(TransformKind kind, std::uint64_t seed,
                                  std::size_t record_index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(kind),
                      static_cast<std::uint32_t>(record_index),
                      static_cast<std::uint32_t>(static_cast<std::uint64_t>(record_index) >> 32)};
    std::mt19937_64 rng(seq);
    switch (kind) {
    case TransformKind::chromaticity:
    case TransformKind::brightness:
    case TransformKind::contrast:
        return std::uniform_real_distribution<double>(0.5, 2.5)(rng);
    case TransformKind::sharpness:
        return static_cast<double>(std::uniform_int_distribution<int>(0, 4)(rng));
    case TransformKind::rotation:
        return std::uniform_real_distribution<double>(0.0, 360.0)(rng);
    case TransformKind::gaussian_blur:
    case TransformKind::mean_blur:
        return 0.0;
    }
    return 0.0;
}

Image apply_transform(const Image& image, TransformKind kind, double parameter) {
    switch (kind) {
    case TransformKind::chromaticity: return enhance(image, EnhanceKind::chromaticity, parameter);
    case TransformKind::brightness: return enhance(image, EnhanceKind::brightness, parameter);
    case TransformKind::contrast: return enhance(image, EnhanceKind::contrast, parameter);
    case TransformKind::sharpness: return enhance(image, EnhanceKind::sharpness, parameter);
    case TransformKind::rotation: return rotate(image, parameter);
    case TransformKind::gaussian_blur: return blur(image, BlurKind::gaussian);
    case TransformKind::mean_blur: return blur(image, BlurKind::mean);
    }
    throw ArgumentError("apply_transform: unknown kind");
}

Image apply_transform(const Image& image, const TransformSpec& spec, std::size_t record_index) {
    const double p = spec.parameter
                         ? *spec.parameter
                         : sample_transform_parameter(spec.kind, spec.rng_seed, record_index);
    return apply_transform(image, spec.kind, p);
}

} // namespace dsnet
