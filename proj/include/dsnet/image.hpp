#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

// [3, H, W] RGB, values in [0, 1].
using Image = Tensor<double>;

Image decode_ppm(std::span<const std::uint8_t> bytes);
// Binary PPM (P6, maxval 255).
Image decode_image(const std::string& path);

// Values are clamped to [0, 1] and rounded to the nearest byte.
std::vector<std::uint8_t> encode_ppm(const Image& image);
void write_ppm(const std::string& path, const Image& image);
// Single 8-bit plane (P5).
void write_pgm(const std::string& path, std::span<const double> plane, std::size_t height,
               std::size_t width);

// Half-pixel aligned separable bilinear resampling to side x side, clamped to [0, 1].
Image resize_bilinear(const Image& image, std::size_t side);

enum class EnhanceKind { chromaticity, brightness, contrast, sharpness };

// Blends toward a degenerate image: clamp(degenerate * (1 - f) + image * f).
Image enhance(const Image& image, EnhanceKind kind, double factor);

// Rotation about the image center (counter-clockwise for positive degrees) on a fixed canvas,
// bilinear inverse mapping, zero fill outside the source.
Image rotate(const Image& image, double degrees);

enum class BlurKind { gaussian, mean };

inline constexpr double kGaussianSigma = 1.1;

// Normalized 5-tap Gaussian.
std::array<double, 5> gaussian_taps(double sigma = kGaussianSigma);

// 5x5 per-channel filtering with edge replication.
Image blur(const Image& image, BlurKind kind);

enum class TransformKind {
    chromaticity,
    brightness,
    contrast,
    sharpness,
    rotation,
    gaussian_blur,
    mean_blur
};

inline constexpr std::array<TransformKind, 7> kAllTransforms = {
    TransformKind::chromaticity, TransformKind::brightness,    TransformKind::contrast,
    TransformKind::sharpness,    TransformKind::rotation,      TransformKind::gaussian_blur,
    TransformKind::mean_blur};

std::string to_string(TransformKind kind);
TransformKind parse_transform_kind(const std::string& text);

struct TransformSpec {
    TransformKind kind = TransformKind::chromaticity;
    // Fixed factor/degrees; sampled per record when empty. Ignored by the blurs.
    std::optional<double> parameter;
    std::uint64_t rng_seed = 0;
};

// Enhancement factors uniform in [0.5, 2.5]; sharpness an integer in [0, 4]; rotation uniform in
// [0, 360). Pure function of (seed, kind, record index).
double sample_transform_parameter(TransformKind kind, std::uint64_t seed,
                                  std::size_t record_index);

Image apply_transform(const Image& image, TransformKind kind, double parameter);
Image apply_transform(const Image& image, const TransformSpec& spec, std::size_t record_index);

} // namespace dsnet
