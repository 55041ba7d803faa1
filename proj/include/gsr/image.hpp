#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>

namespace gsr {

/// Grayscale image: rows = height, cols = width, row-major storage.
/// Intensities live in a nominal [0, 255] range but are never clamped
/// until they are quantized on save.
template <typename Scalar>
using ImageT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image = ImageT<double>;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Returned by psnr/isnr when the error energy is exactly zero.
inline constexpr double kInfiniteDb = std::numeric_limits<double>::infinity();

inline constexpr double kPeak = 255.0;

struct NoiseSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

// File I/O. PGM is binary P5, 8 bit, maxval 255. GSRF is the raw float dump:
// "GSRF", u32 LE height, u32 LE width, row-major f64 LE values.
Image load_pgm(const std::filesystem::path& path);
void save_pgm(const Image& img, const std::filesystem::path& path);
Image load_gsrf(const std::filesystem::path& path);
void save_gsrf(const Image& img, const std::filesystem::path& path);

/// Loads either format, dispatching on the file magic.
Image load_image(const std::filesystem::path& path);

std::uint8_t quantize_pixel(double v);

/// out = img + g, g i.i.d. N(0, sigma^2) from NormalStream(spec.seed).
Image add_gaussian_noise(const Image& img, const NoiseSpec& spec);

double psnr(const Image& ref, const Image& test);
double isnr(const Image& ref, const Image& degraded, const Image& restored);
double residual_variance(const Image& a, const Image& b);

bool all_finite(const Image& img);

void require_same_shape(const Image& a, const Image& b, const char* what);

}  // namespace gsr
