#pragma once

#include "gsr/image.hpp"

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

namespace gsr {

// ---------------------------------------------------------------------------
// Operator types

/// Diagonal 0/1 sampling operator (inpainting).
struct MaskOperator {
  Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> keep;
  std::uint64_t seed = 0;

  double keep_fraction() const;
  Eigen::Index kept() const;
};

/// Circular convolution with an odd-sided kernel summing to one (deblurring).
/// The frequency response is the DFT of the kernel zero-padded to image size
/// with its center moved to (0, 0).
struct BlurOperator {
  Eigen::MatrixXd kernel;
  int height = 0;
  int width = 0;
  Eigen::MatrixXcd frequency_response;  // height x width
};

/// One shared M x B^2 projection with orthonormal rows, applied to every
/// B x B block in raster order (block compressive sensing).
struct BlockCSOperator {
  int block_side = 32;
  int measurements = 0;  // M per block
  int blocks_y = 0;
  int blocks_x = 0;
  std::uint64_t seed = 0;
  Eigen::MatrixXd phi;

  int height() const { return blocks_y * block_side; }
  int width() const { return blocks_x * block_side; }
};

/// One column of M values per block, blocks in raster order.
struct Measurements {
  Eigen::MatrixXd values;
};

using DegradationOperator = std::variant<MaskOperator, BlurOperator, BlockCSOperator>;
using Observation = std::variant<Image, Measurements>;

// ---------------------------------------------------------------------------
// Construction

struct KernelSpec {
  enum class Kind { uniform, gaussian, cauchy, binomial };
  Kind kind = Kind::uniform;
  int side = 9;       // uniform and gaussian support
  double std = 1.6;   // gaussian
  int range = 7;      // cauchy-like: z in [-range, range]

  /// Parses "uniform9", "uniform:9", "gaussian:25:1.6", "cauchy", "cauchy:7", "binomial".
  static KernelSpec parse(const std::string& text);
};

Eigen::MatrixXd make_kernel(const KernelSpec& spec);
void validate_kernel(const Eigen::MatrixXd& kernel);
BlurOperator make_blur(const Eigen::MatrixXd& kernel, int height, int width);

MaskOperator make_random_mask(double fraction, std::uint64_t seed, int height, int width);
MaskOperator make_stencil_mask(const Image& stencil);

BlockCSOperator make_block_cs(double ratio, std::uint64_t seed, int height, int width, int block_side = 32);
int measurements_for_ratio(double ratio, int block_side = 32);

// ---------------------------------------------------------------------------
// Forward and adjoint application

Image apply(const MaskOperator& op, const Image& img);
Image apply(const BlurOperator& op, const Image& img);
Measurements apply(const BlockCSOperator& op, const Image& img);

Image apply_adjoint(const MaskOperator& op, const Image& y);
Image apply_adjoint(const BlurOperator& op, const Image& y);
Image apply_adjoint(const BlockCSOperator& op, const Measurements& y);

Observation apply(const DegradationOperator& op, const Image& img);
Image apply_adjoint(const DegradationOperator& op, const Observation& y);

/// 0.5 * ||H u - y||^2
double data_fidelity(const DegradationOperator& op, const Image& u, const Observation& y);

// ---------------------------------------------------------------------------
// u sub-problem: argmin_u 0.5||Hu - y||^2 + 0.5*mu*||u - z||^2

Image solve_u_mask(const MaskOperator& op, const Image& y, const Image& z, double mu);
Image solve_u_blur(const BlurOperator& op, const Image& y, const Image& z, double mu);

/// Steepest descent with exact line search, inner_iters steps from u0.
Image solve_u_cs(const BlockCSOperator& op, const Measurements& y, const Image& z, double mu,
                 const Image& u0, int inner_iters);

/// Closed-form minimizer of the same problem; exact because phi has
/// orthonormal rows. Equals the limit of solve_u_cs as inner_iters grows.
Image solve_u_cs_exact(const BlockCSOperator& op, const Measurements& y, const Image& z, double mu);

/// Quadratic objective minimized by the u sub-problem.
double u_objective(const DegradationOperator& op, const Observation& y, const Image& z, double mu,
                   const Image& u);

// ---------------------------------------------------------------------------
// Artifact files

/// ASCII: "rows cols" then row-major reals.
Eigen::MatrixXd load_kernel_file(const std::filesystem::path& path);
void save_kernel_file(const Eigen::MatrixXd& kernel, const std::filesystem::path& path);

/// Mask as P5 PGM, 255 = keep, 0 = missing.
void save_mask_pgm(const MaskOperator& op, const std::filesystem::path& path);

/// "GSRM", u32 LE block_side, M, blocks_y, blocks_x, u64 LE seed, then per
/// block M f64 LE values.
struct MeasurementFile {
  int block_side = 32;
  int measurements = 0;
  int blocks_y = 0;
  int blocks_x = 0;
  std::uint64_t seed = 0;
  Measurements data;
};

void save_measurements(const BlockCSOperator& op, const Measurements& y, const std::filesystem::path& path);
MeasurementFile load_measurements(const std::filesystem::path& path);

/// Rebuilds the projection recorded in a measurement file.
BlockCSOperator operator_from_file(const MeasurementFile& file);

/// Symmetric (edge-replicating) padding up to a multiple of block_side.
Image pad_symmetric(const Image& img, int block_side);

}  // namespace gsr
