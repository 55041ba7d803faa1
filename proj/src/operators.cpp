#include "gsr/operators.hpp"

#include "gsr/random.hpp"

#include <unsupported/Eigen/FFT>

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace gsr {

namespace {

using ComplexImage = Eigen::MatrixXcd;

// 2D DFT as row transforms followed by column transforms.
ComplexImage fft2(const Image& img) {
  Eigen::FFT<double> fft;
  const Eigen::Index h = img.rows();
  const Eigen::Index w = img.cols();
  ComplexImage out(h, w);
  std::vector<std::complex<double>> in_row(static_cast<std::size_t>(w)), out_row;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) in_row[static_cast<std::size_t>(c)] = img(r, c);
    fft.fwd(out_row, in_row);
    for (Eigen::Index c = 0; c < w; ++c) out(r, c) = out_row[static_cast<std::size_t>(c)];
  }
  std::vector<std::complex<double>> in_col(static_cast<std::size_t>(h)), out_col;
  for (Eigen::Index c = 0; c < w; ++c) {
    for (Eigen::Index r = 0; r < h; ++r) in_col[static_cast<std::size_t>(r)] = out(r, c);
    fft.fwd(out_col, in_col);
    for (Eigen::Index r = 0; r < h; ++r) out(r, c) = out_col[static_cast<std::size_t>(r)];
  }
  return out;
}

// Inverse 2D DFT, keeping the real part.
Image ifft2_real(const ComplexImage& spec) {
  Eigen::FFT<double> fft;
  const Eigen::Index h = spec.rows();
  const Eigen::Index w = spec.cols();
  ComplexImage tmp(h, w);
  std::vector<std::complex<double>> in_col(static_cast<std::size_t>(h)), out_col;
  for (Eigen::Index c = 0; c < w; ++c) {
    for (Eigen::Index r = 0; r < h; ++r) in_col[static_cast<std::size_t>(r)] = spec(r, c);
    fft.inv(out_col, in_col);
    for (Eigen::Index r = 0; r < h; ++r) tmp(r, c) = out_col[static_cast<std::size_t>(r)];
  }
  Image out(h, w);
  std::vector<std::complex<double>> in_row(static_cast<std::size_t>(w)), out_row;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) in_row[static_cast<std::size_t>(c)] = tmp(r, c);
    fft.inv(out_row, in_row);
    for (Eigen::Index c = 0; c < w; ++c) out(r, c) = out_row[static_cast<std::size_t>(c)].real();
  }
  return out;
}

void require_shape(const Image& img, Eigen::Index h, Eigen::Index w, const char* what) {
  if (img.rows() != h || img.cols() != w) {
    std::ostringstream msg;
    msg << what << ": expected " << h << "x" << w << " image, got " << img.rows() << "x" << img.cols();
    throw DimensionError(msg.str());
  }
}

// Block b (raster order) of the image as a column, pixels row by row.
Eigen::MatrixXd gather_blocks(const BlockCSOperator& op, const Image& img) {
  const int bs = op.block_side;
  Eigen::MatrixXd blocks(bs * bs, op.blocks_y * op.blocks_x);
  for (int by = 0; by < op.blocks_y; ++by) {
    for (int bx = 0; bx < op.blocks_x; ++bx) {
      double* col = blocks.col(by * op.blocks_x + bx).data();
      for (int i = 0; i < bs; ++i) {
        const double* row = img.data() + (by * bs + i) * img.cols() + bx * bs;
        std::copy(row, row + bs, col + i * bs);
      }
    }
  }
  return blocks;
}

Image scatter_blocks(const BlockCSOperator& op, const Eigen::MatrixXd& blocks) {
  const int bs = op.block_side;
  Image img(op.height(), op.width());
  for (int by = 0; by < op.blocks_y; ++by) {
    for (int bx = 0; bx < op.blocks_x; ++bx) {
      const double* col = blocks.col(by * op.blocks_x + bx).data();
      for (int i = 0; i < bs; ++i) {
        double* row = img.data() + (by * bs + i) * img.cols() + bx * bs;
        std::copy(col + i * bs, col + (i + 1) * bs, row);
      }
    }
  }
  return img;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("GSRM: truncated file");
  return v;
}

int parse_int(const std::string& s, const std::string& context) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw std::invalid_argument("invalid integer '" + s + "' in kernel spec " + context);
  return v;
}

double parse_double(const std::string& s, const std::string& context) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty())
    throw std::invalid_argument("invalid number '" + s + "' in kernel spec " + context);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Masks

double MaskOperator::keep_fraction() const {
  return static_cast<double>(kept()) / static_cast<double>(keep.size());
}

Eigen::Index MaskOperator::kept() const { return (keep != 0).count(); }

MaskOperator make_random_mask(double fraction, std::uint64_t seed, int height, int width) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("mask fraction must lie in (0, 1]");
  if (height < 1 || width < 1) throw DimensionError("mask dimensions must be positive");
  MaskOperator op;
  op.seed = seed;
  op.keep.resize(height, width);
  Xoshiro256 rng(seed);
  for (Eigen::Index i = 0; i < op.keep.size(); ++i) op.keep.data()[i] = rng.uniform() < fraction ? 1 : 0;
  if (op.kept() == 0) throw std::invalid_argument("random mask keeps no pixel");
  return op;
}

MaskOperator make_stencil_mask(const Image& stencil) {
  MaskOperator op;
  op.keep = (stencil.array() >= 128.0).cast<std::uint8_t>();
  if (op.kept() == 0) throw std::invalid_argument("stencil mask keeps no pixel");
  return op;
}

Image apply(const MaskOperator& op, const Image& img) {
  require_shape(img, op.keep.rows(), op.keep.cols(), "mask apply");
  return (op.keep != 0).select(img, 0.0);
}

Image apply_adjoint(const MaskOperator& op, const Image& y) { return apply(op, y); }

Image solve_u_mask(const MaskOperator& op, const Image& y, const Image& z, double mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
  require_shape(y, op.keep.rows(), op.keep.cols(), "solve_u_mask");
  require_shape(z, op.keep.rows(), op.keep.cols(), "solve_u_mask");
  // Unobserved pixels take z exactly rather than mu*z/mu.
  return (op.keep != 0).select((y + mu * z) / (1.0 + mu), z);
}

// ---------------------------------------------------------------------------
// Blur

KernelSpec KernelSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
  if (parts.empty()) throw std::invalid_argument("empty kernel spec");

  KernelSpec spec;
  std::string head = parts[0];
  if (head.rfind("uniform", 0) == 0) {
    spec.kind = Kind::uniform;
    const std::string tail = head.substr(7);
    if (!tail.empty()) spec.side = parse_int(tail, text);
    if (parts.size() > 1) spec.side = parse_int(parts[1], text);
    if (parts.size() > 2) throw std::invalid_argument("too many fields in kernel spec " + text);
  } else if (head == "gaussian") {
    spec.kind = Kind::gaussian;
    spec.side = 25;
    if (parts.size() > 1) spec.side = parse_int(parts[1], text);
    if (parts.size() > 2) spec.std = parse_double(parts[2], text);
    if (parts.size() > 3) throw std::invalid_argument("too many fields in kernel spec " + text);
  } else if (head == "cauchy") {
    spec.kind = Kind::cauchy;
    if (parts.size() > 1) spec.range = parse_int(parts[1], text);
    if (parts.size() > 2) throw std::invalid_argument("too many fields in kernel spec " + text);
  } else if (head == "binomial") {
    spec.kind = Kind::binomial;
    if (parts.size() > 1) throw std::invalid_argument("too many fields in kernel spec " + text);
  } else {
    throw std::invalid_argument("unknown kernel spec " + text);
  }
  return spec;
}

Eigen::MatrixXd make_kernel(const KernelSpec& spec) {
  Eigen::MatrixXd k;
  switch (spec.kind) {
    case KernelSpec::Kind::uniform: {
      if (spec.side < 1 || spec.side % 2 == 0) throw std::invalid_argument("uniform kernel side must be odd");
      k = Eigen::MatrixXd::Ones(spec.side, spec.side);
      break;
    }
    case KernelSpec::Kind::gaussian: {
      if (spec.side < 1 || spec.side % 2 == 0) throw std::invalid_argument("gaussian kernel side must be odd");
      if (!(spec.std > 0.0)) throw std::invalid_argument("gaussian std must be positive");
      const int half = spec.side / 2;
      k.resize(spec.side, spec.side);
      for (int i = 0; i < spec.side; ++i)
        for (int j = 0; j < spec.side; ++j) {
          const double z1 = i - half;
          const double z2 = j - half;
          k(i, j) = std::exp(-(z1 * z1 + z2 * z2) / (2.0 * spec.std * spec.std));
        }
      break;
    }
    case KernelSpec::Kind::cauchy: {
      if (spec.range < 0) throw std::invalid_argument("cauchy range must be non-negative");
      const int side = 2 * spec.range + 1;
      k.resize(side, side);
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
          const double z1 = i - spec.range;
          const double z2 = j - spec.range;
          k(i, j) = 1.0 / (1.0 + z1 * z1 + z2 * z2);
        }
      break;
    }
    case KernelSpec::Kind::binomial: {
      Eigen::Vector<double, 5> b;
      b << 1, 4, 6, 4, 1;
      k = b * b.transpose();
      break;
    }
  }
  return k / k.sum();
}

void validate_kernel(const Eigen::MatrixXd& kernel) {
  if (kernel.rows() % 2 == 0 || kernel.cols() % 2 == 0) throw std::invalid_argument("kernel sides must be odd");
  if (!kernel.allFinite()) throw std::invalid_argument("kernel has non-finite entries");
  if (std::abs(kernel.sum() - 1.0) > 1e-12) throw std::invalid_argument("kernel must sum to 1");
}

BlurOperator make_blur(const Eigen::MatrixXd& kernel, int height, int width) {
  validate_kernel(kernel);
  if (kernel.rows() > height || kernel.cols() > width)
    throw DimensionError("kernel larger than the image");
  BlurOperator op;
  op.kernel = kernel;
  op.height = height;
  op.width = width;
  Image padded = Image::Zero(height, width);
  const auto ch = kernel.rows() / 2;
  const auto cw = kernel.cols() / 2;
  for (Eigen::Index i = 0; i < kernel.rows(); ++i)
    for (Eigen::Index j = 0; j < kernel.cols(); ++j) {
      const Eigen::Index r = (i - ch + height) % height;
      const Eigen::Index c = (j - cw + width) % width;
      padded(r, c) += kernel(i, j);
    }
  op.frequency_response = fft2(padded);
  return op;
}

Image apply(const BlurOperator& op, const Image& img) {
  require_shape(img, op.height, op.width, "blur apply");
  return ifft2_real(op.frequency_response.cwiseProduct(fft2(img)));
}

Image apply_adjoint(const BlurOperator& op, const Image& y) {
  require_shape(y, op.height, op.width, "blur adjoint");
  return ifft2_real(op.frequency_response.conjugate().cwiseProduct(fft2(y)));
}

Image solve_u_blur(const BlurOperator& op, const Image& y, const Image& z, double mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
  require_shape(y, op.height, op.width, "solve_u_blur");
  require_shape(z, op.height, op.width, "solve_u_blur");
  const Eigen::ArrayXXcd h = op.frequency_response.array();
  const Eigen::ArrayXXcd numer = h.conjugate() * fft2(y).array() + mu * fft2(z).array();
  const Eigen::ArrayXXd denom = h.abs2() + mu;
  return ifft2_real((numer / denom.cast<std::complex<double>>()).matrix());
}

// ---------------------------------------------------------------------------
// Block compressive sensing

int measurements_for_ratio(double ratio, int block_side) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("CS ratio must lie in (0, 1]");
  return static_cast<int>(std::lround(ratio * block_side * block_side));
}

BlockCSOperator make_block_cs(double ratio, std::uint64_t seed, int height, int width, int block_side) {
  if (block_side < 1) throw std::invalid_argument("block side must be positive");
  if (height % block_side != 0 || width % block_side != 0 || height == 0 || width == 0) {
    std::ostringstream msg;
    msg << "image " << height << "x" << width << " is not divisible into " << block_side << "x" << block_side
        << " blocks (pad explicitly)";
    throw DimensionError(msg.str());
  }
  const int m = measurements_for_ratio(ratio, block_side);
  if (m < 1) throw std::invalid_argument("CS ratio yields zero measurements per block");
  const int n = block_side * block_side;

  BlockCSOperator op;
  op.block_side = block_side;
  op.measurements = m;
  op.blocks_y = height / block_side;
  op.blocks_x = width / block_side;
  op.seed = seed;

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(m, n);
  NormalStream normal(seed);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = normal();

  // Gram-Schmidt in row order, each projection applied twice.
  for (int i = 0; i < m; ++i) {
    for (int pass = 0; pass < 2; ++pass) {
      if (i == 0) break;
      const Eigen::VectorXd coeffs = rows.topRows(i) * rows.row(i).transpose();
      rows.row(i) -= coeffs.transpose() * rows.topRows(i);
    }
    const double norm = rows.row(i).norm();
    if (norm < 1e-12) throw std::runtime_error("degenerate CS projection row");
    rows.row(i) /= norm;
  }
  op.phi = rows;
  return op;
}

Measurements apply(const BlockCSOperator& op, const Image& img) {
  require_shape(img, op.height(), op.width(), "CS apply");
  return {op.phi * gather_blocks(op, img)};
}

Image apply_adjoint(const BlockCSOperator& op, const Measurements& y) {
  if (y.values.rows() != op.measurements || y.values.cols() != op.blocks_y * op.blocks_x)
    throw DimensionError("CS adjoint: measurement shape mismatch");
  return scatter_blocks(op, op.phi.transpose() * y.values);
}

Image solve_u_cs(const BlockCSOperator& op, const Measurements& y, const Image& z, double mu, const Image& u0,
                 int inner_iters) {
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
  if (inner_iters < 1) throw std::invalid_argument("inner_iters must be >= 1");
  require_shape(z, op.height(), op.width(), "solve_u_cs");
  require_shape(u0, op.height(), op.width(), "solve_u_cs");
  const Image hty = apply_adjoint(op, y);
  Image u = u0;
  for (int it = 0; it < inner_iters; ++it) {
    const Image d = apply_adjoint(op, apply(op, u)) - hty + mu * (u - z);
    const double dd = d.squaredNorm();
    if (dd == 0.0) break;
    const double curvature = apply(op, d).values.squaredNorm() + mu * dd;
    u -= (dd / curvature) * d;
  }
  return u;
}

Image solve_u_cs_exact(const BlockCSOperator& op, const Measurements& y, const Image& z, double mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
  require_shape(z, op.height(), op.width(), "solve_u_cs_exact");
  // phi has orthonormal rows, so P = H^T H is a projector and
  // (P + mu I)^-1 = P / (1 + mu) + (I - P) / mu.
  const Image pz = apply_adjoint(op, apply(op, z));
  return (apply_adjoint(op, y) + mu * pz) / (1.0 + mu) + (z - pz);
}

// ---------------------------------------------------------------------------
// Variant dispatch

namespace {
template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

const Image& as_image(const Observation& y) {
  if (const auto* img = std::get_if<Image>(&y)) return *img;
  throw std::invalid_argument("operator expects an image observation");
}

const Measurements& as_measurements(const Observation& y) {
  if (const auto* m = std::get_if<Measurements>(&y)) return *m;
  throw std::invalid_argument("CS operator expects a measurement observation");
}
}  // namespace

Observation apply(const DegradationOperator& op, const Image& img) {
  return std::visit([&](const auto& o) -> Observation { return apply(o, img); }, op);
}

Image apply_adjoint(const DegradationOperator& op, const Observation& y) {
  return std::visit(Overloaded{
                        [&](const BlockCSOperator& o) { return apply_adjoint(o, as_measurements(y)); },
                        [&](const auto& o) { return apply_adjoint(o, as_image(y)); },
                    },
                    op);
}

double data_fidelity(const DegradationOperator& op, const Image& u, const Observation& y) {
  return std::visit(Overloaded{
                        [&](const BlockCSOperator& o) {
                          return 0.5 * (apply(o, u).values - as_measurements(y).values).squaredNorm();
                        },
                        [&](const auto& o) { return 0.5 * (apply(o, u) - as_image(y)).squaredNorm(); },
                    },
                    op);
}

double u_objective(const DegradationOperator& op, const Observation& y, const Image& z, double mu,
                   const Image& u) {
  return data_fidelity(op, u, y) + 0.5 * mu * (u - z).squaredNorm();
}

// ---------------------------------------------------------------------------
// Files

Eigen::MatrixXd load_kernel_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  long rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows < 1 || cols < 1) throw FormatError("kernel file: bad header");
  Eigen::MatrixXd k(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j)
      if (!(in >> k(i, j))) throw FormatError("kernel file: truncated values");
  std::string extra;
  if (in >> extra) throw FormatError("kernel file: trailing data");
  return k;
}

void save_kernel_file(const Eigen::MatrixXd& kernel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kernel.rows() << ' ' << kernel.cols() << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < kernel.rows(); ++i) {
    for (Eigen::Index j = 0; j < kernel.cols(); ++j) out << (j ? " " : "") << kernel(i, j);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_mask_pgm(const MaskOperator& op, const std::filesystem::path& path) {
  save_pgm((op.keep.cast<double>() * 255.0).matrix(), path);
}

void save_measurements(const BlockCSOperator& op, const Measurements& y, const std::filesystem::path& path) {
  if (y.values.rows() != op.measurements || y.values.cols() != op.blocks_y * op.blocks_x)
    throw DimensionError("measurement shape does not match operator");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("GSRM", 4);
  write_le(out, static_cast<std::uint32_t>(op.block_side));
  write_le(out, static_cast<std::uint32_t>(op.measurements));
  write_le(out, static_cast<std::uint32_t>(op.blocks_y));
  write_le(out, static_cast<std::uint32_t>(op.blocks_x));
  write_le(out, static_cast<std::uint64_t>(op.seed));
  // Column-major storage puts each block's M values contiguously.
  out.write(reinterpret_cast<const char*>(y.values.data()),
            static_cast<std::streamsize>(y.values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

MeasurementFile load_measurements(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GSRM", 4) != 0) throw FormatError("GSRM: missing magic in " + path.string());
  MeasurementFile file;
  file.block_side = static_cast<int>(read_le<std::uint32_t>(in));
  file.measurements = static_cast<int>(read_le<std::uint32_t>(in));
  file.blocks_y = static_cast<int>(read_le<std::uint32_t>(in));
  file.blocks_x = static_cast<int>(read_le<std::uint32_t>(in));
  file.seed = read_le<std::uint64_t>(in);
  if (file.block_side < 1 || file.measurements < 1 || file.blocks_y < 1 || file.blocks_x < 1 ||
      file.measurements > file.block_side * file.block_side)
    throw FormatError("GSRM: invalid header");
  file.data.values.resize(file.measurements, static_cast<Eigen::Index>(file.blocks_y) * file.blocks_x);
  in.read(reinterpret_cast<char*>(file.data.values.data()),
          static_cast<std::streamsize>(file.data.values.size() * sizeof(double)));
  if (!in) throw FormatError("GSRM: truncated payload");
  if (in.peek() != std::ifstream::traits_type::eof()) throw FormatError("GSRM: trailing data");
  return file;
}

BlockCSOperator operator_from_file(const MeasurementFile& file) {
  const double ratio =
      static_cast<double>(file.measurements) / static_cast<double>(file.block_side * file.block_side);
  BlockCSOperator op = make_block_cs(ratio, file.seed, file.blocks_y * file.block_side,
                                     file.blocks_x * file.block_side, file.block_side);
  if (op.measurements != file.measurements) throw FormatError("GSRM: measurement count not reproducible");
  return op;
}

Image pad_symmetric(const Image& img, int block_side) {
  const auto pad_to = [block_side](Eigen::Index n) { return (n + block_side - 1) / block_side * block_side; };
  const Eigen::Index h = pad_to(img.rows());
  const Eigen::Index w = pad_to(img.cols());
  const auto mirror = [](Eigen::Index i, Eigen::Index n) {
    const Eigen::Index period = 2 * n;
    i %= period;
    return i < n ? i : period - 1 - i;
  };
  Image out(h, w);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c) out(r, c) = img(mirror(r, img.rows()), mirror(c, img.cols()));
  return out;
}

}  // namespace gsr
