#include "gsr/image.hpp"

#include "gsr/random.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace gsr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Reads one whitespace-delimited header token, skipping '#' comments.
class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<char>& buf) : buf_(buf) {}

  long next_int() {
    skip_space_and_comments();
    std::size_t start = pos_;
    while (pos_ < buf_.size() && std::isdigit(static_cast<unsigned char>(buf_[pos_]))) ++pos_;
    if (start == pos_ || pos_ - start > 9) throw FormatError("PGM: malformed header");
    return std::stol(std::string(buf_.begin() + start, buf_.begin() + pos_));
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= buf_.size() || !std::isspace(static_cast<unsigned char>(buf_[pos_])))
      throw FormatError("PGM: malformed header");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < buf_.size()) {
      if (buf_[pos_] == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(buf_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<char>& buf_;
  std::size_t pos_ = 2;
};

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(const std::vector<char>& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw FormatError("truncated binary file");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

Image load_pgm(const std::filesystem::path& path) {
  const auto buf = read_all(path);
  if (buf.size() < 2 || buf[0] != 'P') throw FormatError("PGM: missing magic in " + path.string());
  if (buf[1] != '5') throw FormatError("PGM: only binary P5 is supported");
  HeaderReader header(buf);
  const long width = header.next_int();
  const long height = header.next_int();
  const long maxval = header.next_int();
  if (width <= 0 || height <= 0) throw FormatError("PGM: non-positive dimensions");
  if (maxval != 255) throw FormatError("PGM: only maxval 255 is supported");
  const std::size_t offset = header.raster_offset();
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (buf.size() < offset + n) throw FormatError("PGM: truncated payload");

  Image img(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    img.data()[i] = static_cast<double>(static_cast<unsigned char>(buf[offset + i]));
  }
  return img;
}

std::uint8_t quantize_pixel(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::round(v));
}

void save_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  std::vector<char> raster(static_cast<std::size_t>(img.size()));
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    raster[static_cast<std::size_t>(i)] = static_cast<char>(quantize_pixel(img.data()[i]));
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Image load_gsrf(const std::filesystem::path& path) {
  const auto buf = read_all(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), "GSRF", 4) != 0)
    throw FormatError("GSRF: missing magic in " + path.string());
  std::size_t pos = 4;
  const auto height = read_le<std::uint32_t>(buf, pos);
  const auto width = read_le<std::uint32_t>(buf, pos);
  if (height == 0 || width == 0) throw FormatError("GSRF: zero dimension");
  const std::size_t n = std::size_t{height} * width;
  if (buf.size() != pos + n * sizeof(double)) throw FormatError("GSRF: payload size mismatch");
  Image img(height, width);
  std::memcpy(img.data(), buf.data() + pos, n * sizeof(double));
  if (!all_finite(img)) throw FormatError("GSRF: non-finite values");
  return img;
}

void save_gsrf(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("GSRF", 4);
  write_le(out, static_cast<std::uint32_t>(img.rows()));
  write_le(out, static_cast<std::uint32_t>(img.cols()));
  out.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  in.close();
  if (std::memcmp(magic.data(), "GSRF", 4) == 0) return load_gsrf(path);
  return load_pgm(path);
}

Image add_gaussian_noise(const Image& img, const NoiseSpec& spec) {
  if (spec.sigma < 0.0) throw std::invalid_argument("noise sigma must be non-negative");
  Image out = img;
  if (spec.sigma == 0.0) return out;
  NormalStream normal(spec.seed);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += spec.sigma * normal();
  return out;
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << what << ": dimension mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows()
        << "x" << b.cols();
    throw DimensionError(msg.str());
  }
}

double psnr(const Image& ref, const Image& test) {
  require_same_shape(ref, test, "psnr");
  const double sse = (ref - test).squaredNorm();
  if (sse == 0.0) return kInfiniteDb;
  return 10.0 * std::log10(kPeak * kPeak * static_cast<double>(ref.size()) / sse);
}

double isnr(const Image& ref, const Image& degraded, const Image& restored) {
  require_same_shape(ref, degraded, "isnr");
  require_same_shape(ref, restored, "isnr");
  const double restored_sse = (restored - ref).squaredNorm();
  if (restored_sse == 0.0) return kInfiniteDb;
  return 10.0 * std::log10((degraded - ref).squaredNorm() / restored_sse);
}

double residual_variance(const Image& a, const Image& b) {
  require_same_shape(a, b, "residual_variance");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

bool all_finite(const Image& img) { return img.allFinite(); }

}  // namespace gsr
