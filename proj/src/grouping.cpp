#include "gsr/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace gsr {

void GroupingConfig::validate() const {
  if (patch_side < 1) throw std::invalid_argument("patch_side must be >= 1");
  if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
  if (window < patch_side) throw std::invalid_argument("window must be >= patch_side");
  if (stride < 1 || stride > patch_side)
    throw std::invalid_argument("stride must lie in [1, patch_side]");
}

namespace {

std::vector<int> grid_axis(int extent, int patch_side, int stride) {
  std::vector<int> axis;
  const int last = extent - patch_side;
  for (int v = 0; v <= last; v += stride) axis.push_back(v);
  if (axis.back() != last) axis.push_back(last);
  return axis;
}

struct Candidate {
  double distance;
  int row;
  int col;

  bool operator<(const Candidate& o) const {
    return std::tie(distance, row, col) < std::tie(o.distance, o.row, o.col);
  }
};

}  // namespace

PatchGrid build_grid(int height, int width, const GroupingConfig& cfg) {
  cfg.validate();
  if (height < cfg.patch_side || width < cfg.patch_side) {
    std::ostringstream msg;
    msg << "image " << height << "x" << width << " is smaller than patch side " << cfg.patch_side;
    throw DimensionError(msg.str());
  }
  PatchGrid grid{height, width, {}};
  const auto rows = grid_axis(height, cfg.patch_side, cfg.stride);
  const auto cols = grid_axis(width, cfg.patch_side, cfg.stride);
  grid.positions.reserve(rows.size() * cols.size());
  for (int r : rows)
    for (int c : cols) grid.positions.push_back({r, c});
  return grid;
}

Group match_group(const Image& img, const PatchGrid& grid, std::size_t k, const GroupingConfig& cfg) {
  if (k >= grid.size()) throw std::out_of_range("match_group: reference index out of range");
  if (img.rows() != grid.height || img.cols() != grid.width)
    throw DimensionError("match_group: image does not match grid");

  const int p = cfg.patch_side;
  const PatchPos ref = grid.positions[k];
  const int half = (cfg.window - p) / 2;
  const int r0 = std::max(0, ref.row - half);
  const int r1 = std::min(grid.height - p, ref.row + half);
  const int c0 = std::max(0, ref.col - half);
  const int c1 = std::min(grid.width - p, ref.col + half);

  const Eigen::Index stride = img.cols();
  const double* base = img.data();
  const double* ref_ptr = base + ref.row * stride + ref.col;

  std::vector<Candidate> candidates;
  candidates.reserve(static_cast<std::size_t>(r1 - r0 + 1) * static_cast<std::size_t>(c1 - c0 + 1));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (r == ref.row && c == ref.col) continue;
      const double* cand_ptr = base + r * stride + c;
      double d = 0.0;
      for (int i = 0; i < p; ++i) {
        const double* a = ref_ptr + i * stride;
        const double* b = cand_ptr + i * stride;
        for (int j = 0; j < p; ++j) {
          const double diff = a[j] - b[j];
          d += diff * diff;
        }
      }
      candidates.push_back({d, r, c});
    }
  }

  // Reference first, then the best c-1 others by (distance, raster order).
  const auto c = static_cast<std::size_t>(cfg.group_size);
  const std::size_t keep = std::min(candidates.size(), c - 1);
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end());
  candidates.resize(keep);
  candidates.insert(candidates.begin(), Candidate{0.0, ref.row, ref.col});

  Group group;
  group.reference_index = k;
  group.members.reserve(c);
  group.distances.reserve(c);
  for (std::size_t j = 0; j < c; ++j) {
    const Candidate& cand = candidates[j % candidates.size()];
    group.members.push_back({cand.row, cand.col});
    group.distances.push_back(cand.distance);
  }
  group.matrix = extract_group(img, group.members, p);
  return group;
}

GroupMatrix extract_group(const Image& img, std::span<const PatchPos> members, int patch_side) {
  const int p = patch_side;
  GroupMatrix out(p * p, static_cast<Eigen::Index>(members.size()));
  for (std::size_t j = 0; j < members.size(); ++j) {
    const PatchPos pos = members[j];
    double* col = out.col(static_cast<Eigen::Index>(j)).data();
    for (int i = 0; i < p; ++i) {
      const double* row = img.data() + (pos.row + i) * img.cols() + pos.col;
      std::copy(row, row + p, col + i * p);
    }
  }
  return out;
}

void scatter_group(Image& acc_num, Image& acc_den, std::span<const PatchPos> members,
                   const GroupMatrix& values, int patch_side) {
  const int p = patch_side;
  if (values.rows() != p * p || values.cols() != static_cast<Eigen::Index>(members.size()))
    throw std::logic_error("scatter_group: value matrix does not match member list");
  for (std::size_t j = 0; j < members.size(); ++j) {
    const PatchPos pos = members[j];
    if (pos.row < 0 || pos.col < 0 || pos.row + p > acc_num.rows() || pos.col + p > acc_num.cols())
      throw std::logic_error("scatter_group: member patch outside the image");
    const double* col = values.col(static_cast<Eigen::Index>(j)).data();
    for (int i = 0; i < p; ++i) {
      double* num = acc_num.data() + (pos.row + i) * acc_num.cols() + pos.col;
      double* den = acc_den.data() + (pos.row + i) * acc_den.cols() + pos.col;
      for (int jj = 0; jj < p; ++jj) {
        num[jj] += col[i * p + jj];
        den[jj] += 1.0;
      }
    }
  }
}

Image divide_accumulators(const Image& acc_num, const Image& acc_den) {
  if ((acc_den.array() <= 0.0).any())
    throw std::logic_error("aggregation: pixel not covered by any group");
  return acc_num.cwiseQuotient(acc_den);
}

Aggregator::Aggregator(int height, int width, int patch_side)
    : num_(Image::Zero(height, width)),
      carry_(Image::Zero(height, width)),
      den_(Image::Zero(height, width)),
      patch_side_(patch_side) {}

void Aggregator::add(std::span<const PatchPos> members, const GroupMatrix& values) {
  const int p = patch_side_;
  if (values.rows() != p * p || values.cols() != static_cast<Eigen::Index>(members.size()))
    throw std::logic_error("scatter_group: value matrix does not match member list");
  for (std::size_t j = 0; j < members.size(); ++j) {
    const PatchPos pos = members[j];
    if (pos.row < 0 || pos.col < 0 || pos.row + p > num_.rows() || pos.col + p > num_.cols())
      throw std::logic_error("scatter_group: member patch outside the image");
    const double* col = values.col(static_cast<Eigen::Index>(j)).data();
    for (int i = 0; i < p; ++i) {
      const Eigen::Index offset = (pos.row + i) * num_.cols() + pos.col;
      double* num = num_.data() + offset;
      double* carry = carry_.data() + offset;
      double* den = den_.data() + offset;
      for (int jj = 0; jj < p; ++jj) {
        // Neumaier summation: hundreds of overlapping patches per pixel
        // would otherwise cost ~1e-12 of absolute accuracy at 8-bit scale.
        const double v = col[i * p + jj];
        const double t = num[jj] + v;
        carry[jj] += std::abs(num[jj]) >= std::abs(v) ? (num[jj] - t) + v : (v - t) + num[jj];
        num[jj] = t;
        den[jj] += 1.0;
      }
    }
  }
}

Image Aggregator::result() const { return divide_accumulators(num_ + carry_, den_); }

Image aggregate_groups(int height, int width, std::span<const GroupValues> groups, int patch_side) {
  Aggregator acc(height, width, patch_side);
  for (const auto& g : groups) acc.add(g.members, *g.values);
  return acc.result();
}

}  // namespace gsr
