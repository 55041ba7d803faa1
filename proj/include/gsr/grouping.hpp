#pragma once

#include "gsr/image.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace gsr {

struct GroupingConfig {
  int patch_side = 8;   // B_s = patch_side^2
  int group_size = 60;  // c, matched patches per group
  int window = 40;      // L, search window side
  int stride = 4;       // reference grid step

  int patch_elements() const { return patch_side * patch_side; }
  void validate() const;
};

struct PatchPos {
  int row = 0;
  int col = 0;
  friend bool operator==(const PatchPos&, const PatchPos&) = default;
};

/// Reference patch positions in raster order. Every pixel is covered.
struct PatchGrid {
  int height = 0;
  int width = 0;
  std::vector<PatchPos> positions;

  std::size_t size() const { return positions.size(); }
};

/// B_s x c matrix of stacked patches. Column j holds the j-th matched patch,
/// vectorized row by row; column 0 is the reference patch.
template <typename Scalar>
using GroupMatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using GroupMatrix = GroupMatrixT<double>;

struct Group {
  GroupMatrix matrix;
  std::vector<PatchPos> members;
  std::vector<double> distances;  // squared Euclidean distance to the reference
  std::size_t reference_index = 0;
};

PatchGrid build_grid(int height, int width, const GroupingConfig& cfg);

/// Selects the c best matches of reference patch k by exhaustive search over
/// the clamped window. Only the member coordinates are computed here; use
/// extract_group to gather values from any image.
Group match_group(const Image& img, const PatchGrid& grid, std::size_t k, const GroupingConfig& cfg);

/// Gathers the patches at `members` from `img` into a B_s x members.size() matrix.
GroupMatrix extract_group(const Image& img, std::span<const PatchPos> members, int patch_side);

/// acc_num[p] += value, acc_den[p] += 1 for every pixel of every member patch.
void scatter_group(Image& acc_num, Image& acc_den, std::span<const PatchPos> members,
                   const GroupMatrix& values, int patch_side);

/// Weighted-average aggregation: acc_num ./ acc_den. Throws if a pixel is uncovered.
Image divide_accumulators(const Image& acc_num, const Image& acc_den);

struct GroupValues {
  std::span<const PatchPos> members;
  const GroupMatrix* values = nullptr;
};

/// Compensated scatter/divide used by aggregate_groups and the solver.
class Aggregator {
 public:
  Aggregator(int height, int width, int patch_side);
  void add(std::span<const PatchPos> members, const GroupMatrix& values);
  Image result() const;

 private:
  Image num_, carry_, den_;
  int patch_side_;
};

Image aggregate_groups(int height, int width, std::span<const GroupValues> groups, int patch_side);

}  // namespace gsr
