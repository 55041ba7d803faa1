#pragma once

#include "gsr/group_dict.hpp"
#include "gsr/grouping.hpp"
#include "gsr/image.hpp"
#include "gsr/operators.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

namespace gsr {

enum class Task { inpaint, deblur, cs };

/// u-solve for block CS: the orthonormal-row closed form, or inner_iters
/// steps of steepest descent.
enum class CsSolver { exact, gradient };

struct SolverConfig {
  double lambda = 0.082;
  double mu = 0.0025;
  int max_iters = 120;
  Thresholding thresholding = Thresholding::hard;
  CsSolver cs_solver = CsSolver::exact;
  int inner_iters = 1;     // gradient steps per u-solve (CS, gradient solver)
  int match_interval = 1;  // re-run block matching every k-th outer iteration
  /// Stop early once ||x_t - x_{t-1}|| / ||x_{t-1}|| falls below this; 0 disables.
  double early_stop_tol = 0.0;
  int threads = 1;
  GroupingConfig grouping;

  void validate() const;

  static SolverConfig inpainting();
  static SolverConfig deblur_uniform();
  static SolverConfig deblur_gaussian();
  static SolverConfig compressive_sensing();
  static SolverConfig defaults_for(Task task, const KernelSpec* kernel = nullptr);
};

/// tau = lambda * K / (mu * N), K = B_s * c * n.
double compute_tau(double lambda, double mu, double group_elements, double pixels);

/// Total number of group entries K for an image of the given size.
double group_element_count(int height, int width, const GroupingConfig& cfg);

/// Member lists of every reference patch, as produced by match_group.
struct GroupMatches {
  PatchGrid grid;
  std::vector<std::vector<PatchPos>> members;
};

GroupMatches match_all(const Image& img, const GroupingConfig& cfg, int threads = 1);

struct GroupStepResult {
  Image estimate;
  /// (1/K) sum_k ||xhat_Gk - r_Gk||_F^2 over the coded groups.
  double coding_residual = 0.0;
};

/// One pass of group coding: every group of r is coded over its own SVD
/// dictionary, thresholded at tau and aggregated back. When `matches` is
/// null the groups are matched on r itself.
GroupStepResult group_step(const Image& r, const GroupingConfig& cfg, double tau, Thresholding mode,
                           const GroupMatches* matches = nullptr, int threads = 1);

struct TraceRow {
  int iter = 0;
  double psnr_db = 0.0;  // NaN without ground truth
  double fidelity = 0.0;
  double var_eg = 0.0;   // NaN without ground truth
};

struct RestoreResult {
  Image restored;
  std::vector<TraceRow> trace;
  int iterations = 0;
  double tau = 0.0;
};

/// Per-iteration observer; receives the row and the current estimate.
using IterationCallback = std::function<void(const TraceRow&, const Image&)>;

/// Optional view of solver internals after each iteration, used by tests.
struct SolverSnapshot {
  const Image& u;
  const Image& b_before;
  const Image& b_after;
  const Image& estimate;
};
using SnapshotCallback = std::function<void(const SolverSnapshot&)>;

Image initial_estimate(const DegradationOperator& op, const Observation& y);

RestoreResult restore(const Observation& y, const DegradationOperator& op, const SolverConfig& cfg,
                      const std::optional<Image>& ground_truth = std::nullopt,
                      const IterationCallback& on_iteration = {}, const SnapshotCallback& on_snapshot = {});

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

enum class ErrorModel { gaussian, uniform };

struct Theorem1Result {
  double lhs = 0.0;  // (1/N) ||x - r||^2
  double rhs = 0.0;  // (1/K) sum_k ||x_Gk - r_Gk||_F^2
  double relative_gap = 0.0;
};

/// Monte Carlo comparison of the pixel-domain and group-domain residual
/// energies for a random image and i.i.d. zero-mean error of std sigma.
Theorem1Result theorem1_check(double sigma, int height, int width, const GroupingConfig& cfg,
                              std::uint64_t seed, ErrorModel model = ErrorModel::gaussian);

struct SweepRow {
  double value = 0.0;
  double psnr_db = 0.0;
  double isnr_db = 0.0;
};

/// Restores once per lambda; isnr is measured against `degraded_image`
/// (NaN when it is not provided).
std::vector<SweepRow> lambda_sweep(const Image& ground_truth, const Observation& y, const DegradationOperator& op,
                                   const SolverConfig& base, const std::vector<double>& lambdas,
                                   const std::optional<Image>& degraded_image);

}  // namespace gsr
