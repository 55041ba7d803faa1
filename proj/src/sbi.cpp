#include "gsr/sbi.hpp"

#include "gsr/random.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace gsr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Groups are coded in chunks so that coding runs in parallel while the
// scatter stays sequential in reference order (bit-identical for any thread count).
constexpr std::size_t kChunk = 256;

int effective_threads(int threads) { return std::max(1, threads); }

int image_height(const DegradationOperator& op) {
  return std::visit(
      [](const auto& o) -> int {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, MaskOperator>) return static_cast<int>(o.keep.rows());
        else if constexpr (std::is_same_v<T, BlurOperator>) return o.height;
        else return o.height();
      },
      op);
}

int image_width(const DegradationOperator& op) {
  return std::visit(
      [](const auto& o) -> int {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, MaskOperator>) return static_cast<int>(o.keep.cols());
        else if constexpr (std::is_same_v<T, BlurOperator>) return o.width;
        else return o.width();
      },
      op);
}

// (1/K) sum_k ||A_Gk - B_Gk||_F^2 with the given member lists.
double group_residual_energy(const Image& a, const Image& b, const GroupMatches& matches, int patch_side) {
  const Image diff = a - b;
  double total = 0.0;
  double count = 0.0;
  for (const auto& members : matches.members) {
    const GroupMatrix g = extract_group(diff, members, patch_side);
    total += g.squaredNorm();
    count += static_cast<double>(g.size());
  }
  return total / count;
}

}  // namespace

void SolverConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be > 0");
  if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
  if (inner_iters < 1) throw std::invalid_argument("inner_iters must be >= 1");
  if (match_interval < 1) throw std::invalid_argument("match_interval must be >= 1");
  if (early_stop_tol < 0.0) throw std::invalid_argument("early_stop_tol must be >= 0");
  grouping.validate();
}

SolverConfig SolverConfig::inpainting() {
  SolverConfig cfg;
  cfg.lambda = 0.082;
  cfg.mu = 0.0025;
  cfg.max_iters = 120;
  return cfg;
}

SolverConfig SolverConfig::deblur_uniform() {
  SolverConfig cfg;
  cfg.lambda = 0.554;
  cfg.mu = 0.0075;
  cfg.max_iters = 60;
  return cfg;
}

SolverConfig SolverConfig::deblur_gaussian() {
  SolverConfig cfg;
  cfg.lambda = 0.41;
  cfg.mu = 0.0125;
  cfg.max_iters = 60;
  return cfg;
}

SolverConfig SolverConfig::compressive_sensing() {
  SolverConfig cfg;
  cfg.lambda = 0.082;
  cfg.mu = 0.0025;
  cfg.max_iters = 100;
  return cfg;
}

SolverConfig SolverConfig::defaults_for(Task task, const KernelSpec* kernel) {
  switch (task) {
    case Task::inpaint: return inpainting();
    case Task::cs: return compressive_sensing();
    case Task::deblur:
      if (kernel != nullptr && kernel->kind == KernelSpec::Kind::gaussian) return deblur_gaussian();
      return deblur_uniform();
  }
  return inpainting();
}

double compute_tau(double lambda, double mu, double group_elements, double pixels) {
  if (mu == 0.0 || pixels == 0.0) throw std::invalid_argument("compute_tau: mu and N must be non-zero");
  if (lambda < 0.0 || mu < 0.0 || group_elements < 0.0 || pixels < 0.0)
    throw std::invalid_argument("compute_tau: arguments must be non-negative");
  return lambda * group_elements / (mu * pixels);
}

double group_element_count(int height, int width, const GroupingConfig& cfg) {
  const PatchGrid grid = build_grid(height, width, cfg);
  return static_cast<double>(grid.size()) * cfg.patch_elements() * cfg.group_size;
}

GroupMatches match_all(const Image& img, const GroupingConfig& cfg, int threads) {
  GroupMatches out;
  out.grid = build_grid(static_cast<int>(img.rows()), static_cast<int>(img.cols()), cfg);
  out.members.resize(out.grid.size());
  const auto n = static_cast<std::ptrdiff_t>(out.grid.size());
#pragma omp parallel for num_threads(effective_threads(threads)) schedule(dynamic, 16)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    Group g = match_group(img, out.grid, static_cast<std::size_t>(k), cfg);
    out.members[static_cast<std::size_t>(k)] = std::move(g.members);
  }
  return out;
}

GroupStepResult group_step(const Image& r, const GroupingConfig& cfg, double tau, Thresholding mode,
                           const GroupMatches* matches, int threads) {
  if (tau < 0.0) throw std::invalid_argument("group_step: tau must be non-negative");
  GroupMatches local;
  if (matches == nullptr) {
    local = match_all(r, cfg, threads);
    matches = &local;
  }
  if (matches->grid.height != r.rows() || matches->grid.width != r.cols())
    throw DimensionError("group_step: matches were computed for a different image size");

  const int p = cfg.patch_side;
  Aggregator acc(static_cast<int>(r.rows()), static_cast<int>(r.cols()), p);
  double residual = 0.0;
  double elements = 0.0;

  const std::size_t n = matches->members.size();
  std::vector<GroupMatrix> coded(std::min(n, kChunk));
  std::vector<double> chunk_residual(coded.size());
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t stop = std::min(n, start + kChunk);
    const auto count = static_cast<std::ptrdiff_t>(stop - start);
#pragma omp parallel for num_threads(effective_threads(threads)) schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      const auto k = start + static_cast<std::size_t>(i);
      const GroupMatrix group = extract_group(r, matches->members[k], p);
      coded[static_cast<std::size_t>(i)] = shrink_group(group, tau, mode);
      chunk_residual[static_cast<std::size_t>(i)] = (coded[static_cast<std::size_t>(i)] - group).squaredNorm();
    }
    for (std::size_t i = 0; i < stop - start; ++i) {
      acc.add(matches->members[start + i], coded[i]);
      residual += chunk_residual[i];
      elements += static_cast<double>(coded[i].size());
    }
  }
  return {acc.result(), residual / elements};
}

Image initial_estimate(const DegradationOperator& op, const Observation& y) {
  return std::visit(
      [&](const auto& o) -> Image {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, MaskOperator>) {
          const Image& obs = std::get<Image>(y);
          const double mean = (o.keep != 0).select(obs.array(), 0.0).sum() / static_cast<double>(o.kept());
          return (o.keep != 0).select(obs.array(), mean).matrix();
        } else if constexpr (std::is_same_v<T, BlurOperator>) {
          return std::get<Image>(y);
        } else {
          return apply_adjoint(o, std::get<Measurements>(y));
        }
      },
      op);
}

RestoreResult restore(const Observation& y, const DegradationOperator& op, const SolverConfig& cfg,
                      const std::optional<Image>& ground_truth, const IterationCallback& on_iteration,
                      const SnapshotCallback& on_snapshot) {
  cfg.validate();
  const int h = image_height(op);
  const int w = image_width(op);
  if (const auto* img = std::get_if<Image>(&y); img != nullptr && (img->rows() != h || img->cols() != w))
    throw DimensionError("restore: observation does not match operator");
  if (std::holds_alternative<Measurements>(y) != std::holds_alternative<BlockCSOperator>(op))
    throw std::invalid_argument("restore: observation kind does not match operator");
  if (ground_truth && (ground_truth->rows() != h || ground_truth->cols() != w))
    throw DimensionError("restore: ground truth does not match operator");

  const int p = cfg.grouping.patch_side;
  const double n_pixels = static_cast<double>(h) * w;
  RestoreResult result;
  result.tau = compute_tau(cfg.lambda, cfg.mu, group_element_count(h, w, cfg.grouping), n_pixels);

  Image u = initial_estimate(op, y);
  Image b = Image::Zero(h, w);
  // Start the estimate at u0 rather than zero: with a zero start the first
  // u-solve leaves unobserved pixels at 0 and inpainting crawls for hundreds
  // of iterations.
  Image estimate = u;
  GroupMatches matches;

  for (int t = 1; t <= cfg.max_iters; ++t) {
    const Image z = estimate + b;
    u = std::visit(
        [&](const auto& o) -> Image {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, MaskOperator>) return solve_u_mask(o, std::get<Image>(y), z, cfg.mu);
          else if constexpr (std::is_same_v<T, BlurOperator>) return solve_u_blur(o, std::get<Image>(y), z, cfg.mu);
          else if (cfg.cs_solver == CsSolver::exact) return solve_u_cs_exact(o, std::get<Measurements>(y), z, cfg.mu);
          else return solve_u_cs(o, std::get<Measurements>(y), z, cfg.mu, u, cfg.inner_iters);
        },
        op);

    const Image r = u - b;
    if ((t - 1) % cfg.match_interval == 0) matches = match_all(r, cfg.grouping, cfg.threads);
    GroupStepResult step = group_step(r, cfg.grouping, result.tau, cfg.thresholding, &matches, cfg.threads);

    Image b_next = b - (u - step.estimate);
    if (on_snapshot) on_snapshot({u, b, b_next, step.estimate});

    const double change =
        estimate.squaredNorm() > 0.0 ? (step.estimate - estimate).norm() / estimate.norm() : kNaN;
    estimate = std::move(step.estimate);
    b = std::move(b_next);

    TraceRow row;
    row.iter = t;
    row.fidelity = data_fidelity(op, estimate, y);
    row.psnr_db = ground_truth ? psnr(*ground_truth, estimate) : kNaN;
    row.var_eg = ground_truth ? group_residual_energy(*ground_truth, r, matches, p) : kNaN;
    result.trace.push_back(row);
    result.iterations = t;
    if (on_iteration) on_iteration(row, estimate);

    if (cfg.early_stop_tol > 0.0 && change < cfg.early_stop_tol) break;
  }
  result.restored = std::move(estimate);
  return result;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  const auto num = [&out](double v) -> std::ostream& {
    if (std::isnan(v)) return out << "nan";
    if (std::isinf(v)) return out << (v > 0 ? "inf" : "-inf");
    return out << std::setprecision(10) << v;
  };
  out << "iter,psnr_db,fidelity,var_eg\n";
  for (const auto& row : trace) {
    out << row.iter << ',';
    num(row.psnr_db) << ',';
    num(row.fidelity) << ',';
    num(row.var_eg) << '\n';
  }
}

Theorem1Result theorem1_check(double sigma, int height, int width, const GroupingConfig& cfg, std::uint64_t seed,
                              ErrorModel model) {
  if (sigma < 0.0) throw std::invalid_argument("theorem1_check: sigma must be non-negative");
  if (height < cfg.patch_side || width < cfg.patch_side)
    throw DimensionError("theorem1_check: image smaller than a patch");

  Xoshiro256 rng(seed);
  Image x(height, width);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 255.0 * rng.uniform();

  Image e(height, width);
  if (model == ErrorModel::gaussian) {
    NormalStream normal(seed ^ 0x5bd1e995ULL);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = sigma * normal();
  } else {
    const double half_width = sigma * std::sqrt(3.0);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = half_width * (2.0 * rng.uniform() - 1.0);
  }
  const Image r = x + e;

  const GroupMatches matches = match_all(x, cfg);
  Theorem1Result out;
  out.lhs = residual_variance(x, r);
  out.rhs = group_residual_energy(x, r, matches, cfg.patch_side);
  out.relative_gap = sigma > 0.0 ? std::abs(out.lhs - out.rhs) / (sigma * sigma) : 0.0;
  return out;
}

std::vector<SweepRow> lambda_sweep(const Image& ground_truth, const Observation& y, const DegradationOperator& op,
                                   const SolverConfig& base, const std::vector<double>& lambdas,
                                   const std::optional<Image>& degraded_image) {
  std::vector<SweepRow> rows;
  rows.reserve(lambdas.size());
  for (double lambda : lambdas) {
    SolverConfig cfg = base;
    cfg.lambda = lambda;
    const RestoreResult res = restore(y, op, cfg, ground_truth);
    SweepRow row;
    row.value = lambda;
    row.psnr_db = psnr(ground_truth, res.restored);
    row.isnr_db = degraded_image ? isnr(ground_truth, *degraded_image, res.restored) : kNaN;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace gsr
