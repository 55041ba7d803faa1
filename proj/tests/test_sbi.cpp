#include "gsr/random.hpp"
#include "gsr/sbi.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace gsr;

namespace {

Image random_image(int h, int w, std::uint64_t seed, double scale = 255.0) {
  Xoshiro256 rng(seed);
  Image img(h, w);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = scale * rng.uniform();
  return img;
}

// Piecewise-smooth test image: gradients, a disc and a bar.
Image synthetic_scene(int h, int w) {
  Image img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double v = 60.0 + 100.0 * r / h + 40.0 * c / w;
      const double dr = r - h / 2.0, dc = c - w / 3.0;
      if (dr * dr + dc * dc < (h / 5.0) * (h / 5.0)) v = 210.0;
      if (c > 2 * w / 3 && c < 2 * w / 3 + 5) v = 20.0;
      img(r, c) = v;
    }
  return img;
}

SolverConfig small_config() {
  SolverConfig cfg;
  cfg.grouping.group_size = 16;
  cfg.grouping.window = 20;
  return cfg;
}

}  // namespace

TEST_CASE("compute_tau") {
  CHECK(compute_tau(0.5, 0.5, 100.0, 100.0) == doctest::Approx(1.0));
  CHECK(compute_tau(0.082, 0.0025, 240.0, 1.0) == doctest::Approx(7872.0));
  CHECK(compute_tau(0.0, 0.0025, 240.0, 1.0) == 0.0);
  CHECK_THROWS(compute_tau(1.0, 0.0, 1.0, 1.0));
  CHECK_THROWS(compute_tau(1.0, 1.0, 1.0, 0.0));
  CHECK_THROWS(compute_tau(-1.0, 1.0, 1.0, 1.0));
}

TEST_CASE("solver defaults") {
  const auto inp = SolverConfig::inpainting();
  CHECK(inp.lambda == 0.082);
  CHECK(inp.mu == 0.0025);
  const auto du = SolverConfig::deblur_uniform();
  CHECK(du.lambda == 0.554);
  CHECK(du.mu == 0.0075);
  const auto dg = SolverConfig::deblur_gaussian();
  CHECK(dg.lambda == 0.41);
  CHECK(dg.mu == 0.0125);
  const auto cs = SolverConfig::compressive_sensing();
  CHECK(cs.lambda == 0.082);
  CHECK(cs.mu == 0.0025);
  const KernelSpec g = KernelSpec::parse("gaussian");
  CHECK(SolverConfig::defaults_for(Task::deblur, &g).lambda == 0.41);
  CHECK(SolverConfig::defaults_for(Task::deblur).lambda == 0.554);

  SolverConfig bad;
  bad.mu = 0.0;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.lambda = -1.0;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.max_iters = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("group_step limits") {
  const GroupingConfig g = small_config().grouping;
  const Image r = random_image(40, 44, 3);
  SUBCASE("tau 0 reproduces the input") {
    const auto out = group_step(r, g, 0.0, Thresholding::hard);
    CHECK((out.estimate - r).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(out.coding_residual < 1e-18);
    const auto soft = group_step(r, g, 0.0, Thresholding::soft);
    CHECK((soft.estimate - r).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("huge tau zeroes everything") {
    const auto out = group_step(r, g, 1e12, Thresholding::hard);
    CHECK(out.estimate.cwiseAbs().maxCoeff() == 0.0);
    CHECK(group_step(r, g, 1e12, Thresholding::soft).estimate.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("constant images survive hard thresholding") {
    // Rank-one groups with singular value v*sqrt(B_s*c) = 100*32 = 3200 > sqrt(2*1000).
    const Image c = Image::Constant(40, 44, 100.0);
    CHECK((group_step(c, g, 1000.0, Thresholding::hard).estimate.array() - 100.0).abs().maxCoeff() < 1e-9);
  }
  SUBCASE("precomputed matches give the same result") {
    const auto matches = match_all(r, g);
    CHECK(group_step(r, g, 500.0, Thresholding::hard, &matches).estimate ==
          group_step(r, g, 500.0, Thresholding::hard).estimate);
  }
  SUBCASE("coding residual matches its definition") {
    const double tau = 2000.0;
    const auto matches = match_all(r, g);
    double total = 0.0, count = 0.0;
    for (const auto& m : matches.members) {
      const GroupMatrix x = extract_group(r, m, g.patch_side);
      const auto d = learn_dictionary(x);
      total += (reconstruct_group(d, hard_threshold_code(d, tau)) - x).squaredNorm();
      count += static_cast<double>(x.size());
    }
    CHECK(group_step(r, g, tau, Thresholding::hard).coding_residual == doctest::Approx(total / count).epsilon(1e-9));
  }
  CHECK_THROWS(group_step(r, g, -1.0, Thresholding::hard));
}

TEST_CASE("group_element_count") {
  GroupingConfig g;
  CHECK(group_element_count(256, 256, g) == 63.0 * 63.0 * 64.0 * 60.0);
  CHECK(group_element_count(256, 256, g) / 65536.0 == doctest::Approx(240.0).epsilon(0.04));
}

TEST_CASE("restore with an identity mask and no penalty returns y") {
  const Image y = random_image(32, 32, 5);
  const DegradationOperator op = make_random_mask(1.0, 1, 32, 32);
  SolverConfig cfg = small_config();
  cfg.lambda = 0.0;
  cfg.max_iters = 1;
  const auto res = restore(y, op, cfg);
  CHECK((res.restored - y).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(res.iterations == 1);
  CHECK(res.tau == 0.0);
  REQUIRE(res.trace.size() == 1);
  CHECK(std::isnan(res.trace[0].psnr_db));
  CHECK(std::isnan(res.trace[0].var_eg));
}

TEST_CASE("Bregman update identity holds bitwise") {
  const Image x = synthetic_scene(32, 32);
  const DegradationOperator op = make_blur(make_kernel(KernelSpec::parse("binomial")), 32, 32);
  const Observation y = gsr::apply(op, add_gaussian_noise(x, {2.0, 3}));
  SolverConfig cfg = small_config();
  cfg.lambda = 0.4;
  cfg.mu = 0.01;
  cfg.max_iters = 4;
  int calls = 0;
  Image previous_b = Image::Zero(32, 32);
  restore(y, op, cfg, x, {}, [&](const SolverSnapshot& s) {
    ++calls;
    CHECK(bool(s.b_before == previous_b));
    const Image expected = s.b_before - (s.u - s.estimate);
    CHECK(bool(s.b_after == expected));
    previous_b = s.b_after;
  });
  CHECK(calls == 4);
}

TEST_CASE("restore traces and improves a blurred scene") {
  const Image x = synthetic_scene(48, 48);
  const DegradationOperator op = make_blur(make_kernel(KernelSpec::parse("uniform:5")), 48, 48);
  const Image degraded = std::get<Image>(gsr::apply(op, add_gaussian_noise(x, {0.0, 1})));
  const Image noisy = add_gaussian_noise(degraded, {std::sqrt(2.0), 4});
  SolverConfig cfg = SolverConfig::deblur_uniform();
  cfg.grouping = small_config().grouping;
  cfg.max_iters = 8;
  std::vector<TraceRow> seen;
  const auto res = restore(Observation{noisy}, op, cfg, x, [&](const TraceRow& row, const Image&) { seen.push_back(row); });
  REQUIRE(res.trace.size() == 8);
  CHECK(seen.size() == 8);
  CHECK(res.trace.back().psnr_db == doctest::Approx(psnr(x, res.restored)));
  CHECK(res.trace.back().psnr_db > psnr(x, noisy) + 1.0);
  for (std::size_t i = 0; i < res.trace.size(); ++i) {
    CHECK(res.trace[i].iter == static_cast<int>(i) + 1);
    CHECK(res.trace[i].var_eg > 0.0);
    CHECK(res.trace[i].fidelity > 0.0);
  }
  const double K = group_element_count(48, 48, cfg.grouping);
  CHECK(res.tau == doctest::Approx(compute_tau(cfg.lambda, cfg.mu, K, 48.0 * 48.0)));
}

TEST_CASE("restore is bit-identical across thread counts") {
  const Image x = synthetic_scene(40, 40);
  const auto mask = make_random_mask(0.5, 9, 40, 40);
  const DegradationOperator op = mask;
  const Observation y = gsr::apply(op, x);
  SolverConfig cfg = small_config();
  cfg.lambda = 0.8;
  cfg.max_iters = 3;
  cfg.threads = 1;
  const auto one = restore(y, op, cfg, x);
  cfg.threads = 4;
  const auto four = restore(y, op, cfg, x);
  CHECK(one.restored == four.restored);
  for (std::size_t i = 0; i < one.trace.size(); ++i) {
    CHECK(one.trace[i].psnr_db == four.trace[i].psnr_db);
    CHECK(one.trace[i].var_eg == four.trace[i].var_eg);
  }
}

TEST_CASE("restore on compressive measurements") {
  const Image x = synthetic_scene(32, 64);
  const auto cs = make_block_cs(0.3, 11, 32, 64);
  const DegradationOperator op = cs;
  const Observation y = gsr::apply(op, x);
  SolverConfig cfg = small_config();
  // Adjoint-consistent start is a fixed point until tau trims something,
  // so this needs a larger lambda than the other tasks.
  cfg.lambda = 3.0;
  cfg.max_iters = 25;
  const auto res = restore(y, op, cfg, x);
  CHECK(res.trace.back().psnr_db > psnr(x, initial_estimate(op, y)) + 10.0);
  cfg.max_iters = 6;
  cfg.cs_solver = CsSolver::gradient;
  cfg.inner_iters = 2;
  const auto gd = restore(y, op, cfg, x);
  CHECK(gd.iterations == 6);
  CHECK(std::isfinite(gd.trace.back().psnr_db));
  CHECK_THROWS(restore(Observation{x}, op, cfg));
}

TEST_CASE("early stop and match interval") {
  const Image x = synthetic_scene(32, 32);
  const DegradationOperator op = make_random_mask(1.0, 1, 32, 32);
  SolverConfig cfg = small_config();
  cfg.lambda = 0.0;
  cfg.max_iters = 20;
  cfg.early_stop_tol = 1e-4;
  CHECK(restore(Observation{x}, op, cfg).iterations < 20);

  cfg.early_stop_tol = 0.0;
  cfg.max_iters = 3;
  cfg.lambda = 0.5;
  cfg.match_interval = 10;
  const auto res = restore(Observation{x}, op, cfg, x);
  CHECK(res.iterations == 3);
}

TEST_CASE("restore rejects mismatched inputs") {
  const DegradationOperator op = make_random_mask(0.5, 1, 32, 32);
  const SolverConfig cfg = small_config();
  CHECK_THROWS_AS(restore(Observation{Image::Zero(32, 31)}, op, cfg), DimensionError);
  CHECK_THROWS_AS(restore(Observation{Image::Zero(32, 32)}, op, cfg, Image::Zero(8, 8)), DimensionError);
}

TEST_CASE("trace CSV") {
  std::vector<TraceRow> rows{{1, 20.5, 3.0, 1.5}, {2, std::nan(""), 2.0, std::nan("")}};
  std::ostringstream out;
  write_trace_csv(out, rows);
  CHECK(out.str() == "iter,psnr_db,fidelity,var_eg\n1,20.5,3,1.5\n2,nan,2,nan\n");
}

TEST_CASE("theorem 1 Monte Carlo") {
  const GroupingConfig g;
  const auto zero = theorem1_check(0.0, 64, 64, g, 1);
  CHECK(zero.lhs == 0.0);
  CHECK(zero.rhs == 0.0);
  const auto gauss = theorem1_check(5.0, 256, 256, g, 2024, ErrorModel::gaussian);
  CHECK(gauss.lhs == doctest::Approx(25.0).epsilon(0.02));
  CHECK(gauss.relative_gap < 0.05);
  const auto uni = theorem1_check(5.0, 256, 256, g, 2024, ErrorModel::uniform);
  CHECK(uni.lhs == doctest::Approx(25.0).epsilon(0.02));
  CHECK(uni.relative_gap < 0.05);
  CHECK_THROWS(theorem1_check(-1.0, 64, 64, g, 1));
}

TEST_CASE("lambda sweep") {
  const Image x = synthetic_scene(32, 32);
  const DegradationOperator op = make_blur(make_kernel(KernelSpec::parse("binomial")), 32, 32);
  const Image y = add_gaussian_noise(std::get<Image>(gsr::apply(op, x)), {2.0, 5});
  SolverConfig cfg = small_config();
  cfg.max_iters = 2;
  CHECK(lambda_sweep(x, Observation{y}, op, cfg, {}, y).empty());
  const auto one = lambda_sweep(x, Observation{y}, op, cfg, {0.5}, y);
  REQUIRE(one.size() == 1);
  CHECK(one[0].value == 0.5);
  CHECK(one[0].isnr_db == doctest::Approx(one[0].psnr_db - psnr(x, y)));
  CHECK(std::isnan(lambda_sweep(x, Observation{y}, op, cfg, {0.5}, std::nullopt)[0].isnr_db));
}
