#include "cli.hpp"

#include "gsr/image.hpp"
#include "gsr/operators.hpp"
#include "gsr/sbi.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

namespace gsr::cli {

namespace fs = std::filesystem;

namespace {

// Offset between the operator seed and the noise seed so the two streams
// never coincide.
constexpr std::uint64_t kNoiseSeedOffset = 1;

const std::set<std::string> kFlagKeys = {"pad", "raw"};

struct Options {
  std::string task;
  double fraction = 0.0;
  std::string stencil;
  std::string kernel;
  double sigma = 0.0;
  double ratio = 0.0;
  double lambda = 0.0;
  double mu = 0.0;
  int iters = 0;
  std::string thresholding = "hard";
  int match_interval = 1;
  int inner_iters = 1;
  std::string cs_solver = "exact";
  int threads = 0;
  std::uint64_t seed = 0;
  std::string trace;
  std::string ground_truth;
  std::string output;
  std::string crop;
  double early_stop = 0.0;
  int group_size = 0;
  bool pad = false;
  bool raw = false;

  CLI::Option* fraction_opt = nullptr;
  CLI::Option* lambda_opt = nullptr;
  CLI::Option* mu_opt = nullptr;
  CLI::Option* iters_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* ratio_opt = nullptr;
  CLI::Option* group_size_opt = nullptr;
};

void add_operator_options(CLI::App* app, Options& o) {
  app->add_option("--task", o.task, "inpaint | deblur | cs")
      ->required()
      ->check(CLI::IsMember({"inpaint", "deblur", "cs"}));
  o.fraction_opt = app->add_option("--fraction", o.fraction, "kept pixel fraction of a random mask");
  app->add_option("--stencil", o.stencil, "mask PGM (>=128 keeps the pixel)");
  app->add_option("--kernel", o.kernel, "kernel file or spec: uniform9, gaussian:25:1.6, cauchy, binomial");
  o.ratio_opt = app->add_option("--ratio", o.ratio, "CS measurement ratio");
  app->add_option("--seed", o.seed, "seed for masks, noise and CS matrices");
  o.threads_opt = app->add_option("--threads", o.threads, "worker threads (default: GSR_THREADS or hardware)");
}

void add_solver_options(CLI::App* app, Options& o) {
  o.lambda_opt = app->add_option("--lambda", o.lambda, "sparsity weight");
  o.mu_opt = app->add_option("--mu", o.mu, "splitting weight");
  o.iters_opt = app->add_option("--iters", o.iters, "outer iterations");
  app->add_option("--thresholding", o.thresholding, "hard | soft")->check(CLI::IsMember({"hard", "soft"}));
  app->add_option("--match-interval", o.match_interval, "re-match groups every k iterations");
  app->add_option("--cs-solver", o.cs_solver, "exact | gradient")->check(CLI::IsMember({"exact", "gradient"}));
  app->add_option("--inner-iters", o.inner_iters, "steepest-descent steps per CS u-solve (gradient solver)");
  app->add_option("--early-stop", o.early_stop, "relative-change stopping tolerance (0 = off)");
  o.group_size_opt = app->add_option("--group-size", o.group_size, "matched patches per group (c)");
  app->add_option("--trace", o.trace, "per-iteration CSV trace");
  app->add_option("--ground-truth", o.ground_truth, "reference image for PSNR/ISNR");
  app->add_option("--crop", o.crop, "crop the result to ROWSxCOLS (after padded CS)");
}

int resolve_threads(const Options& o) {
  if (o.threads_opt != nullptr && o.threads_opt->count() > 0) return std::max(1, o.threads);
  if (const char* env = std::getenv("GSR_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Task parse_task(const std::string& s) {
  if (s == "inpaint") return Task::inpaint;
  if (s == "deblur") return Task::deblur;
  return Task::cs;
}

Eigen::MatrixXd resolve_kernel(const std::string& arg, KernelSpec* spec_out) {
  if (arg.empty()) throw std::invalid_argument("--kernel is required for deblurring");
  if (fs::exists(arg)) return load_kernel_file(arg);
  const KernelSpec spec = KernelSpec::parse(arg);
  if (spec_out != nullptr) *spec_out = spec;
  return make_kernel(spec);
}

std::string format_db(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

// Tracks written files and removes them unless the command completes.
class OutputGuard {
 public:
  void add(const fs::path& p) { paths_.push_back(p); }
  void commit() { paths_.clear(); }
  ~OutputGuard() {
    std::error_code ec;
    for (const auto& p : paths_) fs::remove(p, ec);
  }

 private:
  std::vector<fs::path> paths_;
};

fs::path default_prefix(const std::string& input, const std::string& suffix) {
  fs::path p(input);
  return p.parent_path() / (p.stem().string() + suffix);
}

struct Problem {
  Task task = Task::inpaint;
  DegradationOperator op;
  Observation observation;
  std::optional<Image> degraded_image;
  KernelSpec kernel_spec;
  bool has_kernel_spec = false;
};

Problem load_problem(const Options& o, const std::string& input) {
  Problem pb;
  pb.task = parse_task(o.task);
  if (pb.task == Task::cs) {
    const MeasurementFile file = load_measurements(input);
    pb.op = operator_from_file(file);
    pb.observation = file.data;
    return pb;
  }
  const Image y = load_image(input);
  if (pb.task == Task::inpaint) {
    if (!o.stencil.empty()) {
      MaskOperator mask = make_stencil_mask(load_pgm(o.stencil));
      if (mask.keep.rows() != y.rows() || mask.keep.cols() != y.cols())
        throw DimensionError("stencil and input differ in size");
      pb.op = std::move(mask);
    } else if (o.fraction_opt->count() > 0) {
      pb.op = make_random_mask(o.fraction, o.seed, static_cast<int>(y.rows()), static_cast<int>(y.cols()));
    } else {
      throw std::invalid_argument("inpainting needs --stencil or --fraction");
    }
  } else {
    KernelSpec spec;
    const Eigen::MatrixXd kernel = resolve_kernel(o.kernel, &spec);
    pb.has_kernel_spec = !fs::exists(o.kernel);
    pb.kernel_spec = spec;
    pb.op = make_blur(kernel, static_cast<int>(y.rows()), static_cast<int>(y.cols()));
  }
  pb.observation = y;
  pb.degraded_image = y;
  return pb;
}

SolverConfig solver_config(const Options& o, const Problem& pb) {
  SolverConfig cfg = SolverConfig::defaults_for(pb.task, pb.has_kernel_spec ? &pb.kernel_spec : nullptr);
  if (o.lambda_opt->count() > 0) cfg.lambda = o.lambda;
  if (o.mu_opt->count() > 0) cfg.mu = o.mu;
  if (o.iters_opt->count() > 0) cfg.max_iters = o.iters;
  if (o.group_size_opt->count() > 0) cfg.grouping.group_size = o.group_size;
  cfg.thresholding = o.thresholding == "soft" ? Thresholding::soft : Thresholding::hard;
  cfg.match_interval = o.match_interval;
  cfg.inner_iters = o.inner_iters;
  cfg.cs_solver = o.cs_solver == "gradient" ? CsSolver::gradient : CsSolver::exact;
  cfg.early_stop_tol = o.early_stop;
  cfg.threads = resolve_threads(o);
  return cfg;
}

Image maybe_crop(const Image& img, const std::string& crop) {
  if (crop.empty()) return img;
  const auto x = crop.find('x');
  if (x == std::string::npos) throw std::invalid_argument("--crop expects ROWSxCOLS");
  const int rows = std::stoi(crop.substr(0, x));
  const int cols = std::stoi(crop.substr(x + 1));
  if (rows < 1 || cols < 1 || rows > img.rows() || cols > img.cols())
    throw DimensionError("--crop exceeds the restored image");
  return img.topLeftCorner(rows, cols);
}

int cmd_degrade(const Options& o, const std::string& input, std::ostream& out) {
  OutputGuard guard;
  Image x = load_image(input);
  const fs::path prefix = o.output.empty() ? default_prefix(input, "_degraded") : fs::path(o.output);
  const NoiseSpec noise{o.sigma, o.seed + kNoiseSeedOffset};
  const Task task = parse_task(o.task);

  const auto write_image = [&](const Image& img) {
    const fs::path pgm = prefix.string() + ".pgm";
    guard.add(pgm);
    save_pgm(img, pgm);
    out << "wrote " << pgm.string() << '\n';
    if (o.raw) {
      const fs::path raw = prefix.string() + ".gsrf";
      guard.add(raw);
      save_gsrf(img, raw);
      out << "wrote " << raw.string() << '\n';
    }
  };

  if (task == Task::inpaint) {
    MaskOperator mask;
    if (!o.stencil.empty()) {
      mask = make_stencil_mask(load_pgm(o.stencil));
    } else if (o.fraction_opt->count() > 0) {
      mask = make_random_mask(o.fraction, o.seed, static_cast<int>(x.rows()), static_cast<int>(x.cols()));
    } else {
      throw std::invalid_argument("inpainting needs --fraction or --stencil");
    }
    const fs::path mask_path = prefix.string() + ".mask.pgm";
    guard.add(mask_path);
    save_mask_pgm(mask, mask_path);
    out << "wrote " << mask_path.string() << '\n';
    write_image(apply(mask, add_gaussian_noise(x, noise)));
  } else if (task == Task::deblur) {
    const Eigen::MatrixXd kernel = resolve_kernel(o.kernel, nullptr);
    const BlurOperator blur = make_blur(kernel, static_cast<int>(x.rows()), static_cast<int>(x.cols()));
    const fs::path kernel_path = prefix.string() + ".kernel.txt";
    guard.add(kernel_path);
    save_kernel_file(kernel, kernel_path);
    out << "wrote " << kernel_path.string() << '\n';
    write_image(add_gaussian_noise(apply(blur, x), noise));
  } else {
    if (o.ratio_opt->count() == 0) throw std::invalid_argument("--ratio is required for cs");
    if (o.pad) x = pad_symmetric(x, 32);
    const BlockCSOperator cs = make_block_cs(o.ratio, o.seed, static_cast<int>(x.rows()), static_cast<int>(x.cols()));
    const fs::path gsrm = prefix.string() + ".gsrm";
    guard.add(gsrm);
    save_measurements(cs, apply(cs, x), gsrm);
    out << "wrote " << gsrm.string() << " (M=" << cs.measurements << ", " << x.rows() << "x" << x.cols() << ")\n";
  }
  guard.commit();
  return 0;
}

int cmd_restore(const Options& o, const std::string& input, std::ostream& out) {
  OutputGuard guard;
  const auto start = std::chrono::steady_clock::now();
  const Problem pb = load_problem(o, input);
  const SolverConfig cfg = solver_config(o, pb);
  std::optional<Image> truth;
  if (!o.ground_truth.empty()) truth = load_image(o.ground_truth);

  const bool cropping = !o.crop.empty();
  const RestoreResult res = restore(pb.observation, pb.op, cfg, cropping ? std::nullopt : truth);
  const Image restored = maybe_crop(res.restored, o.crop);

  const fs::path out_path =
      o.output.empty() ? fs::path(default_prefix(input, "_restored").string() + ".pgm") : fs::path(o.output);
  guard.add(out_path);
  save_pgm(restored, out_path);
  if (!o.trace.empty()) {
    guard.add(o.trace);
    std::ofstream trace(o.trace);
    if (!trace) throw std::runtime_error("cannot write " + o.trace);
    write_trace_csv(trace, res.trace);
  }

  double psnr_db = std::nan("");
  double isnr_db = std::nan("");
  if (truth) {
    psnr_db = psnr(*truth, restored);
    if (pb.degraded_image && !cropping) isnr_db = isnr(*truth, *pb.degraded_image, restored);
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << o.task << ',' << format_db(psnr_db) << ',' << format_db(isnr_db) << ',' << res.iterations << ','
      << std::fixed << std::setprecision(3) << wall << '\n';
  guard.commit();
  return 0;
}

int cmd_metric(const std::string& ref_path, const std::string& test_path, const std::string& degraded_path,
               std::ostream& out) {
  const Image ref = load_image(ref_path);
  const Image test = load_image(test_path);
  out << "psnr_db=" << format_db(psnr(ref, test)) << '\n';
  if (!degraded_path.empty()) out << "isnr_db=" << format_db(isnr(ref, load_image(degraded_path), test)) << '\n';
  return 0;
}

int cmd_sweep(const Options& o, const std::string& input, const std::string& param, const std::vector<double>& values,
              std::ostream& out) {
  if (param != "lambda" && param != "c") throw std::invalid_argument("unknown sweep parameter " + param);
  if (o.ground_truth.empty()) throw std::invalid_argument("sweep requires --ground-truth");
  const Problem pb = load_problem(o, input);
  const Image truth = load_image(o.ground_truth);
  const SolverConfig base = solver_config(o, pb);

  std::ostringstream csv;
  csv << "param,value,psnr_db,isnr_db\n";
  for (double v : values) {
    SolverConfig cfg = base;
    if (param == "lambda") {
      cfg.lambda = v;
    } else {
      cfg.grouping.group_size = static_cast<int>(std::lround(v));
    }
    const RestoreResult res = restore(pb.observation, pb.op, cfg);
    const double isnr_db = pb.degraded_image ? isnr(truth, *pb.degraded_image, res.restored) : std::nan("");
    csv << param << ',' << v << ',' << format_db(psnr(truth, res.restored)) << ',' << format_db(isnr_db) << '\n';
  }
  if (o.output.empty()) {
    out << csv.str();
  } else {
    OutputGuard guard;
    guard.add(o.output);
    std::ofstream f(o.output);
    f << csv.str();
    if (!f) throw std::runtime_error("cannot write " + o.output);
    guard.commit();
  }
  return 0;
}

// Splices the config file (if any) right after the subcommand so that flags
// given on the command line come later and win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config.empty() || rest.size() < 2) return rest;
  const auto tokens = config_file_tokens(config);
  rest.insert(rest.begin() + 2, tokens.begin(), tokens.end());
  return rest;
}

}  // namespace

std::vector<std::string> config_file_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::vector<std::string> tokens;
  std::string line;
  int line_no = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty key");
    std::replace(key.begin(), key.end(), '_', '-');
    if (kFlagKeys.count(key) > 0) {
      if (value == "true" || value == "1") tokens.push_back("--" + key);
      continue;
    }
    tokens.push_back("--" + key);
    tokens.push_back(value);
  }
  return tokens;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-based sparse representation image restoration"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Options degrade_opts, restore_opts, sweep_opts;
  std::string input;
  std::string ref_path, test_path, degraded_path;
  std::string sweep_param;
  std::vector<double> sweep_values;

  auto* degrade = app.add_subcommand("degrade", "synthesize a degraded observation");
  add_operator_options(degrade, degrade_opts);
  degrade->add_option("--sigma", degrade_opts.sigma, "additive Gaussian noise std");
  degrade->add_option("-o,--output", degrade_opts.output, "output prefix");
  degrade->add_flag("--pad", degrade_opts.pad, "symmetric padding to a multiple of 32 (cs)");
  degrade->add_flag("--raw", degrade_opts.raw, "also write a lossless GSRF float dump");
  degrade->add_option("input", input, "clean input image")->required();

  auto* restore_cmd = app.add_subcommand("restore", "restore a degraded observation");
  add_operator_options(restore_cmd, restore_opts);
  add_solver_options(restore_cmd, restore_opts);
  restore_cmd->add_option("-o,--output", restore_opts.output, "restored PGM");
  restore_cmd->add_option("input", input, "degraded image (PGM/GSRF) or GSRM measurements")->required();

  auto* metric = app.add_subcommand("metric", "PSNR / ISNR between images");
  metric->add_option("reference", ref_path)->required();
  metric->add_option("test", test_path)->required();
  metric->add_option("--degraded", degraded_path, "degraded image, enables ISNR");

  auto* sweep = app.add_subcommand("sweep", "restore once per parameter value");
  add_operator_options(sweep, sweep_opts);
  add_solver_options(sweep, sweep_opts);
  sweep->add_option("--param", sweep_param, "lambda | c")->required();
  sweep->add_option("--values", sweep_values, "comma separated values")->required()->delimiter(',');
  sweep->add_option("-o,--output", sweep_opts.output, "CSV output (default stdout)");
  sweep->add_option("input", input, "degraded image or GSRM measurements")->required();

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (degrade->parsed()) return cmd_degrade(degrade_opts, input, out);
    if (restore_cmd->parsed()) return cmd_restore(restore_opts, input, out);
    if (metric->parsed()) return cmd_metric(ref_path, test_path, degraded_path, out);
    if (sweep->parsed()) return cmd_sweep(sweep_opts, input, sweep_param, sweep_values, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace gsr::cli
