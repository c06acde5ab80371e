#include "mfglab/runner.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfglab/config.hpp"
#include "mfglab/errors.hpp"
#include "mfglab/harness.hpp"
#include "mfglab/mkv_solver.hpp"
#include "mfglab/model.hpp"
#include "mfglab/monotonicity.hpp"
#include "mfglab/nplayer_solver.hpp"

namespace mfg {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Artifacts {
  fs::path dir;
  std::string subcommand;
  std::uint64_t seed = 0;
  std::uint64_t hash = 0;

  std::ofstream open(const std::string& filename) const {
    std::ofstream out(dir / filename);
    if (!out) throw ConfigError("cannot write artifact: " + (dir / filename).string());
    char hashbuf[24];
    std::snprintf(hashbuf, sizeof(hashbuf), "%016llx",
                  static_cast<unsigned long long>(hash));
    out << "# subcommand = " << subcommand << "\n";
    out << "# seed = " << seed << "\n";
    out << "# config = " << hashbuf << "\n";
    return out;
  }
};

int run_monotonicity(const RunConfig& cfg, const Artifacts& art, std::string* error) {
  const CoefficientSet coeffs = lq_coefficients(cfg.lq(), cfg.grid(), /*enforce=*/false);
  const ValidationReport vrep = validate_lq(cfg.lq(), cfg.grid());
  const MonotonicityReport rep = certify(coeffs, cfg.trials, cfg.cloud_atoms, art.seed);

  std::ofstream out = art.open("monotonicity.txt");
  out << "trials = " << rep.trials << "\n";
  out << "estimated_CH = " << fmt(rep.estimated_CH) << "\n";
  out << "estimated_CG = " << fmt(rep.estimated_CG) << "\n";
  out << "min_drift_margin = " << fmt(rep.min_drift_margin) << "\n";
  out << "min_terminal_margin = " << fmt(rep.min_terminal_margin) << "\n";
  out << "assumption_check_passed = " << (vrep.passed ? 1 : 0) << "\n";
  out << "lambda = " << fmt(vrep.lambda) << "\n";
  // For non-LQ models this would be evidence, not proof; the LQ instance has
  // exact algebra behind it.
  out << "verdict = " << (rep.passed ? "no violation found" : "violation found") << "\n";
  out << "summary passed=" << (rep.passed ? 1 : 0) << " trials=" << rep.trials
      << " CH=" << fmt(rep.estimated_CH) << " CG=" << fmt(rep.estimated_CG) << "\n";
  if (rep.passed) return 0;

  std::ofstream wit = art.open("witness.csv");
  wit << "kind,node,atom,component,x,y,z,z0,x2,y2,z2,z02\n";
  if (rep.drift_witness) {
    const DriftWitness& w = *rep.drift_witness;
    for (Eigen::Index i = 0; i < w.first.size(); ++i)
      for (Eigen::Index j = 0; j < w.first.X.cols(); ++j)
        wit << "drift," << w.node << "," << i << "," << j << "," << fmt(w.first.X(i, j)) << ","
            << fmt(w.first.Y(i, j)) << "," << fmt(w.first.Z(i, j)) << ","
            << fmt(w.first.Z0(i, j)) << "," << fmt(w.second.X(i, j)) << ","
            << fmt(w.second.Y(i, j)) << "," << fmt(w.second.Z(i, j)) << ","
            << fmt(w.second.Z0(i, j)) << "\n";
  }
  if (rep.terminal_witness) {
    const TerminalWitness& w = *rep.terminal_witness;
    for (Eigen::Index i = 0; i < w.first.rows(); ++i)
      for (Eigen::Index j = 0; j < w.first.cols(); ++j)
        wit << "terminal,0," << i << "," << j << "," << fmt(w.first(i, j)) << ",0,0,0,"
            << fmt(w.second(i, j)) << ",0,0,0\n";
  }
  *error = "monotonicity violation found (witness.csv written): CH=" + fmt(rep.estimated_CH) +
           " CG=" + fmt(rep.estimated_CG);
  return 2;
}

int run_solve_mfg(const RunConfig& cfg, const Artifacts& art, std::string* error) {
  const CoefficientSet coeffs = lq_coefficients(cfg.lq(), cfg.grid());
  const MfeSolution sol =
      solve_mfe(make_reduced_model(coeffs), cfg.initial_law(), art.seed, cfg.mkv());

  const std::size_t K = sol.grid.steps;
  std::ofstream out = art.open("mfg.csv");
  out << "step,t,mean_X,var_X,mean_Y,mean_alpha,var_alpha\n";
  for (std::size_t k = 0; k <= K; ++k) {
    double sx = 0, sxx = 0, sy = 0, sa = 0, saa = 0;
    std::size_t count = 0;
    for (std::size_t w = 0; w < sol.worlds; ++w) {
      const ThetaCloud th = sol.theta_at(w, k);
      const Eigen::MatrixXd a = sol.alpha_at(w, k);
      sx += th.X.col(0).sum();
      sxx += th.X.col(0).squaredNorm();
      sy += th.Y.col(0).sum();
      sa += a.col(0).sum();
      saa += a.col(0).squaredNorm();
      count += static_cast<std::size_t>(th.X.rows());
    }
    const double m = static_cast<double>(count);
    const double mean_x = sx / m, mean_y = sy / m, mean_a = sa / m;
    out << k << "," << fmt(sol.grid.t(k)) << "," << fmt(mean_x) << ","
        << fmt(sxx / m - mean_x * mean_x) << "," << fmt(mean_y) << "," << fmt(mean_a) << ","
        << fmt(saa / m - mean_a * mean_a) << "\n";
  }

  std::ofstream sum = art.open("mfg_summary.txt");
  sum << "converged = " << (sol.converged ? 1 : 0) << "\n";
  sum << "iterations = " << sol.iterations << "\n";
  sum << "final_residual = "
      << fmt(sol.residual_history.empty() ? 0.0 : sol.residual_history.back()) << "\n";
  sum << "martingale_residual = " << fmt(martingale_residual(sol)) << "\n";

  if (!sol.converged) {
    *error = "mean-field solve did not converge in " + std::to_string(sol.iterations) +
             " iterations";
    return 2;
  }
  return 0;
}

int run_solve_nplayer(const RunConfig& cfg, const Artifacts& art, std::string* error) {
  const CoefficientSet coeffs = lq_coefficients(cfg.lq(), cfg.grid());
  std::ofstream out = art.open("nplayer.csv");
  out << "N,iteration,residual\n";
  std::ofstream sum = art.open("nplayer_summary.txt");
  bool all_converged = true;
  for (Eigen::Index N : cfg.N_list) {
    const NeSolution sol = ne_picard_solve(coeffs, cfg.initial_law(), art.seed, cfg.ne(N));
    for (std::size_t it = 0; it < sol.residual_history.size(); ++it)
      out << N << "," << it + 1 << "," << fmt(sol.residual_history[it]) << "\n";
    sum << "N = " << N << ": converged = " << (sol.converged ? 1 : 0)
        << ", iterations = " << sol.iterations
        << ", foc_residual = " << fmt(ne_residual(coeffs, sol)) << "\n";
    all_converged = all_converged && sol.converged;
  }
  if (!all_converged) {
    *error = "an N-player solve did not converge (see nplayer_summary.txt)";
    return 2;
  }
  return 0;
}

int run_convergence(const RunConfig& cfg, const Artifacts& art, std::string* error) {
  const CoefficientSet coeffs = lq_coefficients(cfg.lq(), cfg.grid());
  const InitialLaw mu0 = cfg.initial_law();

  // One mean-field solve per common path serves every N: the copies for N
  // players are the first N auxiliary particles of each world.
  const MfeSolution aux = solve_mfe(make_reduced_model(coeffs), mu0, art.seed,
                                    cfg.mkv(cfg.repetitions, cfg.m_aux));
  if (!aux.converged) {
    *error = "mean-field solve did not converge";
    return 2;
  }

  std::vector<GapReport> reports;
  std::ofstream out = art.open("rates.csv");
  out << "N,state_gap,control_gap,EB,ESigma,ESigma0,EF,EG\n";
  for (Eigen::Index N : cfg.N_list) {
    const CoupledCopies copies = build_coupled_copies(aux, N);
    const NeSolution ne = ne_picard_solve(coeffs, mu0, art.seed, cfg.ne(N));
    if (!ne.converged) {
      *error = "N-player solve did not converge at N = " + std::to_string(N);
      return 2;
    }
    const GapReport rep = gap_metrics(coeffs, copies, ne);
    reports.push_back(rep);
    out << N << "," << fmt(rep.state_gap) << "," << fmt(rep.control_gap) << "," << fmt(rep.EB)
        << "," << fmt(rep.ESigma) << "," << fmt(rep.ESigma0) << "," << fmt(rep.EF) << ","
        << fmt(rep.EG) << "\n";
  }

  std::ofstream sum = art.open("rate_fit.txt");
  for (const auto& [kind, label] :
       {std::pair{GapKind::State, "state"}, std::pair{GapKind::Control, "control"}}) {
    try {
      const RateFit fit = rate_fit(reports, kind);
      sum << label << ": slope = " << fmt(fit.slope) << ", intercept = " << fmt(fit.intercept)
          << ", r2 = " << fmt(fit.r2) << "\n";
    } catch (const ConfigError& e) {
      sum << label << ": fit unavailable (" << e.what() << ")\n";
    }
  }
  return 0;
}

int run_oracle_riccati(const RunConfig& cfg, const Artifacts& art, std::string*) {
  const RiccatiSolution sol = riccati_oracle(cfg.lq(), cfg.grid());
  const TimeGrid grid = cfg.grid();

  std::ofstream out = art.open("riccati.csv");
  out << "step,t,K,gain\n";
  for (std::size_t k = 0; k <= grid.steps; ++k)
    out << k << "," << fmt(grid.t(k)) << "," << fmt(sol.K[k](0, 0)) << ","
        << fmt(k < grid.steps ? sol.gain[k](0, 0) : 0.0) << "\n";

  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, cfg.x0);
  std::ofstream sum = art.open("riccati_summary.txt");
  sum << "K0 = " << fmt(sol.K.front()(0, 0)) << "\n";
  sum << "value = " << fmt(sol.value(x0)) << "\n";
  std::printf("K0 = %s\nvalue = %s\n", fmt(sol.K.front()(0, 0)).c_str(),
              fmt(sol.value(x0)).c_str());
  return 0;
}

}  // namespace

int run_subcommand(const std::string& name, const RunOptions& opts, std::string* error) {
  std::string scratch;
  if (!error) error = &scratch;
  error->clear();
  const auto t_start = std::chrono::steady_clock::now();
  try {
    const RunConfig cfg = parse_config(opts.config_path);

    Artifacts art;
    art.subcommand = name;
    art.seed = opts.seed_override ? opts.seed : cfg.seed;
    art.hash = config_hash(cfg.raw_text);
    art.dir = opts.out_dir.empty() ? fs::path(cfg.directory) : fs::path(opts.out_dir);
    fs::create_directories(art.dir);

    int rc;
    if (name == "check-monotonicity")
      rc = run_monotonicity(cfg, art, error);
    else if (name == "solve-mfg")
      rc = run_solve_mfg(cfg, art, error);
    else if (name == "solve-nplayer")
      rc = run_solve_nplayer(cfg, art, error);
    else if (name == "convergence")
      rc = run_convergence(cfg, art, error);
    else if (name == "oracle-riccati")
      rc = run_oracle_riccati(cfg, art, error);
    else
      throw ConfigError("unknown subcommand: " + name);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::ofstream manifest = art.open("run-manifest.txt");
    manifest << "version = " << kVersion << "\n";
    manifest << "seed = " << art.seed << "\n";
    manifest << "threads = " << opts.threads << "\n";
    manifest << "exit_code = " << rc << "\n";
    manifest << "wall_time_seconds = " << fmt(wall) << "\n";
    manifest << "config_path = " << opts.config_path << "\n";
    manifest << "config_echo_begin\n";
    std::istringstream echo(cfg.raw_text);
    std::string line;
    while (std::getline(echo, line)) manifest << "  " << line << "\n";
    manifest << "config_echo_end\n";
    return rc;
  } catch (const ConfigError& e) {
    *error = e.what();
    return 1;
  } catch (const UnsupportedError& e) {
    *error = e.what();
    return 1;
  } catch (const SolverError& e) {
    *error = e.what();
    return 2;
  } catch (const std::exception& e) {
    *error = e.what();
    return 2;
  }
}

}  // namespace mfg
