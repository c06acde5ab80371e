#include "mfglab/monotonicity.hpp"

#include <cmath>
#include <limits>

#include "mfglab/errors.hpp"
#include "mfglab/reduced_model.hpp"
#include "mfglab/rng.hpp"

namespace mfg {

namespace {

double paired_gap(const Eigen::MatrixXd& num_rows, const Eigen::MatrixXd& dX) {
  const double num = num_rows.sum() / static_cast<double>(num_rows.rows());
  const double den = dX.squaredNorm() / static_cast<double>(dX.rows());
  if (den > 0.0) return num / den;
  if (num == 0.0) return 0.0;
  return num > 0.0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
}

}  // namespace

double drift_monotonicity_gap(const CoefficientSet& coeffs, std::size_t node,
                              const ThetaCloud& first, const ThetaCloud& second) {
  if (first.size() == 0 || first.size() != second.size())
    throw ConfigError("drift_monotonicity_gap: clouds must be nonempty and paired");
  const auto model = make_reduced_model(coeffs);

  Eigen::MatrixXd B1, S1, S01, F1, B2, S2, S02, F2;
  model->eval(node, first, first, &B1, &S1, &S01, &F1);
  model->eval(node, second, second, &B2, &S2, &S02, &F2);

  const Eigen::MatrixXd dX = first.X - second.X;
  Eigen::MatrixXd num = -(dX.cwiseProduct(F1 - F2));
  num += (first.Y - second.Y).cwiseProduct(B1 - B2);
  num += (first.Z - second.Z).cwiseProduct(S1 - S2);
  num += (first.Z0 - second.Z0).cwiseProduct(S01 - S02);
  return paired_gap(num, dX);
}

double terminal_monotonicity_gap(const CoefficientSet& coeffs, const Eigen::MatrixXd& firstX,
                                 const Eigen::MatrixXd& secondX) {
  if (firstX.rows() == 0 || firstX.rows() != secondX.rows())
    throw ConfigError("terminal_monotonicity_gap: clouds must be nonempty and paired");
  const auto model = make_reduced_model(coeffs);

  Eigen::MatrixXd G1, G2;
  model->terminal(firstX, firstX, G1);
  model->terminal(secondX, secondX, G2);

  const Eigen::MatrixXd dX = firstX - secondX;
  return paired_gap(dX.cwiseProduct(G1 - G2), dX);
}

namespace {

// Gaussian theta cloud with a common scale; `slot` separates the two clouds
// of a pair inside one trial's stream.
ThetaCloud sample_cloud(std::uint64_t key, Eigen::Index m, Eigen::Index n, Eigen::Index d,
                        double scale, std::uint64_t slot) {
  ThetaCloud c = ThetaCloud::zero(m, n, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      c.X(i, j) = scale * rng::standard_normal(key, i, slot * 4 + 0, static_cast<std::uint32_t>(j));
      c.Y(i, j) = scale * rng::standard_normal(key, i, slot * 4 + 1, static_cast<std::uint32_t>(j));
    }
    for (Eigen::Index j = 0; j < n * d; ++j) {
      c.Z(i, j) = scale * rng::standard_normal(key, i, slot * 4 + 2, static_cast<std::uint32_t>(j));
      c.Z0(i, j) =
          scale * rng::standard_normal(key, i, slot * 4 + 3, static_cast<std::uint32_t>(j));
    }
  }
  return c;
}

}  // namespace

MonotonicityReport certify(const CoefficientSet& coeffs, std::size_t trials,
                           Eigen::Index max_atoms, std::uint64_t seed) {
  if (trials == 0) throw ConfigError("certify: trials must be >= 1");
  if (max_atoms < 2) throw ConfigError("certify: need at least 2 atoms per cloud");

  MonotonicityReport report;
  report.trials = trials;
  report.min_drift_margin = std::numeric_limits<double>::infinity();
  report.min_terminal_margin = std::numeric_limits<double>::infinity();

  const std::size_t steps = coeffs.grid.steps;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t key = rng::stream_key(seed, rng::Role::Cloud, trial);
    const double u_atoms = rng::uniform_unit(key, 0, 0, 0);
    const double u_node = rng::uniform_unit(key, 0, 0, 1);
    const double u_scale1 = rng::uniform_unit(key, 0, 0, 2);
    const double u_scale2 = rng::uniform_unit(key, 0, 0, 3);
    const Eigen::Index m =
        2 + static_cast<Eigen::Index>(u_atoms * static_cast<double>(max_atoms - 1));
    const std::size_t node =
        std::min<std::size_t>(steps - 1, static_cast<std::size_t>(u_node * steps));
    const double s1 = 0.1 * std::pow(100.0, u_scale1);  // log-uniform in [0.1, 10]
    const double s2 = 0.1 * std::pow(100.0, u_scale2);

    const ThetaCloud first = sample_cloud(key, m, coeffs.n, coeffs.d, s1, 0);
    const ThetaCloud second = sample_cloud(key, m, coeffs.n, coeffs.d, s2, 1);

    const double drift_margin = -drift_monotonicity_gap(coeffs, node, first, second);
    if (drift_margin < report.min_drift_margin) {
      report.min_drift_margin = drift_margin;
      report.drift_witness = DriftWitness{node, first, second};
    }

    const double terminal_margin = terminal_monotonicity_gap(coeffs, first.X, second.X);
    if (terminal_margin < report.min_terminal_margin) {
      report.min_terminal_margin = terminal_margin;
      report.terminal_witness = TerminalWitness{first.X, second.X};
    }
  }

  report.estimated_CH = report.min_drift_margin;
  report.estimated_CG = report.min_terminal_margin;
  report.passed = report.estimated_CH > 0.0 && report.estimated_CG > 0.0;
  return report;
}

}  // namespace mfg
