#include "mfglab/measure.hpp"

#include <algorithm>
#include <cmath>

#include "mfglab/errors.hpp"

namespace mfg {

double second_moment(const EmpiricalMeasure& mu) {
  if (mu.atoms() == 0) return 0.0;
  return mu.points.squaredNorm() / static_cast<double>(mu.atoms());
}

double wasserstein2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != 1 || nu.dim() != 1)
    throw UnsupportedError("wasserstein2_1d: exact W2 requires 1-D measures");
  if (mu.atoms() != nu.atoms())
    throw UnsupportedError("wasserstein2_1d: atom counts must match");
  std::vector<double> a(mu.points.data(), mu.points.data() + mu.atoms());
  std::vector<double> b(nu.points.data(), nu.points.data() + nu.atoms());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

EmpiricalMeasure marginal(const EmpiricalMeasure& xi, const std::vector<Eigen::Index>& coords) {
  EmpiricalMeasure out;
  out.points.resize(xi.atoms(), static_cast<Eigen::Index>(coords.size()));
  for (std::size_t c = 0; c < coords.size(); ++c) {
    if (coords[c] < 0 || coords[c] >= xi.dim())
      throw IndexError("marginal: coordinate index out of range");
    out.points.col(static_cast<Eigen::Index>(c)) = xi.points.col(coords[c]);
  }
  return out;
}

Eigen::VectorXd pack_theta(const Theta& th) {
  const Eigen::Index n = th.x.size(), d = th.z.cols();
  Eigen::VectorXd row(2 * n + 2 * n * d);
  row.head(n) = th.x;
  row.segment(n, n) = th.y;
  row.segment(2 * n, n * d) = flatten_matrix(th.z);
  row.tail(n * d) = flatten_matrix(th.z0);
  return row;
}

Theta unpack_theta(const Eigen::VectorXd& row, Eigen::Index n, Eigen::Index d) {
  Theta th;
  th.x = row.head(n);
  th.y = row.segment(n, n);
  th.z = unflatten_matrix(row.segment(2 * n, n * d), n, d);
  th.z0 = unflatten_matrix(row.tail(n * d), n, d);
  return th;
}

EmpiricalMeasure theta_measure(const ThetaCloud& cloud) {
  EmpiricalMeasure xi;
  const Eigen::Index m = cloud.size();
  xi.points.resize(m, cloud.X.cols() + cloud.Y.cols() + cloud.Z.cols() + cloud.Z0.cols());
  xi.points << cloud.X, cloud.Y, cloud.Z, cloud.Z0;
  return xi;
}

ThetaCloud theta_cloud_from_measure(const EmpiricalMeasure& xi, Eigen::Index n, Eigen::Index d) {
  if (xi.dim() != 2 * n + 2 * n * d)
    throw UnsupportedError("theta cloud: measure atoms are not theta tuples");
  ThetaCloud c;
  c.X = xi.points.leftCols(n);
  c.Y = xi.points.middleCols(n, n);
  c.Z = xi.points.middleCols(2 * n, n * d);
  c.Z0 = xi.points.rightCols(n * d);
  return c;
}

EmpiricalMeasure conditional_law(const ThetaCloud& cloud) {
  if (cloud.size() == 0) throw ConfigError("conditional_law: empty world");
  return theta_measure(cloud);
}

EmpiricalMeasure pushforward_phi(const EmpiricalMeasure& xi, Eigen::Index n, Eigen::Index d,
                                 const std::function<Eigen::VectorXd(const Theta&)>& lambda_eval) {
  if (xi.atoms() == 0) throw ConfigError("pushforward_phi: empty measure");
  const Eigen::Index m = xi.atoms();
  Eigen::VectorXd a0 = lambda_eval(unpack_theta(xi.points.row(0).transpose(), n, d));
  EmpiricalMeasure out;
  out.points.resize(m, n + a0.size());
  out.points.row(0).head(n) = xi.points.row(0).head(n);
  out.points.row(0).tail(a0.size()) = a0.transpose();
  for (Eigen::Index i = 1; i < m; ++i) {
    const Theta th = unpack_theta(xi.points.row(i).transpose(), n, d);
    out.points.row(i).head(n) = th.x.transpose();
    out.points.row(i).tail(a0.size()) = lambda_eval(th).transpose();
  }
  return out;
}

}  // namespace mfg
