#pragma once

#include <Eigen/Dense>

namespace mfg {

// One point of the Hamiltonian system: state x, adjoint y, martingale
// integrands z (idiosyncratic) and z0 (common). z and z0 are n x d.
struct Theta {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::MatrixXd z;
  Eigen::MatrixXd z0;

  static Theta zero(Eigen::Index n, Eigen::Index d) {
    return Theta{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n),
                 Eigen::MatrixXd::Zero(n, d), Eigen::MatrixXd::Zero(n, d)};
  }
};

// A particle cloud of theta points, stored row-per-particle. Z and Z0 hold the
// column-major flattening of each particle's n x d matrix, so column j*n+i is
// entry (i, j).
struct ThetaCloud {
  Eigen::MatrixXd X;   // M x n
  Eigen::MatrixXd Y;   // M x n
  Eigen::MatrixXd Z;   // M x (n*d)
  Eigen::MatrixXd Z0;  // M x (n*d)

  Eigen::Index size() const { return X.rows(); }

  static ThetaCloud zero(Eigen::Index m, Eigen::Index n, Eigen::Index d) {
    return ThetaCloud{Eigen::MatrixXd::Zero(m, n), Eigen::MatrixXd::Zero(m, n),
                      Eigen::MatrixXd::Zero(m, n * d), Eigen::MatrixXd::Zero(m, n * d)};
  }

  Theta point(Eigen::Index m, Eigen::Index n, Eigen::Index d) const {
    Theta th;
    th.x = X.row(m).transpose();
    th.y = Y.row(m).transpose();
    th.z.resize(n, d);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = 0; i < n; ++i) th.z(i, j) = Z(m, j * n + i);
    th.z0.resize(n, d);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = 0; i < n; ++i) th.z0(i, j) = Z0(m, j * n + i);
    return th;
  }

  void set_point(Eigen::Index m, const Theta& th) {
    const Eigen::Index n = th.x.size(), d = th.z.cols();
    X.row(m) = th.x.transpose();
    Y.row(m) = th.y.transpose();
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = 0; i < n; ++i) {
        Z(m, j * n + i) = th.z(i, j);
        Z0(m, j * n + i) = th.z0(i, j);
      }
  }
};

inline Eigen::VectorXd flatten_matrix(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

inline Eigen::MatrixXd unflatten_matrix(const Eigen::VectorXd& v, Eigen::Index n,
                                        Eigen::Index d) {
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), n, d);
}

}  // namespace mfg
