#pragma once

#include <Eigen/Dense>
#include <memory>

#include "mfglab/model.hpp"
#include "mfglab/theta.hpp"
#include "mfglab/time_grid.hpp"

namespace mfg {

// Cloud-level view of the reduced coefficients (B, Sigma, Sigma0, F, G) of the
// conditional McKean-Vlasov system. `atoms` are the points to evaluate at;
// `law` is the cloud representing the conditional law of theta in the same
// world (often the same cloud). Sigma blocks use the column-major flattening
// of ThetaCloud.
class ReducedModel {
 public:
  virtual ~ReducedModel() = default;

  virtual Eigen::Index n() const = 0;
  virtual Eigen::Index l() const = 0;
  virtual Eigen::Index d() const = 0;
  virtual const TimeGrid& grid() const = 0;

  // Any subset of the outputs may be requested; pass nullptr to skip.
  // B, F: M x n; Sigma, Sigma0: M x (n*d).
  virtual void eval(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
                    Eigen::MatrixXd* B, Eigen::MatrixXd* Sigma, Eigen::MatrixXd* Sigma0,
                    Eigen::MatrixXd* F) const = 0;

  // G = d_x g(X_i, law of X). X, G: M x n; lawX: cloud of states.
  virtual void terminal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& lawX,
                        Eigen::MatrixXd& G) const = 0;

  // alpha_i = Lambda(theta_i, mu, zeta_i), M x l. zeta may be nullptr (zero).
  virtual void control(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
                       const Eigen::MatrixXd* zeta, Eigen::MatrixXd& alpha) const = 0;
};

// Closed-form LQ evaluation, vectorized over the cloud.
class LqReducedModel : public ReducedModel {
 public:
  LqReducedModel(std::shared_ptr<const LQCoefficients> lq, TimeGrid grid);

  Eigen::Index n() const override { return lq_->n; }
  Eigen::Index l() const override { return lq_->l; }
  Eigen::Index d() const override { return lq_->d; }
  const TimeGrid& grid() const override { return grid_; }

  void eval(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law, Eigen::MatrixXd* B,
            Eigen::MatrixXd* Sigma, Eigen::MatrixXd* Sigma0, Eigen::MatrixXd* F) const override;
  void terminal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& lawX,
                Eigen::MatrixXd& G) const override;
  void control(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
               const Eigen::MatrixXd* zeta, Eigen::MatrixXd& alpha) const override;

  const LQCoefficients& lq() const { return *lq_; }

 private:
  std::shared_ptr<const LQCoefficients> lq_;
  TimeGrid grid_;
};

// Point-by-point evaluation through the generic coefficient slots; the
// reference implementation the LQ fast path is checked against.
class GenericReducedModel : public ReducedModel {
 public:
  GenericReducedModel(CoefficientSet coeffs);

  Eigen::Index n() const override { return coeffs_.n; }
  Eigen::Index l() const override { return coeffs_.l; }
  Eigen::Index d() const override { return coeffs_.d; }
  const TimeGrid& grid() const override { return coeffs_.grid; }

  void eval(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law, Eigen::MatrixXd* B,
            Eigen::MatrixXd* Sigma, Eigen::MatrixXd* Sigma0, Eigen::MatrixXd* F) const override;
  void terminal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& lawX,
                Eigen::MatrixXd& G) const override;
  void control(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
               const Eigen::MatrixXd* zeta, Eigen::MatrixXd& alpha) const override;

  const CoefficientSet& coeffs() const { return coeffs_; }

 private:
  CoefficientSet coeffs_;
};

// Homotopy between a trivially solvable system and the target one:
//   B_delta = delta*B - (1-delta)*y,   Sigma_delta  = delta*Sigma  - (1-delta)*z,
//   F_delta = delta*F + (1-delta)*x,   Sigma0_delta = delta*Sigma0 - (1-delta)*z0,
//   G_delta = delta*G + (1-delta)*x.
class DeltaReducedModel : public ReducedModel {
 public:
  DeltaReducedModel(std::shared_ptr<const ReducedModel> base, double delta)
      : base_(std::move(base)), delta_(delta) {}

  Eigen::Index n() const override { return base_->n(); }
  Eigen::Index l() const override { return base_->l(); }
  Eigen::Index d() const override { return base_->d(); }
  const TimeGrid& grid() const override { return base_->grid(); }
  double delta() const { return delta_; }

  void eval(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law, Eigen::MatrixXd* B,
            Eigen::MatrixXd* Sigma, Eigen::MatrixXd* Sigma0, Eigen::MatrixXd* F) const override;
  void terminal(const Eigen::MatrixXd& X, const Eigen::MatrixXd& lawX,
                Eigen::MatrixXd& G) const override;
  void control(std::size_t node, const ThetaCloud& atoms, const ThetaCloud& law,
               const Eigen::MatrixXd* zeta, Eigen::MatrixXd& alpha) const override {
    base_->control(node, atoms, law, zeta, alpha);
  }

 private:
  std::shared_ptr<const ReducedModel> base_;
  double delta_;
};

// Chooses the LQ fast path when the coefficient set carries the LQ model.
std::shared_ptr<const ReducedModel> make_reduced_model(const CoefficientSet& coeffs);

}  // namespace mfg
