#pragma once

#include "opfrelax/relax.hpp"

namespace opfr {

// columns ordered [Re v | Im v | p | q | Re s⃗ | Im s⃗ | Re s⃖ | Im s⃖]
struct JacobianBundle {
  // rows: [Re balance | Im balance | Re from-def | Im from-def | Re to-def | Im to-def],
  // i.e. real/imag split of split_equality_residuals in order
  Eigen::MatrixXd J_eq;      // 2·nb + 4·nl rows
  Eigen::MatrixXd J1;        // nb rows, |v_k|² gradients
  Eigen::MatrixXd J2, J3;    // ng rows each, p / q box gradients
  Eigen::MatrixXd J4_from, J4_to;  // nl rows each, |s|² gradients
};

JacobianBundle jacobians(const Network& net, const AdmittanceSet& adm,
                         const OperatingPoint& x);

// equality constraints with s⃗, s⃖ independent: balance routes flows through s,
// keeping only the shunt's direct v-dependence; then the two flow definitions
CVec split_equality_residuals(const Network& net, const AdmittanceSet& adm,
                              const OperatingPoint& x);

struct ActiveSets {
  std::vector<int> b1_lo, b1_hi;      // buses at voltage bounds
  std::vector<int> b2_lo, b2_hi;      // generators at p bounds
  std::vector<int> b3_lo, b3_hi;      // generators at q bounds
  std::vector<int> b4_from, b4_to;    // lines at flow limits
  double delta = 0.0;
};

// delta = 0 is exact activation; delta > 0 applies the widened inequalities
ActiveSets active_sets(const Network& net, const OperatingPoint& x, double delta);

struct SensitivityReport {
  double P = 0.0;      // network sensitivity measure
  double sigma = 0.0;  // min singular value of the stacked active Jacobian
  bool licq = false;   // full row rank at tolerance 1e-8·σ_max
  bool bound_checked = false;  // Theorem-2-style matrix bound evaluated
  bool mu_bound_ok = false;    // λ_max(M) ≤ σ/(4δP)
  double bound_rhs = 0.0;
  double lambda_max = 0.0;     // largest eigenvalue of M when checked
  int active_rows = 0;         // active inequality gradient rows stacked under J_eq
  std::string text() const;
};

// delta widens the active sets; M (with delta > 0) turns on the matrix bound check
SensitivityReport licq_report(const Network& net, const AdmittanceSet& adm,
                              const OperatingPoint& x, double delta,
                              const SpCMat* M = nullptr);

// data-only measure: 2·nb + 2·ne + ‖y_sh‖₂ + Σ_l charging terms + √2·Σ_l entry norms
double sensitivity_measure(const Network& net, const AdmittanceSet& adm);

// Def.-4-style weighted distance evaluated at a witness x_feas (an upper bound)
double feasibility_distance_upper(const Network& net, const AdmittanceSet& adm,
                                  const OperatingPoint& x0, const OperatingPoint& x_feas,
                                  const SpCMat& M);

}  // namespace opfr
