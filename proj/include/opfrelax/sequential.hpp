#pragma once

#include "opfrelax/relax.hpp"

namespace opfr {

struct RoundRecord {
  int round = 0;           // 1-based
  double cost = 0.0;       // h(p) at the recovered point, native units
  double penalty = 0.0;    // μ·κ at the solved lifted point
  double rank_gap = 0.0;   // tr{W − vv*}
  double max_violation = 0.0;
  bool feasible = false;   // rank gap < gap tol AND residuals < residual tol
  bool gap_only_feasible = false;  // the rank-gap test alone
  SolveStatus status = SolveStatus::kNumericalFailure;
  double solve_gap = 0.0;  // relative duality gap the solver achieved
  double seconds = 0.0;
};

struct StoppingRule {
  int max_rounds = 20;
  double plateau_rel = 1e-4;        // relative improvement below 0.01% stops
  bool stop_at_first_feasible = false;
  double rank_gap_tol = 1e-7;
  double residual_tol = 1e-6;
};

struct SequentialOptions {
  ConeKind kind = ConeKind::PARABOLIC;
  double mu = 1e3;
  double alpha = 0.0;
  double eta = 0.0;
  StoppingRule stopping;
  bool escalate_mu = false;  // ×10 after an infeasible round, at most 3 times
  AssembleOptions assemble;
  SolverSettings solver;
};

struct RunReport {
  std::vector<RoundRecord> rounds;
  int k_f = -1;  // first feasible round, -1 if never
  int k_p = -1;  // plateau round (the stopping round)
  double c_f = 0.0, c_p = 0.0;
  // gaps in percent, NaN when the reference value is absent
  double gfb, gfs, gpb, gps;
  bool ever_feasible = false;
  OperatingPoint final_point;
  std::string stop_reason;
  std::vector<std::string> warnings;  // from the first-round assembly (dual-interior check)
  std::string csv() const;          // one row per round
  std::string summary_row(const std::string& case_name, ConeKind kind, double mu,
                          double alpha) const;  // μ, α, k_f, GFB%, GFS%, k_p, GPB%, GPS%
};

// Sequential penalized relaxation: assemble with κ centered at x0, solve, recover,
// recenter, repeat until the stopping rule fires. c_b/c_s are reference costs
// (best known / unpenalized SDP bound) used only for the gap columns.
RunReport run(const Network& net, const AdmittanceSet& adm, const SequentialOptions& opts,
              const OperatingPoint* x0 = nullptr,  // flat start when absent
              const double* c_b = nullptr, const double* c_s = nullptr);

// reads (v, p, q, s⃗, s⃖) from a penalized solution; throws on LB-only programs
OperatingPoint recover(const Network& net, const ConicProgram& prog,
                       const ConicSolution& sol);

double rank_gap(const ConicProgram& prog, const ConicSolution& sol);

}  // namespace opfr
