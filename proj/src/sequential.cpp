#include "opfrelax/sequential.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace opfr {

namespace {

std::string fmt_pct(double g) {
  if (std::isnan(g)) return "-";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << g;
  return os.str();
}

}  // namespace

std::string RunReport::csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "round,cost,penalty,rank_gap,max_violation,feasible,status,seconds\n";
  for (const RoundRecord& r : rounds)
    os << r.round << ',' << r.cost << ',' << r.penalty << ',' << r.rank_gap << ','
       << r.max_violation << ',' << (r.feasible ? 1 : 0) << ',' << to_string(r.status)
       << ',' << r.seconds << '\n';
  return os.str();
}

std::string RunReport::summary_row(const std::string& case_name, ConeKind kind,
                                   double mu, double alpha) const {
  std::ostringstream os;
  os.precision(6);
  os << case_name << ',' << to_string(kind) << ',' << mu << ',' << alpha << ','
     << (k_f > 0 ? std::to_string(k_f) : std::string("-")) << ',' << fmt_pct(gfb)
     << ',' << fmt_pct(gfs) << ',' << (k_p > 0 ? std::to_string(k_p) : std::string("-"))
     << ',' << fmt_pct(gpb) << ',' << fmt_pct(gps);
  return os.str();
}

OperatingPoint recover(const Network& net, const ConicProgram& prog,
                       const ConicSolution& sol) {
  const VarMap& vm = prog.vars;
  if (vm.v_re.empty())
    throw std::logic_error(
        "recover: lower-bound relaxations carry no voltage variables; solve a "
        "penalized program");
  if (sol.x.size() != prog.num_vars())
    throw std::invalid_argument("recover: solution does not match the program");

  const int nb = net.nb();
  const int ng = net.ng();
  const int nl = net.nl();
  OperatingPoint x;
  x.v.resize(nb);
  for (int k = 0; k < nb; ++k)
    x.v[k] = {sol.x[vm.v_re[k]], sol.x[vm.v_im[k]]};
  x.p.resize(ng);
  x.q.resize(ng);
  for (int g = 0; g < ng; ++g) {
    x.p[g] = sol.x[vm.p[g]];
    x.q[g] = sol.x[vm.q[g]];
  }
  x.s_from.resize(nl);
  x.s_to.resize(nl);
  for (int l = 0; l < nl; ++l) {
    x.s_from[l] = {sol.x[vm.s_from_re[l]], sol.x[vm.s_from_im[l]]};
    x.s_to[l] = {sol.x[vm.s_to_re[l]], sol.x[vm.s_to_im[l]]};
  }
  return x;
}

double rank_gap(const ConicProgram& prog, const ConicSolution& sol) {
  const VarMap& vm = prog.vars;
  if (vm.v_re.empty())
    throw std::logic_error("rank_gap: program has no voltage variables");
  double g = 0.0;
  for (size_t k = 0; k < vm.w_diag.size(); ++k) {
    const double re = sol.x[vm.v_re[k]], im = sol.x[vm.v_im[k]];
    g += sol.x[vm.w_diag[k]] - (re * re + im * im);
  }
  return g;
}

RunReport run(const Network& net, const AdmittanceSet& adm, const SequentialOptions& opts,
              const OperatingPoint* x0, const double* c_b, const double* c_s) {
  if (!(opts.mu > 0)) throw std::invalid_argument("sequential: mu must be positive");
  if (opts.stopping.max_rounds < 1)
    throw std::invalid_argument("sequential: need at least one round");

  RunReport rep;
  rep.gfb = rep.gfs = rep.gpb = rep.gps = std::nan("");
  PenaltySpec spec = penalty_matrix(net, adm, opts.alpha, opts.eta);
  spec.mu = opts.mu;

  OperatingPoint x_cur = x0 ? *x0 : flat_start(net, adm);
  rep.final_point = x_cur;
  double prev_cost = std::nan("");
  int escalations = 0;
  rep.stop_reason = "round limit";

  for (int round = 1; round <= opts.stopping.max_rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    spec.x0 = x_cur;
    const ConicProgram prog = assemble(net, adm, opts.kind, &spec, opts.assemble);
    if (round == 1) rep.warnings = prog.warnings;
    const ConicSolution sol = solve(prog, opts.solver);

    RoundRecord rec;
    rec.round = round;
    rec.status = sol.status;
    if (sol.status == SolveStatus::kPrimalInfeasible ||
        sol.status == SolveStatus::kDualInfeasible) {
      // the lifted feasible set contains every lift of a feasible point, so
      // this means the case itself is infeasible (or the solve went wrong)
      rec.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rep.rounds.push_back(rec);
      rep.stop_reason = "relaxation reported infeasible";
      break;
    }
    if (!sol.x.allFinite() || sol.x.size() != prog.num_vars()) {
      rec.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rep.rounds.push_back(rec);
      rep.stop_reason = "solver returned an unusable iterate";
      break;
    }

    const OperatingPoint next = recover(net, prog, sol);
    const LiftedPoint lp = extract(net, prog, sol.x);
    rec.cost = objective(net, next.p);
    rec.penalty = spec.mu * penalty_value(spec, lp);
    rec.rank_gap = rank_gap(prog, sol);
    rec.max_violation = residuals(net, adm, next).max_violation;
    rec.gap_only_feasible = rec.rank_gap <= opts.stopping.rank_gap_tol;
    rec.feasible =
        rec.gap_only_feasible && rec.max_violation <= opts.stopping.residual_tol;
    rec.solve_gap = sol.res_gap;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.rounds.push_back(rec);
    rep.final_point = next;
    rep.k_p = round;
    rep.c_p = rec.cost;
    if (rec.feasible && rep.k_f < 0) {
      rep.k_f = round;
      rep.c_f = rec.cost;
      rep.ever_feasible = true;
    }

    if (opts.stopping.stop_at_first_feasible && rec.feasible) {
      rep.stop_reason = "first feasible point";
      break;
    }
    if (round >= 2 && std::abs(rec.cost - prev_cost) <=
                          opts.stopping.plateau_rel * (1.0 + std::abs(rec.cost))) {
      rep.stop_reason = "cost plateau";
      break;
    }
    if (!rec.feasible && opts.escalate_mu && escalations < 3) {
      spec.mu *= 10.0;
      ++escalations;
    }
    prev_cost = rec.cost;
    x_cur = next;
  }

  // gaps are quoted against the achieved cost, not the reference
  if (rep.k_f > 0) {
    if (c_b) rep.gfb = 100.0 * (rep.c_f - *c_b) / rep.c_f;
    if (c_s) rep.gfs = 100.0 * (rep.c_f - *c_s) / rep.c_f;
  }
  if (rep.k_p > 0) {
    if (c_b) rep.gpb = 100.0 * (rep.c_p - *c_b) / rep.c_p;
    if (c_s) rep.gps = 100.0 * (rep.c_p - *c_s) / rep.c_p;
  }
  return rep;
}

}  // namespace opfr
