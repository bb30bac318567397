#include "opfrelax/opf.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace opfr {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

double objective(const Network& net, const Vec& p) {
  if (p.size() != net.ng()) fail("objective: dimension mismatch");
  double h = 0.0;
  for (int g = 0; g < net.ng(); ++g) {
    const double pg = p[g] * net.base_mva;  // cost coefficients are per MW
    h += net.gens[g].c0 + net.gens[g].c1 * pg + net.gens[g].c2 * pg * pg;
  }
  return h;
}

ConstraintResiduals residuals(const Network& net, const AdmittanceSet& adm,
                              const OperatingPoint& x) {
  const int nb = net.nb(), ng = net.ng(), nl = net.nl();
  if (x.v.size() != nb || x.p.size() != ng || x.q.size() != ng ||
      x.s_from.size() != nl || x.s_to.size() != nl)
    fail("residuals: dimension mismatch");

  ConstraintResiduals r;
  CVec inj = adm.Y * x.v;
  r.balance.resize(nb);
  for (int k = 0; k < nb; ++k)
    r.balance[k] = net.buses[k].demand + x.v[k] * std::conj(inj[k]);
  CVec sg = x.p + cx(0, 1) * x.q;
  r.balance -= adm.Cg.transpose() * sg;

  auto [sf, st] = branch_flow(net, adm, x.v);
  r.flow_def_from = sf - x.s_from;
  r.flow_def_to = st - x.s_to;

  r.vmag_lo.resize(nb);
  r.vmag_hi.resize(nb);
  for (int k = 0; k < nb; ++k) {
    const double m = std::abs(x.v[k]);
    r.vmag_lo[k] = net.buses[k].vmin - m;
    r.vmag_hi[k] = m - net.buses[k].vmax;
  }

  r.p_lo.resize(ng);
  r.p_hi.resize(ng);
  r.q_lo.resize(ng);
  r.q_hi.resize(ng);
  for (int g = 0; g < ng; ++g) {
    r.p_lo[g] = net.gens[g].pmin - x.p[g];
    r.p_hi[g] = x.p[g] - net.gens[g].pmax;
    r.q_lo[g] = net.gens[g].qmin - x.q[g];
    r.q_hi[g] = x.q[g] - net.gens[g].qmax;
  }

  r.flow_from.resize(nl);
  r.flow_to.resize(nl);
  for (int l = 0; l < nl; ++l) {
    if (net.branches[l].limited()) {
      const double cap = net.branches[l].f_max * net.branches[l].f_max;
      r.flow_from[l] = std::norm(x.s_from[l]) - cap;
      r.flow_to[l] = std::norm(x.s_to[l]) - cap;
    } else {
      r.flow_from[l] = -kInf;
      r.flow_to[l] = -kInf;
    }
  }

  double worst = 0.0;
  for (int k = 0; k < nb; ++k) worst = std::max(worst, std::abs(r.balance[k]));
  for (int l = 0; l < nl; ++l) {
    worst = std::max(worst, std::abs(r.flow_def_from[l]));
    worst = std::max(worst, std::abs(r.flow_def_to[l]));
  }
  auto up = [&worst](const Vec& vals) {
    for (int i = 0; i < vals.size(); ++i)
      if (vals[i] > worst) worst = vals[i];
  };
  up(r.vmag_lo);
  up(r.vmag_hi);
  up(r.p_lo);
  up(r.p_hi);
  up(r.q_lo);
  up(r.q_hi);
  up(r.flow_from);
  up(r.flow_to);
  r.max_violation = worst;
  return r;
}

bool is_feasible(const Network& net, const AdmittanceSet& adm,
                 const OperatingPoint& x, double tol) {
  return residuals(net, adm, x).max_violation <= tol;
}

OperatingPoint flat_start(const Network& net, const AdmittanceSet& adm) {
  OperatingPoint x;
  x.v = CVec::Ones(net.nb());
  x.p.resize(net.ng());
  for (int g = 0; g < net.ng(); ++g) x.p[g] = net.gens[g].pmin;
  x.q = Vec::Zero(net.ng());
  std::tie(x.s_from, x.s_to) = branch_flow(net, adm, x.v);
  return x;
}

OperatingPoint rotate_for_display(const Network& net, OperatingPoint x) {
  if (net.ng() == 0 || x.v.size() == 0) return x;
  const cx ref = x.v[net.gens[0].bus];
  if (std::abs(ref) == 0.0) return x;
  x.v *= std::conj(ref) / std::abs(ref);  // flows and |v| are phase invariant
  return x;
}

std::string write_point(const Network& net, const OperatingPoint& x) {
  std::ostringstream os;
  os << "opfpoint 1\n";
  os << "case " << (net.name.empty() ? "unnamed" : net.name) << "\n";
  os << "v " << x.v.size() << "\n";
  for (int k = 0; k < x.v.size(); ++k)
    os << fmt(x.v[k].real()) << ' ' << fmt(x.v[k].imag()) << "\n";
  os << "pq " << x.p.size() << "\n";
  for (int g = 0; g < x.p.size(); ++g)
    os << fmt(x.p[g]) << ' ' << fmt(x.q[g]) << "\n";
  os << "s " << x.s_from.size() << "\n";
  for (int l = 0; l < x.s_from.size(); ++l)
    os << fmt(x.s_from[l].real()) << ' ' << fmt(x.s_from[l].imag()) << ' '
       << fmt(x.s_to[l].real()) << ' ' << fmt(x.s_to[l].imag()) << "\n";
  return os.str();
}

OperatingPoint read_point(const Network& net, const std::string& text) {
  std::istringstream is(text);
  std::string word;
  int version = 0;
  is >> word >> version;
  if (word != "opfpoint" || version != 1) fail("not an operating point");
  OperatingPoint x;
  int n = 0;
  while (is >> word) {
    if (word == "case") {
      is >> word;  // informational only
    } else if (word == "v") {
      is >> n;
      if (n != net.nb()) fail("point has " + std::to_string(n) + " buses, case has " +
                              std::to_string(net.nb()));
      x.v.resize(n);
      for (int k = 0; k < n; ++k) {
        double re, im;
        is >> re >> im;
        x.v[k] = cx(re, im);
      }
    } else if (word == "pq") {
      is >> n;
      if (n != net.ng()) fail("point has " + std::to_string(n) + " generators, case has " +
                              std::to_string(net.ng()));
      x.p.resize(n);
      x.q.resize(n);
      for (int g = 0; g < n; ++g) is >> x.p[g] >> x.q[g];
    } else if (word == "s") {
      is >> n;
      if (n != net.nl()) fail("point has " + std::to_string(n) + " lines, case has " +
                              std::to_string(net.nl()));
      x.s_from.resize(n);
      x.s_to.resize(n);
      for (int l = 0; l < n; ++l) {
        double fr, fi2, tr, ti;
        is >> fr >> fi2 >> tr >> ti;
        x.s_from[l] = cx(fr, fi2);
        x.s_to[l] = cx(tr, ti);
      }
    } else {
      fail("unknown point section '" + word + "'");
    }
    if (!is && !is.eof()) fail("truncated operating point");
  }
  if (x.v.size() != net.nb() || x.p.size() != net.ng() || x.s_from.size() != net.nl())
    fail("operating point missing sections");
  return x;
}

}  // namespace opfr
