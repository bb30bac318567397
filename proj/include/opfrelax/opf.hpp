#pragma once

#include "opfrelax/netmodel.hpp"

namespace opfr {

struct OperatingPoint {
  CVec v;             // per bus
  Vec p, q;           // per generator, per-unit
  CVec s_from, s_to;  // per line, per-unit
};

// h(p) = c0'1 + c1'p + p'[c2]p in native cost units (p is per-unit)
double objective(const Network& net, const Vec& p);

struct ConstraintResiduals {
  CVec balance;                  // d + diag{v v* Y*} - Cg'(p + iq), per bus
  CVec flow_def_from, flow_def_to;  // branch-row flows minus s, per line
  Vec vmag_lo, vmag_hi;          // signed violations, <= 0 means satisfied
  Vec p_lo, p_hi, q_lo, q_hi;
  Vec flow_from, flow_to;        // |s|^2 - f_max^2; -inf when unlimited
  double max_violation = 0.0;
};

ConstraintResiduals residuals(const Network& net, const AdmittanceSet& adm,
                              const OperatingPoint& x);

bool is_feasible(const Network& net, const AdmittanceSet& adm,
                 const OperatingPoint& x, double tol = 1e-6);

// v = 1, p = p_min, q = 0, flows evaluated at the flat voltage profile
OperatingPoint flat_start(const Network& net, const AdmittanceSet& adm);

// global phase rotation moving the first generator bus to angle zero
OperatingPoint rotate_for_display(const Network& net, OperatingPoint x);

std::string write_point(const Network& net, const OperatingPoint& x);
OperatingPoint read_point(const Network& net, const std::string& text);

}  // namespace opfr
