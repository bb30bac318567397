#pragma once

#include <complex>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace opfr {

using cx = std::complex<double>;
using Vec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;
using SpMat = Eigen::SparseMatrix<double>;
using SpCMat = Eigen::SparseMatrix<cx>;

struct Bus {
  int id = 0;            // external numbering from the case file
  cx demand{0, 0};       // per-unit complex power
  cx shunt{0, 0};        // per-unit admittance g_sh + i b_sh
  double vmin = 0.0;
  double vmax = 0.0;
};

struct Gen {
  int bus = 0;           // dense bus index
  double pmin = 0, pmax = 0, qmin = 0, qmax = 0;  // per-unit
  double c0 = 0, c1 = 0, c2 = 0;                  // $/h, $/MWh, $/MW^2h
};

struct Branch {
  int from = 0, to = 0;  // dense bus indices, from != to
  cx y_srs{0, 0};        // series admittance g_srs + i b_srs, per-unit
  double b_prl = 0.0;    // total charging susceptance
  double tap = 1.0;      // tau > 0
  double shift = 0.0;    // radians
  double f_max = 0.0;    // apparent-power limit, <= 0 means unlimited
  int edge = 0;          // undirected bus-pair index
  bool aligned = true;   // from < to, i.e. branch orientation matches the pair
  bool limited() const { return f_max > 0.0; }
};

struct Network {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Gen> gens;
  std::vector<Branch> branches;
  std::vector<std::pair<int, int>> edges;  // unique (i, j), i < j, dense indices

  int nb() const { return static_cast<int>(buses.size()); }
  int ng() const { return static_cast<int>(gens.size()); }
  int nl() const { return static_cast<int>(branches.size()); }
  int ne() const { return static_cast<int>(edges.size()); }
  // dense index of an external bus id; throws if absent
  int bus_index(int id) const;
};

// MATPOWER subset: mpc.baseMVA and the bus/gen/branch/gencost matrices.
Network parse_matpower(const std::string& text, const std::string& name = "");
Network load_case(const std::string& path);  // dispatches on content

// Self-describing structured text with the Network fields verbatim.
std::string write_canonical(const Network& net);
Network read_canonical(const std::string& text);

struct AdmittanceSet {
  SpCMat Y;        // nodal, nb x nb
  SpCMat Yf, Yt;   // branch rows, nl x nb
  SpMat Cg;        // generator incidence, ng x nb
  SpMat Cf, Ct;    // branch incidence, nl x nb
  // per-branch 2x2 Hermitian power matrices acting on (v_from, v_to)
  std::vector<Eigen::Matrix2cd> Yp_f, Yq_f, Yp_t, Yq_t;
};

AdmittanceSet build_admittances(const Network& net);

// s_from, s_to per line: s_f[l] = (Cf v)_l * conj((Yf v)_l)
std::pair<CVec, CVec> branch_flow(const Network& net, const AdmittanceSet& adm,
                                  const CVec& v);

}  // namespace opfr
