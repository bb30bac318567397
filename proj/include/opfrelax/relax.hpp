#pragma once

#include "opfrelax/conic.hpp"
#include "opfrelax/opf.hpp"

namespace opfr {

enum class ConeKind { SDP, SOCP, PARABOLIC };
std::string to_string(ConeKind k);
ConeKind cone_from_string(const std::string& s);

struct LiftedPoint {
  OperatingPoint x;
  SpCMat W;           // Hermitian, both triangles stored, pattern {diag} ∪ {edges} (+ fill)
  Vec o, r;           // per generator
  Vec f_from, f_to;   // per line
};

// the exact lift: W = vv* on the pattern, o = p², r = q², f = |s|²
LiftedPoint lift(const Network& net, const OperatingPoint& x);

// H ∈ C_k up to margin; C1 needs H dense, C2/C3 look only at diag + edge entries
bool cone_membership(const Eigen::MatrixXcd& H,
                     const std::vector<std::pair<int, int>>& edges, ConeKind kind,
                     double margin);

struct PenaltySpec {
  double mu = 0.0;
  double alpha = 0.0;
  double eta = 0.0;
  // accumulated per network edge (parallel lines sum), acting on (v_i, v_j), i < j;
  // excludes the alpha*I part
  std::vector<Eigen::Matrix2cd> edge_blocks;
  SpCMat M;  // assembled nb x nb including alpha
  OperatingPoint x0;
};

PenaltySpec penalty_matrix(const Network& net, const AdmittanceSet& adm, double alpha,
                           double eta);

struct DualConeReport {
  bool member = false;
  double interior_margin = 0.0;  // largest ε with M − εI still in D_k
};
DualConeReport dual_cone_membership(const PenaltySpec& spec, const Network& net,
                                    ConeKind kind);

double penalty_value(const PenaltySpec& spec, const LiftedPoint& lp);

// chordal cover from greedy minimum-fill elimination; bags are the maximal cliques
std::vector<std::vector<int>> chordal_bags(const Network& net);

enum class SdpMode { kAuto, kDense, kChordal };  // identical optimal values; cost differs

struct AssembleOptions {
  SdpMode sdp_mode = SdpMode::kAuto;
  int dense_cutoff = 31;  // kAuto: largest bus count whose single dense block
                          // stays within the 64-wide real psd comfort zone
};

ConicProgram assemble(const Network& net, const AdmittanceSet& adm, ConeKind kind,
                      const PenaltySpec* spec = nullptr,
                      const AssembleOptions& opts = {});

// read model variables out of a solver primal vector; absent r/f are rebuilt
// from q and s exactly, absent v leaves the point voltage-free
LiftedPoint extract(const Network& net, const ConicProgram& prog, const Vec& x);

}  // namespace opfr
