#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace opfr {

using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

// standard form: min c'x + obj_const  s.t.  A x = b,  x in K (ordered blocks)
enum class BlockKind { kFree, kNonNeg, kSoc, kRsoc, kPsd };

struct ConeBlock {
  BlockKind kind = BlockKind::kFree;
  int start = 0;
  int size = 0;     // variable count; for kPsd this is mat_dim*(mat_dim+1)/2
  int mat_dim = 0;  // kPsd only: real symmetric matrix dimension
};

// named directory of model variables inside the program vector; -1 = absent
struct VarMap {
  std::vector<int> w_diag;                  // per bus
  std::vector<std::pair<int, int>> w_pairs; // Hermitian pattern pairs (i < j)
  std::vector<int> w_re, w_im;              // per pair
  std::vector<int> v_re, v_im;              // per bus, penalized programs only
  std::vector<int> p, q, o, r;              // per generator
  std::vector<int> f_from, f_to;            // per line
  std::vector<int> s_from_re, s_from_im, s_to_re, s_to_im;  // per line
  std::map<std::string, int> named() const;
};

struct ConicProgram {
  Vec c;
  double obj_const = 0.0;
  SpMat A;
  Vec b;
  std::vector<ConeBlock> blocks;  // partition of the variable vector, in order
  VarMap vars;
  std::vector<std::string> warnings;
  int num_vars() const { return static_cast<int>(c.size()); }
  int num_rows() const { return static_cast<int>(b.size()); }
  std::string dump() const;  // objective, triplet equalities, block list
};

// svec layout for kPsd blocks: upper triangle column-major, off-diagonal * sqrt(2)
inline int svec_size(int m) { return m * (m + 1) / 2; }
inline int svec_index(int i, int j) { return j * (j + 1) / 2 + i; }  // i <= j
Eigen::MatrixXd svec_to_mat(const Eigen::Ref<const Vec>& s, int m);
Vec mat_to_svec(const Eigen::Ref<const Eigen::MatrixXd>& S);

struct SolverSettings {
  int max_iterations = 200;
  double tol_feas = 1e-8;      // relative primal/dual feasibility
  double tol_gap = 1e-8;       // relative complementarity gap
  double step_fraction = 0.99; // fraction to the cone boundary
  double reg_floor = 1e-8;     // static KKT regularization
  int refine_steps = 2;        // iterative refinement passes per solve
  std::ostream* log = nullptr; // per-iteration residual lines when set
};

enum class SolveStatus {
  kOptimal,
  kPrimalInfeasible,
  kDualInfeasible,
  kIterationLimit,
  kNumericalFailure,
};
std::string to_string(SolveStatus s);

struct ConicSolution {
  SolveStatus status = SolveStatus::kNumericalFailure;
  Vec x;  // primal, de-homogenized
  Vec y;  // equality multipliers
  Vec z;  // cone duals, same layout as x (zero on free blocks)
  double obj_primal = 0.0, obj_dual = 0.0;
  double res_primal = 0.0, res_dual = 0.0, res_gap = 0.0;
  int iterations = 0;
  double seconds = 0.0;
  Vec certificate;             // y-certificate (primal infeasible) or x-ray (dual infeasible)
  double cert_residual = 0.0;
};

ConicSolution solve(const ConicProgram& prog, const SolverSettings& settings = {});

struct KktResiduals {
  double primal = 0.0;  // ||Ax - b|| / (1 + ||b||)
  double dual = 0.0;    // ||A'y + z - c|| / (1 + ||c||)
  double gap = 0.0;     // |c'x - b'y| / (1 + |c'x| + |b'y|)
};
KktResiduals kkt_residuals(const ConicProgram& prog, const Vec& x, const Vec& y,
                           const Vec& z);

}  // namespace opfr
