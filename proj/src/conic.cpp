#include "opfrelax/conic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>

namespace opfr {

namespace {

constexpr double kRt2 = 1.4142135623730951;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Eigen::MatrixXd svec_to_mat(const Eigen::Ref<const Vec>& s, int m) {
  if (s.size() != svec_size(m)) throw std::invalid_argument("svec_to_mat: size mismatch");
  Eigen::MatrixXd S(m, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i <= j; ++i) {
      const double v = s[svec_index(i, j)];
      if (i == j)
        S(i, i) = v;
      else
        S(i, j) = S(j, i) = v / kRt2;
    }
  return S;
}

Vec mat_to_svec(const Eigen::Ref<const Eigen::MatrixXd>& S) {
  const int m = static_cast<int>(S.rows());
  if (S.cols() != m) throw std::invalid_argument("mat_to_svec: square matrix required");
  Vec s(svec_size(m));
  for (int j = 0; j < m; ++j)
    for (int i = 0; i <= j; ++i)
      s[svec_index(i, j)] = i == j ? S(i, i) : kRt2 * 0.5 * (S(i, j) + S(j, i));
  return s;
}

std::map<std::string, int> VarMap::named() const {
  std::map<std::string, int> out;
  auto add = [&](const std::string& key, int idx) {
    if (idx >= 0) out[key] = idx;
  };
  auto tag = [](const std::string& stem, int k) { return stem + "_" + std::to_string(k); };
  for (size_t k = 0; k < w_diag.size(); ++k)
    add(tag(tag("W", static_cast<int>(k)), static_cast<int>(k)), w_diag[k]);
  for (size_t e = 0; e < w_pairs.size(); ++e) {
    const auto [i, j] = w_pairs[e];
    add(tag(tag("Re_W", i), j), w_re[e]);
    add(tag(tag("Im_W", i), j), w_im[e]);
  }
  for (size_t k = 0; k < v_re.size(); ++k) add(tag("Re_v", static_cast<int>(k)), v_re[k]);
  for (size_t k = 0; k < v_im.size(); ++k) add(tag("Im_v", static_cast<int>(k)), v_im[k]);
  for (size_t g = 0; g < p.size(); ++g) add(tag("p", static_cast<int>(g)), p[g]);
  for (size_t g = 0; g < q.size(); ++g) add(tag("q", static_cast<int>(g)), q[g]);
  for (size_t g = 0; g < o.size(); ++g) add(tag("o", static_cast<int>(g)), o[g]);
  for (size_t g = 0; g < r.size(); ++g) add(tag("r", static_cast<int>(g)), r[g]);
  for (size_t l = 0; l < f_from.size(); ++l) {
    const int k = static_cast<int>(l);
    add(tag("f_from", k), f_from[l]);
    add(tag("f_to", k), f_to[l]);
    add(tag("Re_s_from", k), s_from_re[l]);
    add(tag("Im_s_from", k), s_from_im[l]);
    add(tag("Re_s_to", k), s_to_re[l]);
    add(tag("Im_s_to", k), s_to_im[l]);
  }
  return out;
}

std::string ConicProgram::dump() const {
  std::ostringstream os;
  os << "conicprogram " << num_vars() << " " << num_rows() << "\n";
  os << "objconst " << fmt_g(obj_const) << "\n";
  int cnnz = 0;
  for (int i = 0; i < c.size(); ++i)
    if (c[i] != 0.0) ++cnnz;
  os << "c " << cnnz << "\n";
  for (int i = 0; i < c.size(); ++i)
    if (c[i] != 0.0) os << i << " " << fmt_g(c[i]) << "\n";
  os << "A " << A.nonZeros() << "\n";
  for (int m = 0; m < A.outerSize(); ++m)
    for (SpMat::InnerIterator it(A, m); it; ++it)
      os << it.row() << " " << it.col() << " " << fmt_g(it.value()) << "\n";
  os << "b " << num_rows() << "\n";
  for (int i = 0; i < b.size(); ++i) os << fmt_g(b[i]) << "\n";
  os << "blocks " << blocks.size() << "\n";
  for (const ConeBlock& blk : blocks) {
    const char* name = "?";
    switch (blk.kind) {
      case BlockKind::kFree: name = "free"; break;
      case BlockKind::kNonNeg: name = "nonneg"; break;
      case BlockKind::kSoc: name = "soc"; break;
      case BlockKind::kRsoc: name = "rsoc"; break;
      case BlockKind::kPsd: name = "psd"; break;
    }
    os << name << " " << blk.start << " " << blk.size << " " << blk.mat_dim << "\n";
  }
  return os.str();
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kPrimalInfeasible: return "primal-infeasible";
    case SolveStatus::kDualInfeasible: return "dual-infeasible";
    case SolveStatus::kIterationLimit: return "iteration-limit";
    case SolveStatus::kNumericalFailure: return "numerical-failure";
  }
  return "?";
}

KktResiduals kkt_residuals(const ConicProgram& prog, const Vec& x, const Vec& y,
                           const Vec& z) {
  if (x.size() != prog.num_vars() || y.size() != prog.num_rows() ||
      z.size() != prog.num_vars())
    throw std::invalid_argument("kkt_residuals: dimension mismatch");
  KktResiduals r;
  const Vec rp = prog.A * x - prog.b;
  const Vec rd = prog.A.transpose() * y + z - prog.c;
  const double bn = prog.b.size() ? prog.b.lpNorm<Eigen::Infinity>() : 0.0;
  const double cn = prog.c.size() ? prog.c.lpNorm<Eigen::Infinity>() : 0.0;
  r.primal = (rp.size() ? rp.lpNorm<Eigen::Infinity>() : 0.0) / (1.0 + bn);
  r.dual = (rd.size() ? rd.lpNorm<Eigen::Infinity>() : 0.0) / (1.0 + cn);
  const double cx = prog.c.dot(x), by = prog.b.dot(y);
  r.gap = std::abs(cx - by) / (1.0 + std::abs(cx) + std::abs(by));
  return r;
}

// ---------------------------------------------------------------------------
// interior-point solver: homogeneous self-dual embedding, Nesterov-Todd
// scaling, Mehrotra predictor-corrector.  Rotated cones are rotated into
// plain second-order cones at ingestion by the orthogonal involution
// (u1,u2,w) -> ((u1+u2)/sqrt2, (u1-u2)/sqrt2, w), which preserves dimension.

namespace {

// per-block working state: fixed structure + per-iteration NT scaling
struct BState {
  BlockKind kind;  // kNonNeg, kSoc or kPsd (internal; rsoc already rotated)
  int start = 0, size = 0, dim = 0;
  std::vector<int> rows;  // equality rows touched by this block, sorted
  // fixed coupling data for the Schur complement
  Eigen::MatrixXd Nloc;  // soc: dense rows.size() x size slice of A
  struct MatEnt {
    int p, q;  // matrix coordinates, p <= q
    double v;  // svec coefficient
  };
  std::vector<std::vector<MatEnt>> rowent;                  // psd: per row coeffs
  std::vector<std::vector<std::pair<int, double>>> colent;  // nonneg: per column rows
  int slot0 = 0;  // first entry in the Schur value array
  // NT scaling state
  Vec w;                       // nonneg: w_i = sqrt(x_i/z_i)
  double eta = 1.0;            // soc
  Vec wbar;                    // soc: unit-hyperbolic scaling point
  Eigen::MatrixXd R, Rinv, G;  // psd: X = R R' Z-compatible factor, G = R R'
  Vec lam;                     // scaled point, lam = W z = W^{-T} x
};

struct Dir {
  Vec dx, dy, dz;
  double dtau = 0.0, dkappa = 0.0;
};

struct Iterate {
  Vec x, y, z;
  double tau = 1.0, kappa = 1.0;
};

class Ipm {
 public:
  Ipm(const ConicProgram& prog, const SolverSettings& st);
  ConicSolution run();

 private:
  // block-local segment helpers
  Eigen::Ref<Vec> seg(Vec& v, const BState& b) { return v.segment(b.start, b.size); }
  Eigen::Ref<const Vec> seg(const Vec& v, const BState& b) const {
    return v.segment(b.start, b.size);
  }

  bool update_scaling();
  void schur_values();
  bool factorize();
  Vec solve_refined(const Vec& rhs);
  bool direction(const Vec& r1, const Vec& r2, double r3, const Vec& r4, double r5,
                 Dir& d);
  bool direction_once(const Vec& r1, const Vec& r2, double r3, const Vec& r4,
                      double r5, Dir& d);
  double step_to_boundary(const Dir& d) const;
  void jordan_sq(Vec& out) const;           // out = lam o lam (cone coords)
  void jordan_lam(const Vec& u, Vec& out) const;  // out = lam o u
  void jordan_prod(const Vec& u, const Vec& v, Vec& out) const;
  void jordan_solve(const Vec& r, Vec& out) const;  // lam o out = r
  void apply_w(const BState& b, const Eigen::Ref<const Vec>& in, Eigen::Ref<Vec> out,
               bool trans) const;  // W or W'
  void apply_winv(const BState& b, const Eigen::Ref<const Vec>& in, Eigen::Ref<Vec> out,
                  bool trans) const;  // W^{-1} or W^{-T}
  void apply_hinv(const BState& b, const Eigen::Ref<const Vec>& in,
                  Eigen::Ref<Vec> out) const;  // (W' W) v
  ConicSolution finalize(SolveStatus status, const Iterate& it, int iters,
                         double seconds) const;
  Vec untransform(const Vec& v) const;  // undo the rsoc rotation

  const ConicProgram& orig_;
  SolverSettings st_;
  int n_ = 0, m_ = 0, nf_ = 0;
  SpMat A_;  // rotated and equilibrated copy
  Vec c_, b_;
  // Ruiz equilibration state: A_ = E (A T) D, b_ = sigb E b, c_ = sigc D c
  Vec dscale_, escale_;
  double sigb_ = 1.0, sigc_ = 1.0;
  double bn0_ = 0.0, cn0_ = 0.0;  // original data norms for the stopping tests
  std::vector<BState> blocks_;
  std::vector<int> free_cols_;          // global column -> listed order
  std::vector<int> free_pos_;           // global column -> [0,nf) or -1
  std::vector<std::pair<int, int>> rsoc_;  // (start, size) of original rsoc blocks
  double deg_ = 0.0;                    // total barrier degree
  Vec e_;                               // cone identity (zero on free)
  // KKT structure
  std::vector<Eigen::Triplet<double>> fixed_tri_;
  std::vector<int> srow_, scol_;
  Vec sval_;
  SpMat K_;  // exact reduced operator (no regularization)
  Eigen::SimplicialLDLT<SpMat> ldlt_;
  bool analyzed_ = false;
  double reg_ = 0.0;
  // iterate
  Iterate cur_;
};

Ipm::Ipm(const ConicProgram& prog, const SolverSettings& st) : orig_(prog), st_(st) {
  n_ = prog.num_vars();
  m_ = prog.num_rows();
  if (n_ <= 0) throw std::invalid_argument("solve: empty program");
  if (prog.A.rows() != m_ || prog.A.cols() != n_ || prog.c.size() != n_)
    throw std::invalid_argument("solve: inconsistent program dimensions");
  if (!(st_.max_iterations > 0 && st_.tol_feas > 0 && st_.tol_feas < 1 &&
        st_.tol_gap > 0 && st_.tol_gap < 1 && st_.step_fraction > 0 &&
        st_.step_fraction < 1 && st_.reg_floor > 0))
    throw std::invalid_argument("solve: invalid settings");

  // validate the block partition
  std::vector<ConeBlock> sorted = prog.blocks;
  std::sort(sorted.begin(), sorted.end(),
            [](const ConeBlock& a, const ConeBlock& b) { return a.start < b.start; });
  int at = 0;
  for (const ConeBlock& blk : sorted) {
    if (blk.start != at || blk.size <= 0)
      throw std::invalid_argument("solve: blocks do not partition the variables");
    switch (blk.kind) {
      case BlockKind::kSoc:
        if (blk.size < 2) throw std::invalid_argument("solve: soc block too small");
        break;
      case BlockKind::kRsoc:
        if (blk.size < 3) throw std::invalid_argument("solve: rsoc block too small");
        break;
      case BlockKind::kPsd:
        if (blk.mat_dim <= 0 || blk.size != svec_size(blk.mat_dim))
          throw std::invalid_argument("solve: psd block size does not match mat_dim");
        break;
      default: break;
    }
    at += blk.size;
  }
  if (at != n_) throw std::invalid_argument("solve: blocks do not cover the variables");

  // rotate rsoc blocks into plain second-order cones
  free_pos_.assign(n_, -1);
  std::vector<int> role(n_, 0);  // 0 plain, 1 rsoc-u1, 2 rsoc-u2
  for (const ConeBlock& blk : sorted)
    if (blk.kind == BlockKind::kRsoc) {
      rsoc_.emplace_back(blk.start, blk.size);
      role[blk.start] = 1;
      role[blk.start + 1] = 2;
    }
  c_ = prog.c;
  for (auto [s, sz] : rsoc_) {
    const double u1 = c_[s], u2 = c_[s + 1];
    c_[s] = (u1 + u2) / kRt2;
    c_[s + 1] = (u1 - u2) / kRt2;
  }
  b_ = prog.b;
  {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<size_t>(prog.A.nonZeros()) * 2);
    for (int col = 0; col < prog.A.outerSize(); ++col)
      for (SpMat::InnerIterator it(prog.A, col); it; ++it) {
        const int r = static_cast<int>(it.row());
        const double v = it.value();
        if (role[col] == 1) {
          t.emplace_back(r, col, v / kRt2);
          t.emplace_back(r, col + 1, v / kRt2);
        } else if (role[col] == 2) {
          t.emplace_back(r, col - 1, v / kRt2);
          t.emplace_back(r, col, -v / kRt2);
        } else {
          t.emplace_back(r, col, v);
        }
      }
    A_.resize(m_, n_);
    A_.setFromTriplets(t.begin(), t.end());
  }

  // Ruiz equilibration on the rotated data.  Cone blocks other than the
  // nonnegative orthant get one shared column scalar so membership is
  // preserved; the rhs/cost rescaling keeps tau away from zero on data with
  // large cost coefficients.
  dscale_ = Vec::Ones(n_);
  escale_ = Vec::Ones(m_);
  bn0_ = orig_.b.size() ? orig_.b.lpNorm<Eigen::Infinity>() : 0.0;
  cn0_ = orig_.c.lpNorm<Eigen::Infinity>();
  {
    std::vector<int> grp(n_);
    int ng = 0;
    for (const ConeBlock& blk : sorted) {
      const bool shared = blk.kind == BlockKind::kSoc ||
                          blk.kind == BlockKind::kRsoc || blk.kind == BlockKind::kPsd;
      for (int j = 0; j < blk.size; ++j) grp[blk.start + j] = shared ? ng : ng + j;
      ng += shared ? 1 : blk.size;
    }
    for (int pass = 0; pass < 10; ++pass) {
      Vec rmax = Vec::Zero(m_), gmax = Vec::Zero(ng);
      for (int col = 0; col < n_; ++col)
        for (SpMat::InnerIterator it(A_, col); it; ++it) {
          const double a = std::abs(it.value());
          const int r = static_cast<int>(it.row());
          rmax[r] = std::max(rmax[r], a);
          gmax[grp[col]] = std::max(gmax[grp[col]], a);
        }
      double dev = 0.0;
      for (int r = 0; r < m_; ++r)
        if (rmax[r] > 0) dev = std::max(dev, std::abs(rmax[r] - 1.0));
      for (int g = 0; g < ng; ++g)
        if (gmax[g] > 0) dev = std::max(dev, std::abs(gmax[g] - 1.0));
      if (dev < 0.1) break;
      Vec rs(m_), cs(n_);
      for (int r = 0; r < m_; ++r)
        rs[r] = rmax[r] > 0 ? 1.0 / std::sqrt(rmax[r]) : 1.0;
      for (int j = 0; j < n_; ++j)
        cs[j] = gmax[grp[j]] > 0 ? 1.0 / std::sqrt(gmax[grp[j]]) : 1.0;
      for (int col = 0; col < n_; ++col)
        for (SpMat::InnerIterator it(A_, col); it; ++it)
          it.valueRef() *= rs[static_cast<int>(it.row())] * cs[col];
      escale_ = escale_.cwiseProduct(rs);
      dscale_ = dscale_.cwiseProduct(cs);
    }
  }
  b_ = b_.cwiseProduct(escale_);
  c_ = c_.cwiseProduct(dscale_);
  {
    const double bmax = b_.size() ? b_.lpNorm<Eigen::Infinity>() : 0.0;
    const double cmax = c_.lpNorm<Eigen::Infinity>();
    if (bmax > 1.0) sigb_ = 1.0 / bmax;
    if (cmax > 1.0) sigc_ = 1.0 / cmax;
  }
  b_ *= sigb_;
  c_ *= sigc_;

  // classify columns, set up per-block structure
  e_ = Vec::Zero(n_);
  for (const ConeBlock& blk : sorted) {
    if (blk.kind == BlockKind::kFree) {
      for (int j = 0; j < blk.size; ++j) {
        free_pos_[blk.start + j] = static_cast<int>(free_cols_.size());
        free_cols_.push_back(blk.start + j);
      }
      continue;
    }
    BState bs;
    bs.kind = blk.kind == BlockKind::kRsoc ? BlockKind::kSoc : blk.kind;
    bs.start = blk.start;
    bs.size = blk.size;
    bs.dim = blk.mat_dim;
    switch (bs.kind) {
      case BlockKind::kNonNeg:
        deg_ += blk.size;
        e_.segment(blk.start, blk.size).setOnes();
        break;
      case BlockKind::kSoc:
        deg_ += 1;
        e_[blk.start] = 1.0;
        break;
      case BlockKind::kPsd:
        deg_ += blk.mat_dim;
        for (int k = 0; k < blk.mat_dim; ++k) e_[blk.start + svec_index(k, k)] = 1.0;
        break;
      default: break;
    }
    blocks_.push_back(std::move(bs));
  }
  nf_ = static_cast<int>(free_cols_.size());

  // touched rows and local slices per cone block
  for (BState& bs : blocks_) {
    std::vector<int> rows;
    for (int j = 0; j < bs.size; ++j)
      for (SpMat::InnerIterator it(A_, bs.start + j); it; ++it)
        rows.push_back(static_cast<int>(it.row()));
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    bs.rows = std::move(rows);
    auto local_row = [&](int r) {
      return static_cast<int>(std::lower_bound(bs.rows.begin(), bs.rows.end(), r) -
                              bs.rows.begin());
    };
    const int t = static_cast<int>(bs.rows.size());
    if (bs.kind == BlockKind::kSoc) {
      bs.Nloc = Eigen::MatrixXd::Zero(t, bs.size);
      for (int j = 0; j < bs.size; ++j)
        for (SpMat::InnerIterator it(A_, bs.start + j); it; ++it)
          bs.Nloc(local_row(static_cast<int>(it.row())), j) = it.value();
    } else if (bs.kind == BlockKind::kPsd) {
      bs.rowent.assign(t, {});
      std::vector<std::pair<int, int>> coords(bs.size);
      for (int q = 0, s = 0; q < bs.dim; ++q)
        for (int p = 0; p <= q; ++p) coords[s++] = {p, q};
      for (int j = 0; j < bs.size; ++j)
        for (SpMat::InnerIterator it(A_, bs.start + j); it; ++it)
          bs.rowent[local_row(static_cast<int>(it.row()))].push_back(
              {coords[j].first, coords[j].second, it.value()});
    } else {
      bs.colent.assign(bs.size, {});
      for (int j = 0; j < bs.size; ++j)
        for (SpMat::InnerIterator it(A_, bs.start + j); it; ++it)
          bs.colent[j].emplace_back(static_cast<int>(it.row()), it.value());
    }
  }

  // fixed KKT triplets: free coupling and explicit diagonal slots
  for (int fj = 0; fj < nf_; ++fj) {
    const int col = free_cols_[fj];
    for (SpMat::InnerIterator it(A_, col); it; ++it) {
      fixed_tri_.emplace_back(fj, nf_ + static_cast<int>(it.row()), it.value());
      fixed_tri_.emplace_back(nf_ + static_cast<int>(it.row()), fj, it.value());
    }
    fixed_tri_.emplace_back(fj, fj, 0.0);
  }
  for (int r = 0; r < m_; ++r) fixed_tri_.emplace_back(nf_ + r, nf_ + r, 0.0);

  // Schur value slots, one contiguous run per block
  int slots = 0;
  for (BState& bs : blocks_) {
    bs.slot0 = slots;
    if (bs.kind == BlockKind::kNonNeg) {
      for (const auto& ce : bs.colent) slots += static_cast<int>(ce.size() * ce.size());
    } else {
      slots += static_cast<int>(bs.rows.size() * bs.rows.size());
    }
  }
  srow_.reserve(slots);
  scol_.reserve(slots);
  for (BState& bs : blocks_) {
    if (bs.kind == BlockKind::kNonNeg) {
      for (const auto& ce : bs.colent)
        for (const auto& [ra, va] : ce)
          for (const auto& [rb, vb] : ce) {
            srow_.push_back(nf_ + ra);
            scol_.push_back(nf_ + rb);
          }
    } else {
      for (int a : bs.rows)
        for (int bb : bs.rows) {
          srow_.push_back(nf_ + a);
          scol_.push_back(nf_ + bb);
        }
    }
  }
  sval_ = Vec::Zero(slots);

  // cold start at the cone identity
  cur_.x = e_;
  cur_.z = e_;
  cur_.y = Vec::Zero(m_);
  cur_.tau = 1.0;
  cur_.kappa = 1.0;
}

bool Ipm::update_scaling() {
  for (BState& bs : blocks_) {
    const auto x = seg(cur_.x, bs);
    const auto z = seg(cur_.z, bs);
    switch (bs.kind) {
      case BlockKind::kNonNeg: {
        if ((x.array() <= 0).any() || (z.array() <= 0).any()) return false;
        bs.w = (x.array() / z.array()).sqrt();
        bs.lam = (x.array() * z.array()).sqrt();
        break;
      }
      case BlockKind::kSoc: {
        const int q = bs.size;
        const double rx = x[0] * x[0] - x.tail(q - 1).squaredNorm();
        const double rz = z[0] * z[0] - z.tail(q - 1).squaredNorm();
        if (!(rx > 0 && rz > 0 && x[0] > 0 && z[0] > 0)) return false;
        const Vec xb = x / std::sqrt(rx);
        Vec zb = z / std::sqrt(rz);
        const double gamma = std::sqrt((1.0 + xb.dot(zb)) / 2.0);
        zb[0] = -zb[0];  // J z / sqrt(rz), reflected tail below
        bs.wbar = Vec(q);
        bs.wbar[0] = (xb[0] - zb[0]) / (2 * gamma);
        bs.wbar.tail(q - 1) = (xb.tail(q - 1) - zb.tail(q - 1)) / (2 * gamma);
        // wbar = (xbar + J zbar)/(2 gamma); the sign flip above folded J in
        bs.eta = std::pow(rx / rz, 0.25);
        // lam = W z, computed through the scaling directly
        bs.lam = Vec(q);
        apply_w(bs, z, bs.lam, false);
        break;
      }
      case BlockKind::kPsd: {
        const int d = bs.dim;
        const Eigen::MatrixXd X = svec_to_mat(x, d);
        const Eigen::MatrixXd Z = svec_to_mat(z, d);
        Eigen::LLT<Eigen::MatrixXd> lx(X), lz(Z);
        if (lx.info() != Eigen::Success || lz.info() != Eigen::Success) return false;
        const Eigen::MatrixXd Lx = lx.matrixL();
        const Eigen::MatrixXd Lz = lz.matrixL();
        Eigen::BDCSVD<Eigen::MatrixXd> svd(Lz.transpose() * Lx,
                                           Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Vec sig = svd.singularValues();
        if (!(sig.minCoeff() > 0)) return false;
        const Vec isq = sig.cwiseSqrt().cwiseInverse();
        bs.R = Lx * svd.matrixV() * isq.asDiagonal();
        bs.Rinv = isq.asDiagonal() * svd.matrixU().transpose() * Lz.transpose();
        bs.G = bs.R * bs.R.transpose();
        bs.lam = Vec::Zero(bs.size);
        for (int k = 0; k < d; ++k) bs.lam[svec_index(k, k)] = sig[k];
        break;
      }
      default: return false;
    }
    if (!bs.lam.allFinite()) return false;
  }
  return true;
}

void Ipm::apply_w(const BState& b, const Eigen::Ref<const Vec>& in, Eigen::Ref<Vec> out,
                  bool trans) const {
  switch (b.kind) {
    case BlockKind::kNonNeg:
      out = b.w.cwiseProduct(in);
      break;
    case BlockKind::kSoc: {  // symmetric
      const int q = b.size;
      const double wtv = b.wbar.tail(q - 1).dot(in.tail(q - 1));
      out[0] = b.eta * (b.wbar[0] * in[0] + wtv);
      out.tail(q - 1) =
          b.eta * (in[0] * b.wbar.tail(q - 1) + in.tail(q - 1) +
                   (wtv / (1.0 + b.wbar[0])) * b.wbar.tail(q - 1));
      break;
    }
    case BlockKind::kPsd: {
      const Eigen::MatrixXd M = svec_to_mat(in, b.dim);
      // W v = svec(R' M R); its adjoint is svec(R M R')
      out = trans ? mat_to_svec(Eigen::MatrixXd(b.R * M * b.R.transpose()))
                  : mat_to_svec(Eigen::MatrixXd(b.R.transpose() * M * b.R));
      break;
    }
    default: break;
  }
}

void Ipm::apply_winv(const BState& b, const Eigen::Ref<const Vec>& in,
                     Eigen::Ref<Vec> out, bool trans) const {
  switch (b.kind) {
    case BlockKind::kNonNeg:
      out = in.cwiseQuotient(b.w);
      break;
    case BlockKind::kSoc: {  // W^{-1} swaps wbar for J wbar and eta for 1/eta
      const int q = b.size;
      const double wtv = b.wbar.tail(q - 1).dot(in.tail(q - 1));
      out[0] = (b.wbar[0] * in[0] - wtv) / b.eta;
      out.tail(q - 1) = (-in[0] * b.wbar.tail(q - 1) + in.tail(q - 1) +
                         (wtv / (1.0 + b.wbar[0])) * b.wbar.tail(q - 1)) /
                        b.eta;
      break;
    }
    case BlockKind::kPsd: {
      const Eigen::MatrixXd M = svec_to_mat(in, b.dim);
      out = trans
                ? mat_to_svec(Eigen::MatrixXd(b.Rinv * M * b.Rinv.transpose()))
                : mat_to_svec(Eigen::MatrixXd(b.Rinv.transpose() * M * b.Rinv));
      break;
    }
    default: break;
  }
}

void Ipm::apply_hinv(const BState& b, const Eigen::Ref<const Vec>& in,
                     Eigen::Ref<Vec> out) const {
  switch (b.kind) {
    case BlockKind::kNonNeg:
      out = b.w.array().square() * in.array();
      break;
    case BlockKind::kSoc: {  // eta^2 (2 wbar wbar' - J) v
      const int q = b.size;
      const double wv = b.wbar.dot(in);
      out = 2.0 * wv * b.wbar;
      out[0] -= in[0];
      out.tail(q - 1) += in.tail(q - 1);
      out *= b.eta * b.eta;
      break;
    }
    case BlockKind::kPsd: {
      const Eigen::MatrixXd M = svec_to_mat(in, b.dim);
      out = mat_to_svec(Eigen::MatrixXd(b.G * M * b.G));
      break;
    }
    default: break;
  }
}

void Ipm::jordan_sq(Vec& out) const {
  out = Vec::Zero(n_);
  for (const BState& b : blocks_) {
    auto o = out.segment(b.start, b.size);
    switch (b.kind) {
      case BlockKind::kNonNeg:
        o = b.lam.array().square();
        break;
      case BlockKind::kSoc: {
        const int q = b.size;
        o[0] = b.lam.squaredNorm();
        o.tail(q - 1) = 2.0 * b.lam[0] * b.lam.tail(q - 1);
        break;
      }
      case BlockKind::kPsd:
        for (int k = 0; k < b.dim; ++k)
          o[svec_index(k, k)] = b.lam[svec_index(k, k)] * b.lam[svec_index(k, k)];
        break;
      default: break;
    }
  }
}

void Ipm::jordan_lam(const Vec& u, Vec& out) const {
  out = Vec::Zero(n_);
  for (const BState& b : blocks_) {
    const auto ub = u.segment(b.start, b.size);
    auto o = out.segment(b.start, b.size);
    switch (b.kind) {
      case BlockKind::kNonNeg:
        o = b.lam.cwiseProduct(ub);
        break;
      case BlockKind::kSoc: {
        const int q = b.size;
        o[0] = b.lam.dot(ub);
        o.tail(q - 1) = b.lam[0] * ub.tail(q - 1) + ub[0] * b.lam.tail(q - 1);
        break;
      }
      case BlockKind::kPsd: {
        Vec sig(b.dim);
        for (int k = 0; k < b.dim; ++k) sig[k] = b.lam[svec_index(k, k)];
        const Eigen::MatrixXd U = svec_to_mat(ub, b.dim);
        Eigen::MatrixXd P(b.dim, b.dim);
        for (int jj = 0; jj < b.dim; ++jj)
          for (int ii = 0; ii < b.dim; ++ii)
            P(ii, jj) = 0.5 * (sig[ii] + sig[jj]) * U(ii, jj);
        o = mat_to_svec(P);
        break;
      }
      default: break;
    }
  }
}

void Ipm::jordan_prod(const Vec& u, const Vec& v, Vec& out) const {
  out = Vec::Zero(n_);
  for (const BState& b : blocks_) {
    const auto ub = u.segment(b.start, b.size);
    const auto vb = v.segment(b.start, b.size);
    auto o = out.segment(b.start, b.size);
    switch (b.kind) {
      case BlockKind::kNonNeg:
        o = ub.cwiseProduct(vb);
        break;
      case BlockKind::kSoc: {
        const int q = b.size;
        o[0] = ub.dot(vb);
        o.tail(q - 1) = ub[0] * vb.tail(q - 1) + vb[0] * ub.tail(q - 1);
        break;
      }
      case BlockKind::kPsd: {
        const Eigen::MatrixXd U = svec_to_mat(ub, b.dim);
        const Eigen::MatrixXd V = svec_to_mat(vb, b.dim);
        o = mat_to_svec(Eigen::MatrixXd(0.5 * (U * V + V * U)));
        break;
      }
      default: break;
    }
  }
}

void Ipm::jordan_solve(const Vec& r, Vec& out) const {
  out = Vec::Zero(n_);
  for (const BState& b : blocks_) {
    const auto rb = r.segment(b.start, b.size);
    auto o = out.segment(b.start, b.size);
    switch (b.kind) {
      case BlockKind::kNonNeg:
        o = rb.cwiseQuotient(b.lam);
        break;
      case BlockKind::kSoc: {
        const int q = b.size;
        const double a = b.lam[0];
        const auto bt = b.lam.tail(q - 1);
        const double det = a * a - bt.squaredNorm();
        const double u1 = (a * rb[0] - bt.dot(rb.tail(q - 1))) / det;
        o[0] = u1;
        o.tail(q - 1) = (rb.tail(q - 1) - u1 * bt) / a;
        break;
      }
      case BlockKind::kPsd: {
        // lam is diagonal in the scaled frame: U_pq = 2 R_pq / (sig_p + sig_q)
        Vec sig(b.dim);
        for (int k = 0; k < b.dim; ++k) sig[k] = b.lam[svec_index(k, k)];
        const Eigen::MatrixXd Rm = svec_to_mat(rb, b.dim);
        Eigen::MatrixXd U(b.dim, b.dim);
        for (int jj = 0; jj < b.dim; ++jj)
          for (int ii = 0; ii < b.dim; ++ii)
            U(ii, jj) = 2.0 * Rm(ii, jj) / (sig[ii] + sig[jj]);
        o = mat_to_svec(U);
        break;
      }
      default: break;
    }
  }
}

void Ipm::schur_values() {
  for (const BState& bs : blocks_) {
    int slot = bs.slot0;
    if (bs.kind == BlockKind::kNonNeg) {
      for (int j = 0; j < bs.size; ++j) {
        const double d = bs.w[j] * bs.w[j];
        for (const auto& [ra, va] : bs.colent[j])
          for (const auto& [rb, vb] : bs.colent[j]) sval_[slot++] = d * va * vb;
      }
    } else if (bs.kind == BlockKind::kSoc) {
      const int q = bs.size;
      Eigen::MatrixXd Hinv = 2.0 * bs.wbar * bs.wbar.transpose();
      Hinv(0, 0) -= 1.0;
      for (int k = 1; k < q; ++k) Hinv(k, k) += 1.0;
      Hinv *= bs.eta * bs.eta;
      const Eigen::MatrixXd S = bs.Nloc * Hinv * bs.Nloc.transpose();
      const int t = static_cast<int>(bs.rows.size());
      for (int a = 0; a < t; ++a)
        for (int bb = 0; bb < t; ++bb) sval_[slot++] = S(a, bb);
    } else {
      const int t = static_cast<int>(bs.rows.size());
      const int d = bs.dim;
      Eigen::MatrixXd At(d, d);
      for (int a = 0; a < t; ++a) {
        At.setZero();  // G A_a G, built entry by entry since A_a is very sparse
        for (const auto& en : bs.rowent[a]) {
          if (en.p == en.q) {
            At += en.v * bs.G.col(en.p) * bs.G.row(en.p);
          } else {
            const double vv = en.v / kRt2;
            At += vv * bs.G.col(en.p) * bs.G.row(en.q);
            At += vv * bs.G.col(en.q) * bs.G.row(en.p);
          }
        }
        for (int bb = 0; bb < t; ++bb) {
          double acc = 0.0;
          for (const auto& en : bs.rowent[bb])
            acc += en.v * (en.p == en.q ? At(en.p, en.p) : kRt2 * At(en.p, en.q));
          sval_[slot++] = acc;
        }
      }
    }
  }
}

bool Ipm::factorize() {
  std::vector<Eigen::Triplet<double>> tri = fixed_tri_;
  tri.reserve(fixed_tri_.size() + srow_.size());
  for (size_t k = 0; k < srow_.size(); ++k)
    tri.emplace_back(srow_[k], scol_[k], sval_[k]);
  K_.resize(nf_ + m_, nf_ + m_);
  K_.setFromTriplets(tri.begin(), tri.end());

  // absolute regularization doubles as a floor for the near-zero pivots the
  // unpivoted factorization would otherwise mangle at the endgame
  reg_ = st_.reg_floor;
  for (int attempt = 0; attempt < 7; ++attempt) {
    SpMat Kreg = K_;
    for (int j = 0; j < nf_; ++j) Kreg.coeffRef(j, j) -= reg_;
    for (int r = 0; r < m_; ++r) Kreg.coeffRef(nf_ + r, nf_ + r) += reg_;
    if (!analyzed_) {
      ldlt_.analyzePattern(Kreg);
      analyzed_ = true;
    }
    ldlt_.factorize(Kreg);
    if (ldlt_.info() == Eigen::Success) {
      const Vec d = ldlt_.vectorD();
      if (d.allFinite() && (d.array() != 0.0).all()) return true;
    }
    reg_ *= 100.0;
  }
  return false;
}

Vec Ipm::solve_refined(const Vec& rhs) {
  Vec u = ldlt_.solve(rhs);
  for (int k = 0; k < st_.refine_steps; ++k) {
    Vec r = rhs - K_ * u;
    if (r.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + rhs.lpNorm<Eigen::Infinity>()))
      break;
    u += ldlt_.solve(r);
  }
  return u;
}

bool Ipm::direction(const Vec& r1, const Vec& r2, double r3, const Vec& r4, double r5,
                    Dir& d) {
  if (!direction_once(r1, r2, r3, r4, r5, d)) return false;
  // refine against the full Newton system: cone-variable recovery through
  // H^{-1} amplifies factorization error by ~1/mu, so the reduced-system
  // refinement alone is not enough near convergence
  const double scale =
      1.0 + std::max({r1.lpNorm<Eigen::Infinity>(), r2.lpNorm<Eigen::Infinity>(),
                      std::abs(r3), r4.lpNorm<Eigen::Infinity>(), std::abs(r5)});
  double best_err = kInf;
  Dir last;
  bool applied = false;
  for (int pass = 0; pass < 3; ++pass) {
    const Vec e1 = r1 - (A_ * d.dx - b_ * d.dtau);
    const Vec e2 = r2 - (-(A_.transpose() * d.dy) + c_ * d.dtau - d.dz);
    const double e3 = r3 - (b_.dot(d.dy) - c_.dot(d.dx) - d.dkappa);
    Vec scaled = Vec::Zero(n_);
    for (const BState& b : blocks_) {
      Vec t1(b.size), t2(b.size);
      apply_winv(b, d.dx.segment(b.start, b.size), t1, true);
      apply_w(b, d.dz.segment(b.start, b.size), t2, false);
      scaled.segment(b.start, b.size) = t1 + t2;
    }
    Vec e4(n_);
    jordan_lam(scaled, e4);
    e4 = r4 - e4;
    const double e5 = r5 - (cur_.tau * d.dkappa + cur_.kappa * d.dtau);
    const double err =
        std::max({e1.lpNorm<Eigen::Infinity>(), e2.lpNorm<Eigen::Infinity>(),
                  std::abs(e3), e4.lpNorm<Eigen::Infinity>(), std::abs(e5)});
    if (err >= best_err) {
      // the factorization cannot contract this residual; undo the last
      // correction rather than polishing noise into the direction
      if (applied) {
        d.dx -= last.dx;
        d.dy -= last.dy;
        d.dz -= last.dz;
        d.dtau -= last.dtau;
        d.dkappa -= last.dkappa;
      }
      break;
    }
    best_err = err;
    if (err <= 1e-13 * scale) break;
    if (!direction_once(e1, e2, e3, e4, e5, last)) break;
    // an error-dominated solve shows up as a correction far larger than the
    // direction it is meant to polish
    if (last.dx.lpNorm<Eigen::Infinity>() >
        10.0 * (1.0 + d.dx.lpNorm<Eigen::Infinity>())) {
      applied = false;
      break;
    }
    d.dx += last.dx;
    d.dy += last.dy;
    d.dz += last.dz;
    d.dtau += last.dtau;
    d.dkappa += last.dkappa;
    applied = true;
  }
  return best_err <= 1e-2 * scale;
}

bool Ipm::direction_once(const Vec& r1, const Vec& r2, double r3, const Vec& r4,
                         double r5, Dir& d) {
  const double tau = cur_.tau, kappa = cur_.kappa;
  Vec dtil(n_);
  jordan_solve(r4, dtil);

  // rhat2 = r2 + W^{-1} dtil on cone coordinates
  Vec rh2 = r2;
  for (const BState& b : blocks_) {
    Vec tmp(b.size);
    apply_winv(b, dtil.segment(b.start, b.size), tmp, false);
    rh2.segment(b.start, b.size) += tmp;
  }

  // w1 = H^{-1} rh2 on cones (zero on free), for the Schur right-hand side
  Vec w1 = Vec::Zero(n_);
  for (const BState& b : blocks_)
    apply_hinv(b, rh2.segment(b.start, b.size), w1.segment(b.start, b.size));

  Vec g0(nf_ + m_);
  for (int fj = 0; fj < nf_; ++fj) g0[fj] = -rh2[free_cols_[fj]];
  g0.tail(m_) = r1 - A_ * w1;

  // dtau coefficient system: depends only on (b, c) and the current scaling
  Vec w2 = Vec::Zero(n_);
  for (const BState& b : blocks_)
    apply_hinv(b, c_.segment(b.start, b.size), w2.segment(b.start, b.size));
  Vec g1(nf_ + m_);
  for (int fj = 0; fj < nf_; ++fj) g1[fj] = c_[free_cols_[fj]];
  g1.tail(m_) = b_ + A_ * w2;

  const Vec u0 = solve_refined(g0);
  const Vec u1 = solve_refined(g1);
  if (!u0.allFinite() || !u1.allFinite()) return false;
  const Vec dy0 = u0.tail(m_), dy1 = u1.tail(m_);

  const Vec aty0 = A_.transpose() * dy0;
  const Vec aty1 = A_.transpose() * dy1;
  Vec dx0 = Vec::Zero(n_), dx1 = Vec::Zero(n_);
  for (int fj = 0; fj < nf_; ++fj) {
    dx0[free_cols_[fj]] = u0[fj];
    dx1[free_cols_[fj]] = u1[fj];
  }
  for (const BState& b : blocks_) {
    Vec t0 = rh2.segment(b.start, b.size) + aty0.segment(b.start, b.size);
    Vec t1 = aty1.segment(b.start, b.size) - c_.segment(b.start, b.size);
    apply_hinv(b, t0, dx0.segment(b.start, b.size));
    apply_hinv(b, t1, dx1.segment(b.start, b.size));
  }

  const double den = kappa / tau + b_.dot(dy1) - c_.dot(dx1);
  const double num = r3 + r5 / tau - b_.dot(dy0) + c_.dot(dx0);
  if (den == 0.0 || !std::isfinite(den) || !std::isfinite(num)) return false;
  d.dtau = num / den;
  d.dx = dx0 + d.dtau * dx1;
  d.dy = dy0 + d.dtau * dy1;
  // recover dz from dual feasibility rather than the scaled complementarity:
  // the dual equation then holds to rounding error and the factorization
  // error lands in the centrality equation, where the line search absorbs it
  const Vec dzf = -(A_.transpose() * d.dy) + c_ * d.dtau - r2;
  d.dz = Vec::Zero(n_);
  for (const BState& b : blocks_) seg(d.dz, b) = seg(dzf, b);
  d.dkappa = (r5 - kappa * d.dtau) / tau;
  return d.dx.allFinite() && d.dy.allFinite() && d.dz.allFinite() &&
         std::isfinite(d.dtau) && std::isfinite(d.dkappa);
}

double Ipm::step_to_boundary(const Dir& d) const {
  double alpha = kInf;
  auto clip = [&](double a) {
    if (a >= 0) alpha = std::min(alpha, a);
  };
  if (d.dtau < 0) clip(-cur_.tau / d.dtau);
  if (d.dkappa < 0) clip(-cur_.kappa / d.dkappa);

  for (const BState& b : blocks_) {
    Vec dxs(b.size), dzs(b.size);
    apply_winv(b, d.dx.segment(b.start, b.size), dxs, true);  // scaled primal dir
    apply_w(b, d.dz.segment(b.start, b.size), dzs, false);    // scaled dual dir
    for (const Vec* u : {&dxs, &dzs}) {
      switch (b.kind) {
        case BlockKind::kNonNeg:
          for (int k = 0; k < b.size; ++k)
            if ((*u)[k] < 0) clip(-b.lam[k] / (*u)[k]);
          break;
        case BlockKind::kSoc: {
          const int q = b.size;
          const double c0 = b.lam[0] * b.lam[0] - b.lam.tail(q - 1).squaredNorm();
          const double b0 =
              2.0 * (b.lam[0] * (*u)[0] - b.lam.tail(q - 1).dot(u->tail(q - 1)));
          const double a0 = (*u)[0] * (*u)[0] - u->tail(q - 1).squaredNorm();
          if ((*u)[0] < 0) clip(-b.lam[0] / (*u)[0]);
          const double disc = b0 * b0 - 4.0 * a0 * c0;
          if (disc >= 0) {
            const double sq = std::sqrt(disc);
            if (a0 != 0.0) {
              const double t1 = (-b0 - sq) / (2 * a0), t2 = (-b0 + sq) / (2 * a0);
              clip(std::min(t1, t2) > 0 ? std::min(t1, t2)
                                        : (std::max(t1, t2) > 0 ? std::max(t1, t2) : kInf));
            } else if (b0 < 0) {
              clip(-c0 / b0);
            }
          }
          break;
        }
        case BlockKind::kPsd: {
          Vec sig(b.dim);
          for (int k = 0; k < b.dim; ++k) sig[k] = b.lam[svec_index(k, k)];
          const Vec is = sig.cwiseSqrt().cwiseInverse();
          const Eigen::MatrixXd U = svec_to_mat(*u, b.dim);
          const Eigen::MatrixXd M = is.asDiagonal() * U * is.asDiagonal();
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
          const double lo = es.eigenvalues().minCoeff();
          if (lo < 0) clip(-1.0 / lo);
          break;
        }
        default: break;
      }
    }
  }
  return alpha;
}

Vec Ipm::untransform(const Vec& v) const {
  Vec out = v;
  for (auto [s, sz] : rsoc_) {
    const double t = out[s], z1 = out[s + 1];
    out[s] = (t + z1) / kRt2;
    out[s + 1] = (t - z1) / kRt2;
  }
  return out;
}

ConicSolution Ipm::finalize(SolveStatus status, const Iterate& it, int iters,
                            double seconds) const {
  ConicSolution sol;
  sol.status = status;
  sol.iterations = iters;
  sol.seconds = seconds;
  const double tau = std::max(it.tau, 1e-300);
  const bool scale = status == SolveStatus::kOptimal ||
                     status == SolveStatus::kIterationLimit ||
                     status == SolveStatus::kNumericalFailure;
  const double s = scale ? tau : 1.0;
  // undo equilibration, then the rsoc rotation (D is uniform per rotated pair)
  sol.x = untransform(Vec(dscale_.cwiseProduct(it.x) / (sigb_ * s)));
  sol.y = escale_.cwiseProduct(it.y) / (sigc_ * s);
  sol.z = untransform(Vec(it.z.cwiseQuotient(dscale_) / (sigc_ * s)));
  const Vec rp = orig_.A * sol.x - orig_.b;
  const Vec rd = orig_.A.transpose() * sol.y + sol.z - orig_.c;
  const double bn = orig_.b.size() ? orig_.b.lpNorm<Eigen::Infinity>() : 0.0;
  const double cn = orig_.c.lpNorm<Eigen::Infinity>();
  sol.res_primal = (rp.size() ? rp.lpNorm<Eigen::Infinity>() : 0.0) / (1.0 + bn);
  sol.res_dual = rd.lpNorm<Eigen::Infinity>() / (1.0 + cn);
  const double cx = orig_.c.dot(sol.x), by = orig_.b.dot(sol.y);
  sol.res_gap = std::abs(cx - by) / (1.0 + std::abs(cx) + std::abs(by));
  sol.obj_primal = cx + orig_.obj_const;
  sol.obj_dual = by + orig_.obj_const;

  if (status == SolveStatus::kPrimalInfeasible) {
    const Vec yu = escale_.cwiseProduct(it.y);
    const Vec zu = untransform(Vec(it.z.cwiseQuotient(dscale_)));
    const double by_raw = orig_.b.dot(yu);
    sol.certificate = yu / by_raw;
    const Vec viol = orig_.A.transpose() * sol.certificate + zu / by_raw;
    sol.cert_residual = viol.lpNorm<Eigen::Infinity>();
  } else if (status == SolveStatus::kDualInfeasible) {
    const Vec xu = untransform(Vec(dscale_.cwiseProduct(it.x)));
    const double cx_raw = -orig_.c.dot(xu);
    sol.certificate = xu / cx_raw;
    sol.cert_residual = (orig_.A * sol.certificate).lpNorm<Eigen::Infinity>();
  }
  return sol;
}

ConicSolution Ipm::run() {
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  Iterate best = cur_;
  double best_score = kInf;
  double best_pres = kInf, best_dres = kInf, best_gap = kInf;
  int iter = 0;
  int tiny_steps = 0;
  int stall = 0;
  SolveStatus fate = SolveStatus::kIterationLimit;

  for (iter = 0; iter < st_.max_iterations; ++iter) {
    const Vec px = A_ * cur_.x - b_ * cur_.tau;
    const Vec dxr = -(A_.transpose() * cur_.y) + c_ * cur_.tau - cur_.z;
    const double gx = b_.dot(cur_.y) - c_.dot(cur_.x) - cur_.kappa;
    const double mu = (cur_.x.dot(cur_.z) + cur_.tau * cur_.kappa) / (deg_ + 1.0);

    // stopping tests are measured on the de-homogenized point in the
    // ORIGINAL (unequilibrated) data, matching what finalize reports
    const double tau = cur_.tau;
    const double pres =
        (px.size() ? px.cwiseQuotient(escale_).lpNorm<Eigen::Infinity>() : 0.0) /
        (sigb_ * tau * (1.0 + bn0_));
    const double dres = dxr.cwiseQuotient(dscale_).lpNorm<Eigen::Infinity>() /
                        (sigc_ * tau * (1.0 + cn0_));
    const double pobj = c_.dot(cur_.x) / (sigb_ * sigc_ * tau);
    const double dobj = b_.dot(cur_.y) / (sigb_ * sigc_ * tau);
    const double relgap =
        std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    const double hres = std::sqrt(px.squaredNorm() + dxr.squaredNorm() + gx * gx);

    if (st_.log)
      *st_.log << "iter=" << iter << " pres=" << pres << " dres=" << dres
               << " gap=" << relgap << " hres=" << hres << " tau=" << cur_.tau
               << " kappa=" << cur_.kappa << " mu=" << mu << "\n";

    const double score = std::max({pres, dres, relgap});
    if (score < best_score) {
      best_score = score;
      best_pres = pres;
      best_dres = dres;
      best_gap = relgap;
      best = cur_;
      stall = 0;
    } else {
      ++stall;
    }

    if (pres <= st_.tol_feas && dres <= st_.tol_feas && relgap <= st_.tol_gap) {
      fate = SolveStatus::kOptimal;
      break;
    }
    // Farkas certificates; the tau guard keeps early noise from triggering
    if (cur_.tau <= 1e-6 * std::max(1.0, cur_.kappa)) {
      const double by = b_.dot(cur_.y);
      if (by > 0) {
        const Vec v = (A_.transpose() * cur_.y + cur_.z) / by;
        if (v.lpNorm<Eigen::Infinity>() / (1.0 + cur_.y.lpNorm<Eigen::Infinity>() / by) <=
            st_.tol_feas) {
          fate = SolveStatus::kPrimalInfeasible;
          break;
        }
      }
      const double cx = c_.dot(cur_.x);
      if (cx < 0) {
        const Vec v = (A_ * cur_.x) / (-cx);
        if (v.lpNorm<Eigen::Infinity>() /
                (1.0 + cur_.x.lpNorm<Eigen::Infinity>() / (-cx)) <=
            st_.tol_feas) {
          fate = SolveStatus::kDualInfeasible;
          break;
        }
      }
    }
    // residuals grinding without improvement means the linear algebra floor
    // has been hit; keep the best iterate instead of polishing noise
    if (stall >= 10) {
      fate = SolveStatus::kNumericalFailure;
      break;
    }

    if (!update_scaling()) {
      fate = SolveStatus::kNumericalFailure;
      break;
    }
    schur_values();
    if (!factorize()) {
      fate = SolveStatus::kNumericalFailure;
      break;
    }

    Vec lam2(n_);
    jordan_sq(lam2);

    Dir aff;
    Vec r4 = -lam2;
    if (!direction(Vec(-px), Vec(-dxr), -gx, r4, -cur_.tau * cur_.kappa, aff)) {
      fate = SolveStatus::kNumericalFailure;
      break;
    }
    const double a_aff = std::min(1.0, step_to_boundary(aff));
    double sigma = std::pow(1.0 - a_aff, 3);
    sigma = std::min(1.0, std::max(0.0, sigma));

    // Mehrotra correction in the scaled frame
    Vec dxs = Vec::Zero(n_), dzs = Vec::Zero(n_);
    for (const BState& b : blocks_) {
      apply_winv(b, aff.dx.segment(b.start, b.size), dxs.segment(b.start, b.size), true);
      apply_w(b, aff.dz.segment(b.start, b.size), dzs.segment(b.start, b.size), false);
    }
    Vec corr(n_);
    jordan_prod(dxs, dzs, corr);
    r4 = -lam2 - corr + sigma * mu * e_;
    const double r5 =
        -cur_.tau * cur_.kappa - aff.dtau * aff.dkappa + sigma * mu;

    Dir comb;
    if (!direction(Vec(-(1.0 - sigma) * px), Vec(-(1.0 - sigma) * dxr),
                   -(1.0 - sigma) * gx, r4, r5, comb)) {
      fate = SolveStatus::kNumericalFailure;
      break;
    }
    const double alpha = std::min(1.0, st_.step_fraction * step_to_boundary(comb));
    if (st_.log)
      *st_.log << "      a_aff=" << a_aff << " sigma=" << sigma << " alpha=" << alpha
               << "\n";
    if (alpha < 1e-9) {
      if (++tiny_steps >= 3) {
        fate = SolveStatus::kNumericalFailure;
        break;
      }
    } else {
      tiny_steps = 0;
    }

    cur_.x += alpha * comb.dx;
    cur_.y += alpha * comb.dy;
    cur_.z += alpha * comb.dz;
    cur_.tau += alpha * comb.dtau;
    cur_.kappa += alpha * comb.dkappa;
    if (!(cur_.tau > 0) || !cur_.x.allFinite() || !cur_.z.allFinite()) {
      fate = SolveStatus::kNumericalFailure;
      break;
    }
  }

  const bool use_best =
      !(fate == SolveStatus::kOptimal || fate == SolveStatus::kPrimalInfeasible ||
        fate == SolveStatus::kDualInfeasible);
  if (use_best && best_pres <= st_.tol_feas && best_dres <= st_.tol_feas &&
      best_gap <= st_.tol_gap)
    fate = SolveStatus::kOptimal;  // some earlier iterate already met tolerances
  return finalize(fate, use_best ? best : cur_, iter, elapsed());
}

}  // namespace

ConicSolution solve(const ConicProgram& prog, const SolverSettings& settings) {
  Ipm ipm(prog, settings);
  return ipm.run();
}

}  // namespace opfr
