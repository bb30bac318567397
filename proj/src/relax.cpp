#include "opfrelax/relax.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace opfr {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

constexpr double kRt2 = 1.4142135623730951;

double eig_min_2(const Eigen::Matrix2cd& B) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es(B, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void check_point_dims(const Network& net, const OperatingPoint& x, const char* who) {
  if (x.v.size() != net.nb() || x.p.size() != net.ng() || x.q.size() != net.ng() ||
      x.s_from.size() != net.nl() || x.s_to.size() != net.nl())
    fail(std::string(who) + ": operating point does not match the network");
}

}  // namespace

std::string to_string(ConeKind k) {
  switch (k) {
    case ConeKind::SDP: return "sdp";
    case ConeKind::SOCP: return "socp";
    case ConeKind::PARABOLIC: return "parabolic";
  }
  return "?";
}

ConeKind cone_from_string(const std::string& s) {
  if (s == "sdp") return ConeKind::SDP;
  if (s == "socp") return ConeKind::SOCP;
  if (s == "parabolic" || s == "para") return ConeKind::PARABOLIC;
  fail("unknown cone '" + s + "' (expected sdp, socp or parabolic)");
}

LiftedPoint lift(const Network& net, const OperatingPoint& x) {
  check_point_dims(net, x, "lift");
  LiftedPoint lp;
  lp.x = x;
  std::vector<Eigen::Triplet<cx>> t;
  for (int k = 0; k < net.nb(); ++k) t.emplace_back(k, k, cx(std::norm(x.v[k]), 0));
  for (auto [i, j] : net.edges) {
    const cx wij = x.v[i] * std::conj(x.v[j]);
    t.emplace_back(i, j, wij);
    t.emplace_back(j, i, std::conj(wij));
  }
  lp.W.resize(net.nb(), net.nb());
  lp.W.setFromTriplets(t.begin(), t.end());
  lp.o = x.p.cwiseProduct(x.p);
  lp.r = x.q.cwiseProduct(x.q);
  lp.f_from.resize(net.nl());
  lp.f_to.resize(net.nl());
  for (int l = 0; l < net.nl(); ++l) {
    lp.f_from[l] = std::norm(x.s_from[l]);
    lp.f_to[l] = std::norm(x.s_to[l]);
  }
  return lp;
}

bool cone_membership(const Eigen::MatrixXcd& H,
                     const std::vector<std::pair<int, int>>& edges, ConeKind kind,
                     double margin) {
  const int n = static_cast<int>(H.rows());
  if (H.cols() != n) fail("cone_membership: square matrix required");
  if (kind == ConeKind::SDP) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -margin;
  }
  for (int k = 0; k < n; ++k)
    if (H(k, k).real() < -margin) return false;
  for (auto [i, j] : edges) {
    if (kind == ConeKind::SOCP) {
      if (H(i, i).real() * H(j, j).real() - std::norm(H(i, j)) < -margin) return false;
    } else {
      const double d = H(i, i).real() + H(j, j).real();
      if (d - 2 * std::abs(H(i, j).real()) < -margin) return false;
      if (d - 2 * std::abs(H(i, j).imag()) < -margin) return false;
    }
  }
  return true;
}

PenaltySpec penalty_matrix(const Network& net, const AdmittanceSet& adm, double alpha,
                           double eta) {
  if (!(eta >= 0.0 && eta < 1.0)) fail("penalty_matrix: eta must lie in [0, 1)");
  if (alpha < 0.0) fail("penalty_matrix: alpha must be nonnegative");
  PenaltySpec spec;
  spec.alpha = alpha;
  spec.eta = eta;
  spec.edge_blocks.assign(net.ne(), Eigen::Matrix2cd::Zero());
  const double w = eta / (1.0 - eta);
  for (int l = 0; l < net.nl(); ++l) {
    const Branch& br = net.branches[l];
    // inductive lines (b_srs <= 0) are penalized by reactive loss, capacitive by gain
    const double zeta = br.y_srs.imag() <= 0.0 ? 1.0 : -1.0;
    Eigen::Matrix2cd blk =
        zeta * (adm.Yq_f[l] + adm.Yq_t[l]) + w * (adm.Yp_f[l] + adm.Yp_t[l]);
    if (!br.aligned) {
      Eigen::Matrix2cd swapped;
      swapped << blk(1, 1), blk(1, 0), blk(0, 1), blk(0, 0);
      blk = swapped;
    }
    spec.edge_blocks[br.edge] += blk;
  }
  std::vector<Eigen::Triplet<cx>> t;
  for (int e = 0; e < net.ne(); ++e) {
    auto [i, j] = net.edges[e];
    const Eigen::Matrix2cd& B = spec.edge_blocks[e];
    t.emplace_back(i, i, B(0, 0) + alpha);
    t.emplace_back(j, j, B(1, 1) + alpha);
    t.emplace_back(i, j, B(0, 1));
    t.emplace_back(j, i, B(1, 0));
  }
  spec.M.resize(net.nb(), net.nb());
  spec.M.setFromTriplets(t.begin(), t.end());
  return spec;
}

DualConeReport dual_cone_membership(const PenaltySpec& spec, const Network& net,
                                    ConeKind kind) {
  DualConeReport rep;
  const int nb = net.nb();
  if (static_cast<int>(spec.edge_blocks.size()) != net.ne())
    fail("dual_cone_membership: spec does not match the network");

  if (kind == ConeKind::SDP) {
    Eigen::MatrixXcd M(spec.M);
    M.conservativeResize(nb, nb);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(M, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    rep.member = lo >= -1e-12 * (1.0 + std::abs(hi));
    rep.interior_margin = std::max(0.0, lo);
    return rep;
  }

  if (kind == ConeKind::SOCP) {
    // membership: the stored per-edge blocks are the SDD certificate
    std::vector<int> deg(nb, 0);
    for (auto [i, j] : net.edges) {
      ++deg[i];
      ++deg[j];
    }
    rep.member = true;
    double scale = 1.0;
    for (int e = 0; e < net.ne(); ++e) {
      const Eigen::Matrix2cd B = spec.edge_blocks[e] + spec.alpha * Eigen::Matrix2cd::Identity();
      scale = std::max(scale, B.cwiseAbs().maxCoeff());
      if (eig_min_2(B) < -1e-12 * scale) rep.member = false;
    }
    if (!rep.member) return rep;
    // interior: distribute ε over incident edges and keep every block PSD
    bool isolated = false;
    for (int k = 0; k < nb; ++k)
      if (deg[k] == 0) isolated = true;
    if (isolated || net.ne() == 0) {
      rep.interior_margin = 0.0;
      return rep;
    }
    double hi = std::numeric_limits<double>::infinity();
    for (int k = 0; k < nb; ++k) hi = std::min(hi, spec.M.coeff(k, k).real());
    hi = std::max(hi, 0.0);
    auto passes = [&](double eps) {
      for (int e = 0; e < net.ne(); ++e) {
        auto [i, j] = net.edges[e];
        Eigen::Matrix2cd B = spec.edge_blocks[e] + spec.alpha * Eigen::Matrix2cd::Identity();
        B(0, 0) -= eps / deg[i];
        B(1, 1) -= eps / deg[j];
        if (eig_min_2(B) < 0.0) return false;
      }
      return true;
    };
    if (!passes(0.0)) {
      rep.interior_margin = 0.0;
      return rep;
    }
    double lo = 0.0;
    for (int it = 0; it < 60 && hi - lo > 1e-12 * (1.0 + hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      (passes(mid) ? lo : hi) = mid;
    }
    rep.interior_margin = lo;
    return rep;
  }

  // PARABOLIC: diagonal dominance of the assembled matrix
  Vec diag = Vec::Zero(nb), off = Vec::Zero(nb);
  for (int m = 0; m < spec.M.outerSize(); ++m)
    for (SpCMat::InnerIterator it(spec.M, m); it; ++it) {
      if (it.row() == it.col())
        diag[it.row()] = it.value().real();
      else
        off[it.row()] += std::abs(it.value());
    }
  double worst = std::numeric_limits<double>::infinity();
  rep.member = true;
  const double scale = std::max(diag.cwiseAbs().maxCoeff(), 1.0);
  for (int k = 0; k < nb; ++k) {
    if (std::abs(diag[k]) < off[k] - 1e-12 * scale) rep.member = false;
    worst = std::min(worst, diag[k] - off[k]);
  }
  rep.interior_margin = std::max(0.0, worst);
  return rep;
}

double penalty_value(const PenaltySpec& spec, const LiftedPoint& lp) {
  const OperatingPoint& x0 = spec.x0;
  const OperatingPoint& x = lp.x;
  if (x0.p.size() != x.p.size() || x0.v.size() != x.v.size() ||
      x0.s_from.size() != x.s_from.size())
    fail("penalty_value: initial point does not match the lifted point");

  const double g_p = lp.o.sum() - 2.0 * x0.p.dot(x.p) + x0.p.squaredNorm();
  const double g_q = lp.r.sum() - 2.0 * x0.q.dot(x.q) + x0.q.squaredNorm();
  auto flow_group = [](const Vec& f, const CVec& s0, const CVec& s) {
    return f.sum() - 2.0 * s0.dot(s).real() + s0.squaredNorm();
  };
  const double g_sf = flow_group(lp.f_from, x0.s_from, x.s_from);
  const double g_st = flow_group(lp.f_to, x0.s_to, x.s_to);

  cx trwm(0, 0);
  for (int m = 0; m < spec.M.outerSize(); ++m)
    for (SpCMat::InnerIterator it(spec.M, m); it; ++it)
      trwm += lp.W.coeff(it.col(), it.row()) * it.value();
  const cx v0Mv = x0.v.dot(spec.M * x.v);     // v0* M v
  const cx v0Mv0 = x0.v.dot(spec.M * x0.v);
  const cx g_w = trwm - v0Mv - std::conj(v0Mv) + v0Mv0;
  if (std::abs(g_w.imag()) > 1e-9 * (1.0 + std::abs(g_w.real())))
    fail("penalty_value: W group came out complex; penalty matrix not Hermitian?");
  return g_p + g_q + g_sf + g_st + g_w.real();
}

std::vector<std::vector<int>> chordal_bags(const Network& net) {
  const int nb = net.nb();
  std::vector<std::set<int>> adj(nb);
  for (auto [i, j] : net.edges) {
    adj[i].insert(j);
    adj[j].insert(i);
  }
  std::vector<bool> gone(nb, false);
  std::vector<std::vector<int>> cliques;
  for (int step = 0; step < nb; ++step) {
    int best = -1;
    long best_fill = 0;
    size_t best_deg = 0;
    for (int v = 0; v < nb; ++v) {
      if (gone[v]) continue;
      long fill = 0;
      for (auto a = adj[v].begin(); a != adj[v].end(); ++a)
        for (auto b = std::next(a); b != adj[v].end(); ++b)
          if (!adj[*a].count(*b)) ++fill;
      if (best < 0 || fill < best_fill ||
          (fill == best_fill && adj[v].size() < best_deg)) {
        best = v;
        best_fill = fill;
        best_deg = adj[v].size();
      }
    }
    std::vector<int> clique(adj[best].begin(), adj[best].end());
    clique.push_back(best);
    std::sort(clique.begin(), clique.end());
    cliques.push_back(std::move(clique));
    for (int a : adj[best])
      for (int b : adj[best])
        if (a < b) {
          adj[a].insert(b);
          adj[b].insert(a);
        }
    for (int a : adj[best]) adj[a].erase(best);
    adj[best].clear();
    gone[best] = true;
  }

  // keep maximal cliques; earlier (larger) bags absorb later subsets
  std::stable_sort(cliques.begin(), cliques.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  std::vector<std::vector<int>> bags;
  std::vector<std::vector<int>> holds(nb);  // bag ids per vertex
  for (const auto& c : cliques) {
    bool absorbed = false;
    for (int id : holds[c[0]])
      if (std::includes(bags[id].begin(), bags[id].end(), c.begin(), c.end())) {
        absorbed = true;
        break;
      }
    if (absorbed) continue;
    const int id = static_cast<int>(bags.size());
    bags.push_back(c);
    for (int v : c) holds[v].push_back(id);
  }
  std::sort(bags.begin(), bags.end());
  return bags;
}

namespace {

struct Builder {
  std::vector<Eigen::Triplet<double>> at;
  std::vector<double> rhs;
  int rows = 0;
  int row(double b) {
    rhs.push_back(b);
    return rows++;
  }
  void set(int r, int c, double v) {
    if (v != 0.0) at.emplace_back(r, c, v);
  }
};

// svec coefficients of the Hermitian accessors of a real-embedded 2m x 2m block
struct HermBlock {
  int start;  // first svec variable
  int m;      // Hermitian dimension
  void diag(Builder& B, int row, int i, double coef) const {
    B.set(row, start + svec_index(i, i), 0.5 * coef);
    B.set(row, start + svec_index(m + i, m + i), 0.5 * coef);
  }
  void re(Builder& B, int row, int i, int j, double coef) const {  // i < j
    B.set(row, start + svec_index(i, j), coef / (2.0 * kRt2));
    B.set(row, start + svec_index(m + i, m + j), coef / (2.0 * kRt2));
  }
  void im(Builder& B, int row, int i, int j, double coef) const {  // i < j
    B.set(row, start + svec_index(i, m + j), -coef / (2.0 * kRt2));
    B.set(row, start + svec_index(j, m + i), coef / (2.0 * kRt2));
  }
};

}  // namespace

ConicProgram assemble(const Network& net, const AdmittanceSet& adm, ConeKind kind,
                      const PenaltySpec* spec, const AssembleOptions& opts) {
  const int nb = net.nb(), ng = net.ng(), nl = net.nl(), ne = net.ne();
  const bool pen = spec != nullptr;
  if (pen) {
    if (spec->mu < 0) fail("assemble: negative penalty weight");
    check_point_dims(net, spec->x0, "assemble");
  }

  std::vector<std::vector<int>> bags;
  if (kind == ConeKind::SDP) {
    const bool dense = opts.sdp_mode == SdpMode::kDense ||
                       (opts.sdp_mode == SdpMode::kAuto && nb <= opts.dense_cutoff);
    if (dense) {
      bags.emplace_back(nb);
      std::iota(bags[0].begin(), bags[0].end(), 0);
    } else {
      bags = chordal_bags(net);
    }
  }

  // Hermitian pattern needing shared variables: network edges, plus any pair
  // appearing in two bags (fill private to one bag stays a free block entry)
  std::map<std::pair<int, int>, int> pidx;
  std::vector<std::pair<int, int>> pairs;
  for (auto e : net.edges) {
    pidx.emplace(e, static_cast<int>(pairs.size()));
    pairs.push_back(e);
  }
  if (kind == ConeKind::SDP) {
    std::map<std::pair<int, int>, int> count;
    for (const auto& bag : bags)
      for (size_t a = 0; a < bag.size(); ++a)
        for (size_t b = a + 1; b < bag.size(); ++b) ++count[{bag[a], bag[b]}];
    for (const auto& [pr, n] : count)
      if (n >= 2 && !pidx.count(pr)) {
        pidx.emplace(pr, static_cast<int>(pairs.size()));
        pairs.push_back(pr);
      }
  }
  const int npairs = static_cast<int>(pairs.size());

  VarMap vm;
  vm.w_pairs = pairs;
  int next = 0;

  if (pen) {
    vm.v_re.resize(nb);
    vm.v_im.resize(nb);
    for (int k = 0; k < nb; ++k) {
      vm.v_re[k] = next++;
      vm.v_im[k] = next++;
    }
  }
  vm.w_diag.resize(nb);
  for (int k = 0; k < nb; ++k) vm.w_diag[k] = next++;
  vm.w_re.resize(npairs);
  vm.w_im.resize(npairs);
  for (int e = 0; e < npairs; ++e) {
    vm.w_re[e] = next++;
    vm.w_im[e] = next++;
  }
  vm.p.assign(ng, -1);
  vm.q.assign(ng, -1);
  vm.o.assign(ng, -1);
  vm.r.assign(ng, -1);
  if (!pen)
    for (int g = 0; g < ng; ++g) vm.q[g] = next++;
  vm.f_from.assign(nl, -1);
  vm.f_to.assign(nl, -1);
  vm.s_from_re.assign(nl, -1);
  vm.s_from_im.assign(nl, -1);
  vm.s_to_re.assign(nl, -1);
  vm.s_to_im.assign(nl, -1);
  for (int l = 0; l < nl; ++l)
    if (!pen && !net.branches[l].limited()) {
      vm.s_from_re[l] = next++;
      vm.s_from_im[l] = next++;
      vm.s_to_re[l] = next++;
      vm.s_to_im[l] = next++;
    }
  const int n_free = next;

  Builder B;

  // W_{a,b} * coef accumulated onto a complex row pair
  auto add_w = [&](int row_re, int row_im, int a, int b, cx coef) {
    if (a == b) {
      B.set(row_re, vm.w_diag[a], coef.real());
      B.set(row_im, vm.w_diag[a], coef.imag());
      return;
    }
    const bool alig = a < b;
    const auto it = pidx.find({std::min(a, b), std::max(a, b)});
    if (it == pidx.end()) fail("assemble: admittance entry outside the W pattern");
    const int wre = vm.w_re[it->second], wim = vm.w_im[it->second];
    // W_ab = wre + i*wim when a < b, the conjugate otherwise
    B.set(row_re, wre, coef.real());
    B.set(row_re, wim, alig ? -coef.imag() : coef.imag());
    B.set(row_im, wre, coef.imag());
    B.set(row_im, wim, alig ? coef.real() : -coef.real());
  };

  // (10b): d + diag{W Y*} = Cg'(p + iq), split into Re/Im rows per bus
  std::vector<int> bal_re(nb), bal_im(nb);
  for (int k = 0; k < nb; ++k) {
    bal_re[k] = B.row(-net.buses[k].demand.real());
    bal_im[k] = B.row(-net.buses[k].demand.imag());
  }
  for (int m = 0; m < adm.Y.outerSize(); ++m)
    for (SpCMat::InnerIterator it(adm.Y, m); it; ++it)
      add_w(bal_re[it.row()], bal_im[it.row()], static_cast<int>(it.row()), m,
            std::conj(it.value()));
  // generator columns arrive once p/q variable indices exist; rows remembered

  // (10c)/(10d) flow definitions, two complex rows per line
  std::vector<int> ff_re(nl), ff_im(nl), ft_re(nl), ft_im(nl);
  for (int l = 0; l < nl; ++l) {
    const Branch& br = net.branches[l];
    ff_re[l] = B.row(0.0);
    ff_im[l] = B.row(0.0);
    add_w(ff_re[l], ff_im[l], br.from, br.from, std::conj(adm.Yf.coeff(l, br.from)));
    add_w(ff_re[l], ff_im[l], br.from, br.to, std::conj(adm.Yf.coeff(l, br.to)));
    ft_re[l] = B.row(0.0);
    ft_im[l] = B.row(0.0);
    add_w(ft_re[l], ft_im[l], br.to, br.from, std::conj(adm.Yt.coeff(l, br.from)));
    add_w(ft_re[l], ft_im[l], br.to, br.to, std::conj(adm.Yt.coeff(l, br.to)));
  }

  // box constraints via nonnegative slacks: expr - lo = sl, hi - expr = sh
  auto box_lo = [&](int var, double lo) {
    const int r = B.row(lo);
    B.set(r, var, 1.0);
    B.set(r, next++, -1.0);
  };
  auto box_hi = [&](int var, double hi) {
    const int r = B.row(hi);
    B.set(r, var, 1.0);
    B.set(r, next++, 1.0);
  };
  for (int k = 0; k < nb; ++k) {
    box_lo(vm.w_diag[k], net.buses[k].vmin * net.buses[k].vmin);
    box_hi(vm.w_diag[k], net.buses[k].vmax * net.buses[k].vmax);
  }

  // C3 without v degenerates to linear inequalities on W
  if (kind == ConeKind::PARABOLIC && !pen)
    for (int e = 0; e < ne; ++e) {
      auto [i, j] = net.edges[e];
      for (int s = 0; s < 4; ++s) {
        const int r = B.row(0.0);
        B.set(r, vm.w_diag[i], 1.0);
        B.set(r, vm.w_diag[j], 1.0);
        B.set(r, s < 2 ? vm.w_re[e] : vm.w_im[e], s % 2 ? 2.0 : -2.0);
        B.set(r, next++, -1.0);
      }
    }

  // p/q boxes and f caps are emitted after their variables get cone slots;
  // remember where the slack segment ends once all slack rows are placed
  struct PendingBox {
    int var;
    double lo, hi;
  };
  // generators' p/q live inside rotated cones, so allocate those blocks now
  std::vector<ConeBlock> blocks;
  blocks.push_back({BlockKind::kFree, 0, n_free, 0});
  const int slack_begin = n_free;

  // defer: cone blocks start after the slack segment; count slacks first
  int n_slack = static_cast<int>(next - slack_begin);
  // p/q/f box rows still to come: 4 per generator + 2 per limited line
  int lim_lines = 0;
  for (int l = 0; l < nl; ++l)
    if (net.branches[l].limited()) ++lim_lines;
  n_slack += 4 * ng + 2 * lim_lines;

  int cone_next = slack_begin + n_slack;
  auto open_block = [&](BlockKind bk, int size, int mat_dim) {
    blocks.push_back({bk, cone_next, size, mat_dim});
    const int s = cone_next;
    cone_next += size;
    return s;
  };
  auto pin_half = [&](int var) {
    const int r = B.row(0.5);
    B.set(r, var, 1.0);
  };

  // p² ≤ o; the quadratic cost always routes through o
  for (int g = 0; g < ng; ++g) {
    const int s = open_block(BlockKind::kRsoc, 3, 0);
    vm.o[g] = s;
    pin_half(s + 1);
    vm.p[g] = s + 2;
  }
  if (pen)
    for (int g = 0; g < ng; ++g) {  // q² ≤ r keeps the r-penalty bounded
      const int s = open_block(BlockKind::kRsoc, 3, 0);
      vm.r[g] = s;
      pin_half(s + 1);
      vm.q[g] = s + 2;
    }
  for (int l = 0; l < nl; ++l) {
    if (!pen && !net.branches[l].limited()) continue;
    int s = open_block(BlockKind::kRsoc, 4, 0);
    vm.f_from[l] = s;
    pin_half(s + 1);
    vm.s_from_re[l] = s + 2;
    vm.s_from_im[l] = s + 3;
    s = open_block(BlockKind::kRsoc, 4, 0);
    vm.f_to[l] = s;
    pin_half(s + 1);
    vm.s_to_re[l] = s + 2;
    vm.s_to_im[l] = s + 3;
  }

  // now the deferred box rows (their slack variables stay in the slack segment)
  for (int g = 0; g < ng; ++g) {
    box_lo(vm.p[g], net.gens[g].pmin);
    box_hi(vm.p[g], net.gens[g].pmax);
    box_lo(vm.q[g], net.gens[g].qmin);
    box_hi(vm.q[g], net.gens[g].qmax);
  }
  for (int l = 0; l < nl; ++l)
    if (net.branches[l].limited()) {
      const double cap = net.branches[l].f_max * net.branches[l].f_max;
      box_hi(vm.f_from[l], cap);
      box_hi(vm.f_to[l], cap);
    }
  if (next != slack_begin + n_slack) fail("assemble: slack accounting is off");

  // generator injection columns of the balance rows
  for (int g = 0; g < ng; ++g) {
    B.set(bal_re[net.gens[g].bus], vm.p[g], -1.0);
    B.set(bal_im[net.gens[g].bus], vm.q[g], -1.0);
  }
  // flow rows subtract the s variables
  for (int l = 0; l < nl; ++l) {
    B.set(ff_re[l], vm.s_from_re[l], -1.0);
    B.set(ff_im[l], vm.s_from_im[l], -1.0);
    B.set(ft_re[l], vm.s_to_re[l], -1.0);
    B.set(ft_im[l], vm.s_to_im[l], -1.0);
  }

  // the cone on W − vv*
  std::vector<int> deg(nb, 0);
  for (auto [i, j] : net.edges) {
    ++deg[i];
    ++deg[j];
  }
  auto rsoc_vk = [&](int k, int wdiag_var) {  // |v_k|² ≤ W_kk
    const int s = open_block(BlockKind::kRsoc, 4, 0);
    int r = B.row(0.0);
    B.set(r, s, 1.0);
    B.set(r, wdiag_var, -1.0);
    pin_half(s + 1);
    r = B.row(0.0);
    B.set(r, s + 2, 1.0);
    B.set(r, vm.v_re[k], -1.0);
    r = B.row(0.0);
    B.set(r, s + 3, 1.0);
    B.set(r, vm.v_im[k], -1.0);
  };

  if (kind == ConeKind::SOCP && pen) {
    for (int e = 0; e < ne; ++e) {
      auto [i, j] = net.edges[e];
      const int mh = 3;
      HermBlock hb{open_block(BlockKind::kPsd, svec_size(2 * mh), 2 * mh), mh};
      auto link = [&](double rhs) { return B.row(rhs); };
      int r = link(0.0);
      hb.diag(B, r, 0, 1.0);
      B.set(r, vm.w_diag[i], -1.0);
      r = link(0.0);
      hb.diag(B, r, 1, 1.0);
      B.set(r, vm.w_diag[j], -1.0);
      r = link(0.0);
      hb.re(B, r, 0, 1, 1.0);
      B.set(r, vm.w_re[e], -1.0);
      r = link(0.0);
      hb.im(B, r, 0, 1, 1.0);
      B.set(r, vm.w_im[e], -1.0);
      r = link(0.0);
      hb.re(B, r, 0, 2, 1.0);
      B.set(r, vm.v_re[i], -1.0);
      r = link(0.0);
      hb.im(B, r, 0, 2, 1.0);
      B.set(r, vm.v_im[i], -1.0);
      r = link(0.0);
      hb.re(B, r, 1, 2, 1.0);
      B.set(r, vm.v_re[j], -1.0);
      r = link(0.0);
      hb.im(B, r, 1, 2, 1.0);
      B.set(r, vm.v_im[j], -1.0);
      hb.diag(B, B.row(1.0), 2, 1.0);
    }
    for (int k = 0; k < nb; ++k)
      if (deg[k] == 0) rsoc_vk(k, vm.w_diag[k]);  // W_kk ≥ |v_k|² off the edge set
  }

  if (kind == ConeKind::SOCP && !pen)
    for (int e = 0; e < ne; ++e) {  // W_ii W_jj ≥ |W_ij|²
      auto [i, j] = net.edges[e];
      const int s = open_block(BlockKind::kRsoc, 4, 0);
      int r = B.row(0.0);
      B.set(r, s, 1.0);
      B.set(r, vm.w_diag[i], -1.0);
      r = B.row(0.0);
      B.set(r, s + 1, 1.0);
      B.set(r, vm.w_diag[j], -1.0);
      r = B.row(0.0);
      B.set(r, s + 2, 1.0);
      B.set(r, vm.w_re[e], -kRt2);
      r = B.row(0.0);
      B.set(r, s + 3, 1.0);
      B.set(r, vm.w_im[e], -kRt2);
    }

  if (kind == ConeKind::PARABOLIC && pen) {
    for (int e = 0; e < ne; ++e) {
      auto [i, j] = net.edges[e];
      // w-sign table: ± pairs of (v_i, v_j) and (v_i, ∓i v_j)
      struct Form {
        double wsign;   // on W entry in the head
        bool use_im;    // head uses Im W instead of Re W
        double c_re_j, c_im_j;  // contribution of v_j to (w1, w2)
      };
      const Form forms[4] = {
          {-2.0, false, -1.0, -1.0},  // |v_i − v_j|²
          {+2.0, false, +1.0, +1.0},  // |v_i + v_j|²
          {-2.0, true, +1.0, -1.0},   // |v_i − i v_j|²: w = (Re vi + Im vj, Im vi − Re vj)
          {+2.0, true, -1.0, +1.0},   // |v_i + i v_j|²
      };
      for (const Form& fm : forms) {
        const int s = open_block(BlockKind::kRsoc, 4, 0);
        int r = B.row(0.0);
        B.set(r, s, 1.0);
        B.set(r, vm.w_diag[i], -1.0);
        B.set(r, vm.w_diag[j], -1.0);
        B.set(r, fm.use_im ? vm.w_im[e] : vm.w_re[e], -fm.wsign);
        pin_half(s + 1);
        r = B.row(0.0);
        B.set(r, s + 2, 1.0);
        B.set(r, vm.v_re[i], -1.0);
        B.set(r, fm.use_im ? vm.v_im[j] : vm.v_re[j], -fm.c_re_j);
        r = B.row(0.0);
        B.set(r, s + 3, 1.0);
        B.set(r, vm.v_im[i], -1.0);
        B.set(r, fm.use_im ? vm.v_re[j] : vm.v_im[j], -fm.c_im_j);
      }
    }
    for (int k = 0; k < nb; ++k) rsoc_vk(k, vm.w_diag[k]);
  }

  if (kind == ConeKind::SDP)
    for (const auto& bag : bags) {
      const int ma = static_cast<int>(bag.size());
      const int mh = pen ? ma + 1 : ma;
      HermBlock hb{open_block(BlockKind::kPsd, svec_size(2 * mh), 2 * mh), mh};
      for (int a = 0; a < ma; ++a) {
        int r = B.row(0.0);
        hb.diag(B, r, a, 1.0);
        B.set(r, vm.w_diag[bag[a]], -1.0);
        for (int b = a + 1; b < ma; ++b) {
          const auto it = pidx.find({bag[a], bag[b]});
          if (it == pidx.end()) continue;  // fill private to this bag
          r = B.row(0.0);
          hb.re(B, r, a, b, 1.0);
          B.set(r, vm.w_re[it->second], -1.0);
          r = B.row(0.0);
          hb.im(B, r, a, b, 1.0);
          B.set(r, vm.w_im[it->second], -1.0);
        }
        if (pen) {
          r = B.row(0.0);
          hb.re(B, r, a, ma, 1.0);
          B.set(r, vm.v_re[bag[a]], -1.0);
          r = B.row(0.0);
          hb.im(B, r, a, ma, 1.0);
          B.set(r, vm.v_im[bag[a]], -1.0);
        }
      }
      if (pen) hb.diag(B, B.row(1.0), ma, 1.0);
    }

  const int n_vars = cone_next;
  if (n_slack > 0) {
    ConeBlock cb{BlockKind::kNonNeg, slack_begin, n_slack, 0};
    blocks.insert(blocks.begin() + 1, cb);
  }

  ConicProgram prog;
  prog.c = Vec::Zero(n_vars);
  prog.obj_const = 0.0;
  const double base = net.base_mva;
  for (int g = 0; g < ng; ++g) {
    prog.obj_const += net.gens[g].c0;
    prog.c[vm.p[g]] += net.gens[g].c1 * base;
    prog.c[vm.o[g]] += net.gens[g].c2 * base * base;
  }
  if (pen) {
    const double mu = spec->mu;
    const OperatingPoint& x0 = spec->x0;
    prog.obj_const += mu * (x0.p.squaredNorm() + x0.q.squaredNorm() +
                            x0.s_from.squaredNorm() + x0.s_to.squaredNorm());
    for (int g = 0; g < ng; ++g) {
      prog.c[vm.o[g]] += mu;
      prog.c[vm.p[g]] += -2.0 * mu * x0.p[g];
      prog.c[vm.r[g]] += mu;
      prog.c[vm.q[g]] += -2.0 * mu * x0.q[g];
    }
    for (int l = 0; l < nl; ++l) {
      prog.c[vm.f_from[l]] += mu;
      prog.c[vm.f_to[l]] += mu;
      prog.c[vm.s_from_re[l]] += -2.0 * mu * x0.s_from[l].real();
      prog.c[vm.s_from_im[l]] += -2.0 * mu * x0.s_from[l].imag();
      prog.c[vm.s_to_re[l]] += -2.0 * mu * x0.s_to[l].real();
      prog.c[vm.s_to_im[l]] += -2.0 * mu * x0.s_to[l].imag();
    }
    // tr{WM} − 2 Re{v0* M v} + v0* M v0
    for (int m = 0; m < spec->M.outerSize(); ++m)
      for (SpCMat::InnerIterator it(spec->M, m); it; ++it) {
        const int i = static_cast<int>(it.row()), j = m;
        if (i == j) {
          prog.c[vm.w_diag[i]] += mu * it.value().real();
        } else if (i < j) {
          const auto pit = pidx.find({i, j});
          if (pit == pidx.end()) fail("assemble: penalty matrix off the W pattern");
          prog.c[vm.w_re[pit->second]] += 2.0 * mu * it.value().real();
          prog.c[vm.w_im[pit->second]] += 2.0 * mu * it.value().imag();
        }
      }
    const CVec w = spec->M * x0.v;
    for (int k = 0; k < nb; ++k) {
      prog.c[vm.v_re[k]] += -2.0 * mu * w[k].real();
      prog.c[vm.v_im[k]] += -2.0 * mu * w[k].imag();
    }
    const cx v0Mv0 = x0.v.dot(spec->M * x0.v);
    prog.obj_const += mu * v0Mv0.real();

    const DualConeReport dual = dual_cone_membership(*spec, net, kind);
    if (!dual.member || dual.interior_margin <= 0.0)
      prog.warnings.push_back(
          "penalty matrix lies outside the interior of the dual cone; feasibility "
          "recovery guarantees do not apply");
  }

  prog.A.resize(B.rows, n_vars);
  prog.A.setFromTriplets(B.at.begin(), B.at.end());
  prog.b = Eigen::Map<const Vec>(B.rhs.data(), B.rhs.size());
  prog.blocks = std::move(blocks);
  prog.vars = std::move(vm);
  return prog;
}

LiftedPoint extract(const Network& net, const ConicProgram& prog, const Vec& x) {
  if (x.size() != prog.num_vars()) fail("extract: solution size mismatch");
  const VarMap& vm = prog.vars;
  LiftedPoint lp;
  const int nb = net.nb(), ng = net.ng(), nl = net.nl();

  std::vector<Eigen::Triplet<cx>> t;
  for (int k = 0; k < nb; ++k) t.emplace_back(k, k, cx(x[vm.w_diag[k]], 0));
  for (size_t e = 0; e < vm.w_pairs.size(); ++e) {
    auto [i, j] = vm.w_pairs[e];
    const cx wij(x[vm.w_re[e]], x[vm.w_im[e]]);
    t.emplace_back(i, j, wij);
    t.emplace_back(j, i, std::conj(wij));
  }
  lp.W.resize(nb, nb);
  lp.W.setFromTriplets(t.begin(), t.end());

  if (!vm.v_re.empty()) {
    lp.x.v.resize(nb);
    for (int k = 0; k < nb; ++k) lp.x.v[k] = cx(x[vm.v_re[k]], x[vm.v_im[k]]);
  }
  lp.x.p.resize(ng);
  lp.x.q.resize(ng);
  lp.o.resize(ng);
  lp.r.resize(ng);
  for (int g = 0; g < ng; ++g) {
    lp.x.p[g] = x[vm.p[g]];
    lp.x.q[g] = x[vm.q[g]];
    lp.o[g] = x[vm.o[g]];
    lp.r[g] = vm.r[g] >= 0 ? x[vm.r[g]] : lp.x.q[g] * lp.x.q[g];
  }
  lp.x.s_from.resize(nl);
  lp.x.s_to.resize(nl);
  lp.f_from.resize(nl);
  lp.f_to.resize(nl);
  for (int l = 0; l < nl; ++l) {
    lp.x.s_from[l] = cx(x[vm.s_from_re[l]], x[vm.s_from_im[l]]);
    lp.x.s_to[l] = cx(x[vm.s_to_re[l]], x[vm.s_to_im[l]]);
    lp.f_from[l] = vm.f_from[l] >= 0 ? x[vm.f_from[l]] : std::norm(lp.x.s_from[l]);
    lp.f_to[l] = vm.f_to[l] >= 0 ? x[vm.f_to[l]] : std::norm(lp.x.s_to[l]);
  }
  return lp;
}

}  // namespace opfr
