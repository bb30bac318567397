#include "opfrelax/netmodel.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace opfr {

namespace {

constexpr double kPi = 3.14159265358979323846;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// numeric matrix literal: rows of numbers, ';' or newline terminated
using Table = std::vector<std::vector<double>>;

std::string strip_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '%') {
      while (i < text.size() && text[i] != '\n') ++i;
      if (i < text.size()) out.push_back('\n');
    } else {
      out.push_back(text[i]);
    }
  }
  return out;
}

// finds "mpc.<field> = [ ... ];" and parses the bracket body
bool find_table(const std::string& text, const std::string& field, Table& out) {
  const std::string key = "mpc." + field;
  size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    size_t p = pos + key.size();
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    if (p >= text.size() || text[p] != '=') { pos = p; continue; }
    ++p;
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    if (p >= text.size() || text[p] != '[') { pos = p; continue; }
    size_t close = text.find(']', p);
    if (close == std::string::npos) fail(field + ": unterminated matrix");
    std::string body = text.substr(p + 1, close - p - 1);
    for (char& c : body)
      if (c == ';' || c == ',') c = '\n';
    out.clear();
    std::istringstream lines(body);
    std::string line;
    while (std::getline(lines, line)) {
      std::istringstream ls(line);
      std::vector<double> row;
      std::string tok;
      while (ls >> tok) {
        try {
          size_t used = 0;
          row.push_back(std::stod(tok, &used));
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          fail(field + " row " + std::to_string(out.size()) +
               ": bad numeric token '" + tok + "'");
        }
      }
      if (!row.empty()) out.push_back(std::move(row));
    }
    return true;
  }
  return false;
}

double scalar_field(const std::string& text, const std::string& field) {
  const std::string key = "mpc." + field;
  size_t pos = text.find(key);
  if (pos == std::string::npos) fail("missing " + key);
  pos = text.find('=', pos);
  if (pos == std::string::npos) fail("missing value for " + key);
  return std::stod(text.substr(pos + 1));
}

void need_cols(const Table& t, size_t n, const std::string& field) {
  for (size_t r = 0; r < t.size(); ++r)
    if (t[r].size() < n)
      fail(field + " row " + std::to_string(r) + ": expected >= " +
           std::to_string(n) + " columns, got " + std::to_string(t[r].size()));
}

void index_edges(Network& net) {
  std::map<std::pair<int, int>, int> emap;
  net.edges.clear();
  for (auto& br : net.branches) {
    if (br.from == br.to) fail("self-loop branch at bus " + std::to_string(net.buses[br.from].id));
    br.aligned = br.from < br.to;
    std::pair<int, int> key{std::min(br.from, br.to), std::max(br.from, br.to)};
    auto it = emap.find(key);
    if (it == emap.end()) {
      it = emap.emplace(key, static_cast<int>(net.edges.size())).first;
      net.edges.push_back(key);
    }
    br.edge = it->second;
  }
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

int Network::bus_index(int id) const {
  for (int k = 0; k < nb(); ++k)
    if (buses[k].id == id) return k;
  fail("unknown bus id " + std::to_string(id));
}

Network parse_matpower(const std::string& raw, const std::string& name) {
  const std::string text = strip_comments(raw);
  Network net;
  net.name = name;
  net.base_mva = scalar_field(text, "baseMVA");
  if (!(net.base_mva > 0)) fail("baseMVA must be positive");
  const double base = net.base_mva;

  Table bus, gen, branch, gencost;
  if (!find_table(text, "bus", bus)) fail("missing mpc.bus");
  if (!find_table(text, "gen", gen)) fail("missing mpc.gen");
  if (!find_table(text, "branch", branch)) fail("missing mpc.branch");
  if (!find_table(text, "gencost", gencost)) fail("missing mpc.gencost");
  need_cols(bus, 13, "bus");
  need_cols(gen, 10, "gen");
  need_cols(branch, 11, "branch");
  need_cols(gencost, 4, "gencost");
  if (gencost.size() != gen.size())
    fail("gencost rows (" + std::to_string(gencost.size()) +
         ") != gen rows (" + std::to_string(gen.size()) + ")");

  std::map<int, int> id2k;
  for (size_t r = 0; r < bus.size(); ++r) {
    Bus b;
    b.id = static_cast<int>(bus[r][0]);
    b.demand = cx(bus[r][2], bus[r][3]) / base;
    b.shunt = cx(bus[r][4], bus[r][5]) / base;
    b.vmax = bus[r][11];
    b.vmin = bus[r][12];
    if (b.vmin > b.vmax) fail("bus row " + std::to_string(r) + ": vmin > vmax");
    if (!id2k.emplace(b.id, static_cast<int>(net.buses.size())).second)
      fail("bus row " + std::to_string(r) + ": duplicate id " + std::to_string(b.id));
    net.buses.push_back(b);
  }

  for (size_t r = 0; r < gen.size(); ++r) {
    if (gen[r][7] <= 0) continue;  // out of service
    Gen g;
    auto it = id2k.find(static_cast<int>(gen[r][0]));
    if (it == id2k.end())
      fail("gen row " + std::to_string(r) + ": unknown bus " +
           std::to_string(static_cast<int>(gen[r][0])));
    g.bus = it->second;
    g.qmax = gen[r][3] / base;
    g.qmin = gen[r][4] / base;
    g.pmax = gen[r][8] / base;
    g.pmin = gen[r][9] / base;
    if (g.pmin > g.pmax || g.qmin > g.qmax)
      fail("gen row " + std::to_string(r) + ": inverted bounds");
    const auto& c = gencost[r];
    if (static_cast<int>(c[0]) != 2)
      fail("gencost row " + std::to_string(r) + ": only polynomial model 2 supported");
    int n = static_cast<int>(c[3]);
    if (n < 1 || n > 3 || c.size() < static_cast<size_t>(4 + n))
      fail("gencost row " + std::to_string(r) + ": need 1..3 coefficients");
    // coefficients are highest-degree first
    if (n == 3) { g.c2 = c[4]; g.c1 = c[5]; g.c0 = c[6]; }
    if (n == 2) { g.c1 = c[4]; g.c0 = c[5]; }
    if (n == 1) { g.c0 = c[4]; }
    if (g.c2 < 0) fail("gencost row " + std::to_string(r) + ": negative quadratic term");
    net.gens.push_back(g);
  }

  for (size_t r = 0; r < branch.size(); ++r) {
    if (branch[r][10] <= 0) continue;  // out of service
    Branch b;
    auto fi = id2k.find(static_cast<int>(branch[r][0]));
    auto ti = id2k.find(static_cast<int>(branch[r][1]));
    if (fi == id2k.end() || ti == id2k.end())
      fail("branch row " + std::to_string(r) + ": unknown endpoint bus");
    b.from = fi->second;
    b.to = ti->second;
    const double rr = branch[r][2], xx = branch[r][3];
    if (rr == 0.0 && xx == 0.0)
      fail("branch row " + std::to_string(r) + ": zero impedance");
    b.y_srs = 1.0 / cx(rr, xx);
    b.b_prl = branch[r][4];
    b.f_max = branch[r][5] / base;  // rateA 0 stays <= 0: unlimited
    b.tap = branch[r][8] == 0.0 ? 1.0 : branch[r][8];
    if (!(b.tap > 0)) fail("branch row " + std::to_string(r) + ": tap must be positive");
    b.shift = branch[r][9] * kPi / 180.0;
    net.branches.push_back(b);
  }

  index_edges(net);
  return net;
}

Network load_case(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::string text = ss.str();
  std::string stem = path;
  if (auto p = stem.find_last_of('/'); p != std::string::npos) stem = stem.substr(p + 1);
  if (auto p = stem.find_last_of('.'); p != std::string::npos) stem = stem.substr(0, p);
  if (text.rfind("opfnet", 0) == 0) return read_canonical(text);
  Network net = parse_matpower(text, stem);
  return net;
}

std::string write_canonical(const Network& net) {
  std::ostringstream os;
  os << "opfnet 1\n";
  os << "name " << (net.name.empty() ? "unnamed" : net.name) << "\n";
  os << "base_mva " << fmt(net.base_mva) << "\n";
  os << "buses " << net.nb() << "\n";
  for (const auto& b : net.buses)
    os << b.id << ' ' << fmt(b.demand.real()) << ' ' << fmt(b.demand.imag()) << ' '
       << fmt(b.shunt.real()) << ' ' << fmt(b.shunt.imag()) << ' '
       << fmt(b.vmin) << ' ' << fmt(b.vmax) << "\n";
  os << "gens " << net.ng() << "\n";
  for (const auto& g : net.gens)
    os << net.buses[g.bus].id << ' ' << fmt(g.pmin) << ' ' << fmt(g.pmax) << ' '
       << fmt(g.qmin) << ' ' << fmt(g.qmax) << ' ' << fmt(g.c0) << ' '
       << fmt(g.c1) << ' ' << fmt(g.c2) << "\n";
  os << "branches " << net.nl() << "\n";
  for (const auto& br : net.branches)
    os << net.buses[br.from].id << ' ' << net.buses[br.to].id << ' '
       << fmt(br.y_srs.real()) << ' ' << fmt(br.y_srs.imag()) << ' '
       << fmt(br.b_prl) << ' ' << fmt(br.tap) << ' ' << fmt(br.shift) << ' '
       << fmt(br.limited() ? br.f_max : 0.0) << "\n";
  return os.str();
}

Network read_canonical(const std::string& text) {
  std::istringstream is(text);
  std::string word;
  int version = 0;
  is >> word >> version;
  if (word != "opfnet" || version != 1) fail("not a canonical network");
  Network net;
  int n = 0;
  std::map<int, int> id2k;
  while (is >> word) {
    if (word == "name") {
      is >> net.name;
    } else if (word == "base_mva") {
      is >> net.base_mva;
    } else if (word == "buses") {
      is >> n;
      for (int k = 0; k < n; ++k) {
        Bus b;
        double dr, di, sr, si;
        is >> b.id >> dr >> di >> sr >> si >> b.vmin >> b.vmax;
        b.demand = cx(dr, di);
        b.shunt = cx(sr, si);
        id2k[b.id] = k;
        net.buses.push_back(b);
      }
    } else if (word == "gens") {
      is >> n;
      for (int k = 0; k < n; ++k) {
        Gen g;
        int id;
        is >> id >> g.pmin >> g.pmax >> g.qmin >> g.qmax >> g.c0 >> g.c1 >> g.c2;
        auto it = id2k.find(id);
        if (it == id2k.end()) fail("gen " + std::to_string(k) + ": unknown bus " + std::to_string(id));
        g.bus = it->second;
        net.gens.push_back(g);
      }
    } else if (word == "branches") {
      is >> n;
      for (int k = 0; k < n; ++k) {
        Branch b;
        int fid, tid;
        double gr, bi;
        is >> fid >> tid >> gr >> bi >> b.b_prl >> b.tap >> b.shift >> b.f_max;
        auto fi = id2k.find(fid), ti = id2k.find(tid);
        if (fi == id2k.end() || ti == id2k.end())
          fail("branch " + std::to_string(k) + ": unknown endpoint");
        b.from = fi->second;
        b.to = ti->second;
        b.y_srs = cx(gr, bi);
        net.branches.push_back(b);
      }
    } else {
      fail("unknown canonical section '" + word + "'");
    }
    if (!is && !is.eof()) fail("truncated canonical network");
  }
  index_edges(net);
  return net;
}

AdmittanceSet build_admittances(const Network& net) {
  const int nb = net.nb(), nl = net.nl(), ng = net.ng();
  AdmittanceSet adm;
  std::vector<Eigen::Triplet<cx>> yf, yt, yb;
  std::vector<Eigen::Triplet<double>> cf, ct, cg;
  adm.Yp_f.resize(nl);
  adm.Yq_f.resize(nl);
  adm.Yp_t.resize(nl);
  adm.Yq_t.resize(nl);
  for (int l = 0; l < nl; ++l) {
    const Branch& br = net.branches[l];
    const cx ys = br.y_srs;
    const double tau = br.tap;
    const cx T = std::polar(tau, br.shift);
    const cx yff = (ys + cx(0, br.b_prl / 2)) / (tau * tau);
    const cx yft = -ys / std::conj(T);
    const cx ytf = -ys / T;
    const cx ytt = ys + cx(0, br.b_prl / 2);
    yf.emplace_back(l, br.from, yff);
    yf.emplace_back(l, br.to, yft);
    yt.emplace_back(l, br.from, ytf);
    yt.emplace_back(l, br.to, ytt);
    cf.emplace_back(l, br.from, 1.0);
    ct.emplace_back(l, br.to, 1.0);
    yb.emplace_back(br.from, br.from, yff);
    yb.emplace_back(br.from, br.to, yft);
    yb.emplace_back(br.to, br.from, ytf);
    yb.emplace_back(br.to, br.to, ytt);

    const double g = ys.real(), b = ys.imag();
    const cx eio = std::polar(1.0, br.shift);
    const cx i1(0, 1);
    Eigen::Matrix2cd Ypf, Yqf, Ypt, Yqt;
    Ypf << g / (tau * tau), -eio * ys / (2 * tau),
           -std::conj(ys) / (2 * tau * eio), 0;
    Yqf << -b / (tau * tau), eio * ys / (2 * tau * i1),
           -std::conj(ys) / (2 * tau * i1 * eio), 0;
    Ypt << 0, -eio * std::conj(ys) / (2 * tau),
           -ys / (2 * tau * eio), g;
    Yqt << 0, -eio * std::conj(ys) / (2 * tau * i1),
           ys / (2 * tau * i1 * eio), -b;
    adm.Yp_f[l] = Ypf;
    adm.Yq_f[l] = Yqf;
    adm.Yp_t[l] = Ypt;
    adm.Yq_t[l] = Yqt;
  }
  for (int k = 0; k < nb; ++k)
    if (net.buses[k].shunt != cx(0, 0)) yb.emplace_back(k, k, net.buses[k].shunt);
  for (int g = 0; g < ng; ++g) cg.emplace_back(g, net.gens[g].bus, 1.0);

  adm.Y.resize(nb, nb);
  adm.Y.setFromTriplets(yb.begin(), yb.end());
  adm.Yf.resize(nl, nb);
  adm.Yf.setFromTriplets(yf.begin(), yf.end());
  adm.Yt.resize(nl, nb);
  adm.Yt.setFromTriplets(yt.begin(), yt.end());
  adm.Cf.resize(nl, nb);
  adm.Cf.setFromTriplets(cf.begin(), cf.end());
  adm.Ct.resize(nl, nb);
  adm.Ct.setFromTriplets(ct.begin(), ct.end());
  adm.Cg.resize(ng, nb);
  adm.Cg.setFromTriplets(cg.begin(), cg.end());
  return adm;
}

std::pair<CVec, CVec> branch_flow(const Network& net, const AdmittanceSet& adm,
                                  const CVec& v) {
  if (v.size() != net.nb()) fail("branch_flow: voltage dimension mismatch");
  CVec fi = adm.Yf * v, ti = adm.Yt * v;
  CVec sf(net.nl()), st(net.nl());
  for (int l = 0; l < net.nl(); ++l) {
    sf[l] = v[net.branches[l].from] * std::conj(fi[l]);
    st[l] = v[net.branches[l].to] * std::conj(ti[l]);
  }
  return {sf, st};
}

}  // namespace opfr
