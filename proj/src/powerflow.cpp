#include "ddia/powerflow.hpp"

#include <cmath>

#include "ddia/rng.hpp"

namespace ddia {

namespace {

// Two-port admittance of a branch with an off-nominal tap on the from side.
struct TwoPort {
  cplx yff, yft, ytf, ytt;
};

TwoPort two_port(const PowerGrid& grid, const Branch& br) {
  cplx ys = 1.0 / cplx(br.r, br.x);
  cplx bc(0.0, br.b / 2.0);
  double tap = grid.tap_of(br);
  return {(ys + bc) / (tap * tap), -ys / tap, -ys / tap, ys + bc};
}

int local_pf_iterations = 0;

}  // namespace

int MeasLayout::index_of(Kind kind, int element) const {
  const int f = static_cast<int>(live_branches.size());
  auto flow_index = [&](int block) {
    int pos = branch_pos[static_cast<size_t>(element)];
    return pos < 0 ? -1 : block * f + pos;
  };
  switch (kind) {
    case Kind::PFlowFrom: return flow_index(0);
    case Kind::PFlowTo: return flow_index(1);
    case Kind::QFlowFrom: return flow_index(2);
    case Kind::QFlowTo: return flow_index(3);
    case Kind::PInj: return 4 * f + element;
    case Kind::QInj: return 4 * f + n_bus + element;
    case Kind::Vmag: return 4 * f + 2 * n_bus + element;
  }
  return -1;
}

MeasLayout MeasLayout::build(const PowerGrid& grid) {
  MeasLayout ml;
  ml.n_bus = grid.n();
  ml.branch_pos.assign(static_cast<size_t>(grid.n_branches()), -1);
  for (int b = 0; b < grid.n_branches(); ++b) {
    if (grid.branches[static_cast<size_t>(b)].on) {
      ml.branch_pos[static_cast<size_t>(b)] = static_cast<int>(ml.live_branches.size());
      ml.live_branches.push_back(b);
    }
  }
  auto push_flows = [&](Kind kind) {
    for (int b : ml.live_branches) ml.entries.push_back({kind, b});
  };
  push_flows(Kind::PFlowFrom);
  push_flows(Kind::PFlowTo);
  push_flows(Kind::QFlowFrom);
  push_flows(Kind::QFlowTo);
  for (int i = 0; i < ml.n_bus; ++i) ml.entries.push_back({Kind::PInj, i});
  for (int i = 0; i < ml.n_bus; ++i) ml.entries.push_back({Kind::QInj, i});
  for (int i = 0; i < ml.n_bus; ++i) ml.entries.push_back({Kind::Vmag, i});
  return ml;
}

std::pair<Vec, Vec> bus_injections(const PowerGrid& grid, const StateVector& state) {
  const int n = grid.n();
  CVec vc(n);
  for (int i = 0; i < n; ++i) vc(i) = std::polar(state.V(i), state.theta(i));
  CVec s = vc.array() * (grid.Y * vc).conjugate().array();
  return {s.real(), s.imag()};
}

BranchFlows branch_flows(const PowerGrid& grid, const StateVector& state) {
  MeasLayout ml = MeasLayout::build(grid);
  const int f = static_cast<int>(ml.live_branches.size());
  BranchFlows out;
  out.pf = Vec::Zero(f);
  out.qf = Vec::Zero(f);
  out.pt = Vec::Zero(f);
  out.qt = Vec::Zero(f);
  for (int k = 0; k < f; ++k) {
    const Branch& br = grid.branches[static_cast<size_t>(ml.live_branches[static_cast<size_t>(k)])];
    TwoPort tp = two_port(grid, br);
    cplx vf = std::polar(state.V(br.from), state.theta(br.from));
    cplx vt = std::polar(state.V(br.to), state.theta(br.to));
    cplx sf = vf * std::conj(tp.yff * vf + tp.yft * vt);
    cplx st = vt * std::conj(tp.ytf * vf + tp.ytt * vt);
    out.pf(k) = sf.real();
    out.qf(k) = sf.imag();
    out.pt(k) = st.real();
    out.qt(k) = st.imag();
  }
  return out;
}

Vec measurement_function(const PowerGrid& grid, const StateVector& state) {
  BranchFlows fl = branch_flows(grid, state);
  auto [p, q] = bus_injections(grid, state);
  const int f = static_cast<int>(fl.pf.size());
  const int n = grid.n();
  Vec z(4 * f + 3 * n);
  z.segment(0, f) = fl.pf;
  z.segment(f, f) = fl.pt;
  z.segment(2 * f, f) = fl.qf;
  z.segment(3 * f, f) = fl.qt;
  z.segment(4 * f, n) = p;
  z.segment(4 * f + n, n) = q;
  z.segment(4 * f + 2 * n, n) = state.V;
  return z;
}

int state_index_theta(const PowerGrid& grid, int bus) {
  if (bus == grid.slack) return -1;
  return bus < grid.slack ? bus : bus - 1;
}

int state_index_v(const PowerGrid& grid, int bus) { return grid.n() - 1 + bus; }

Vec pack_state(const PowerGrid& grid, const StateVector& s) {
  const int n = grid.n();
  Vec x(2 * n - 1);
  for (int i = 0; i < n; ++i) {
    int it = state_index_theta(grid, i);
    if (it >= 0) x(it) = s.theta(i);
    x(state_index_v(grid, i)) = s.V(i);
  }
  return x;
}

StateVector unpack_state(const PowerGrid& grid, const Vec& x) {
  const int n = grid.n();
  StateVector s;
  s.V = Vec::Zero(n);
  s.theta = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    int it = state_index_theta(grid, i);
    s.theta(i) = it >= 0 ? x(it) : 0.0;
    s.V(i) = x(state_index_v(grid, i));
  }
  return s;
}

Mat measurement_jacobian(const PowerGrid& grid, const StateVector& state) {
  const int n = grid.n();
  MeasLayout ml = MeasLayout::build(grid);
  const int f = static_cast<int>(ml.live_branches.size());
  const int m = 4 * f + 3 * n;
  const int nx = 2 * n - 1;
  Mat H = Mat::Zero(m, nx);

  const Mat G = grid.Y.real();
  const Mat B = grid.Y.imag();
  auto [P, Q] = bus_injections(grid, state);

  auto add = [&](int row, int col, double v) {
    if (col >= 0) H(row, col) += v;
  };

  // Bus injection partials.
  for (int i = 0; i < n; ++i) {
    int rp = 4 * f + i;
    int rq = 4 * f + n + i;
    double vi = state.V(i);
    for (int j = 0; j < n; ++j) {
      if (G(i, j) == 0.0 && B(i, j) == 0.0 && i != j) continue;
      double vj = state.V(j);
      double tij = state.theta(i) - state.theta(j);
      double c = std::cos(tij), s = std::sin(tij);
      if (j != i) {
        add(rp, state_index_theta(grid, j), vi * vj * (G(i, j) * s - B(i, j) * c));
        add(rp, state_index_v(grid, j), vi * (G(i, j) * c + B(i, j) * s));
        add(rq, state_index_theta(grid, j), -vi * vj * (G(i, j) * c + B(i, j) * s));
        add(rq, state_index_v(grid, j), vi * (G(i, j) * s - B(i, j) * c));
      }
    }
    add(rp, state_index_theta(grid, i), -Q(i) - B(i, i) * vi * vi);
    add(rp, state_index_v(grid, i), P(i) / vi + G(i, i) * vi);
    add(rq, state_index_theta(grid, i), P(i) - G(i, i) * vi * vi);
    add(rq, state_index_v(grid, i), Q(i) / vi - B(i, i) * vi);
  }

  // Branch-end flow partials.
  for (int k = 0; k < f; ++k) {
    const Branch& br = grid.branches[static_cast<size_t>(ml.live_branches[static_cast<size_t>(k)])];
    TwoPort tp = two_port(grid, br);
    auto fill_side = [&](int row_p, int row_q, int a, int b, cplx yaa, cplx yab) {
      double va = state.V(a), vb = state.V(b);
      double tab = state.theta(a) - state.theta(b);
      double c = std::cos(tab), s = std::sin(tab);
      double gaa = yaa.real(), baa = yaa.imag();
      double gab = yab.real(), bab = yab.imag();
      // p = gaa va^2 + va vb (gab c + bab s)
      // q = -baa va^2 + va vb (gab s - bab c)
      add(row_p, state_index_theta(grid, a), va * vb * (-gab * s + bab * c));
      add(row_p, state_index_theta(grid, b), va * vb * (gab * s - bab * c));
      add(row_p, state_index_v(grid, a), 2 * gaa * va + vb * (gab * c + bab * s));
      add(row_p, state_index_v(grid, b), va * (gab * c + bab * s));
      add(row_q, state_index_theta(grid, a), va * vb * (gab * c + bab * s));
      add(row_q, state_index_theta(grid, b), -va * vb * (gab * c + bab * s));
      add(row_q, state_index_v(grid, a), -2 * baa * va + vb * (gab * s - bab * c));
      add(row_q, state_index_v(grid, b), va * (gab * s - bab * c));
    };
    fill_side(k, 2 * f + k, br.from, br.to, tp.yff, tp.yft);
    fill_side(f + k, 3 * f + k, br.to, br.from, tp.ytt, tp.ytf);
  }

  // Voltage magnitude rows.
  for (int i = 0; i < n; ++i) H(4 * f + 2 * n + i, state_index_v(grid, i)) = 1.0;
  return H;
}

LoadScenario base_scenario(const PowerGrid& grid) {
  const int n = grid.n();
  LoadScenario sc;
  sc.Pd = Vec::Zero(n);
  sc.Qd = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    sc.Pd(i) = grid.buses[static_cast<size_t>(i)].Pd;
    sc.Qd(i) = grid.buses[static_cast<size_t>(i)].Qd;
  }
  return sc;
}

StateVector solve_power_flow(const PowerGrid& grid, const LoadScenario& scenario,
                             const PowerFlowOptions& opts) {
  const int n = grid.n();
  // Specified injections: generation minus load, per unit.
  Vec pg = Vec::Zero(n), vset = Vec::Zero(n);
  std::vector<bool> has_set(static_cast<size_t>(n), false);
  for (const auto& g : grid.gens) {
    if (!g.on) continue;
    pg(g.bus) += g.Pg / grid.baseMVA;
    vset(g.bus) = g.Vg;
    has_set[static_cast<size_t>(g.bus)] = true;
  }
  Vec psp = pg - scenario.Pd / grid.baseMVA;
  Vec qsp = -scenario.Qd / grid.baseMVA;

  StateVector st;
  st.V = Vec::Ones(n);
  st.theta = Vec::Zero(n);
  for (int i = 0; i < n; ++i)
    if (has_set[static_cast<size_t>(i)] && grid.buses[static_cast<size_t>(i)].kind != BusKind::PQ)
      st.V(i) = vset(i);

  std::vector<int> ang_vars, mag_vars;
  for (int i = 0; i < n; ++i) {
    if (i != grid.slack) ang_vars.push_back(i);
    if (grid.buses[static_cast<size_t>(i)].kind == BusKind::PQ) mag_vars.push_back(i);
  }
  const int nv = static_cast<int>(ang_vars.size() + mag_vars.size());

  for (int it = 0; it <= opts.max_iter; ++it) {
    auto [P, Q] = bus_injections(grid, st);
    Vec mis(nv);
    int row = 0;
    for (int i : ang_vars) mis(row++) = psp(i) - P(i);
    for (int i : mag_vars) mis(row++) = qsp(i) - Q(i);
    if (mis.cwiseAbs().maxCoeff() < opts.tol) {
      local_pf_iterations = it;
      return st;
    }
    if (it == opts.max_iter) break;

    // Assemble the power-flow Jacobian from injection partials.
    Mat Hfull = measurement_jacobian(grid, st);
    MeasLayout ml = MeasLayout::build(grid);
    const int f = static_cast<int>(ml.live_branches.size());
    Mat J(nv, nv);
    for (int r = 0; r < nv; ++r) {
      int meas_row = r < static_cast<int>(ang_vars.size())
                         ? 4 * f + ang_vars[static_cast<size_t>(r)]
                         : 4 * f + n + mag_vars[static_cast<size_t>(r - ang_vars.size())];
      int c = 0;
      for (int i : ang_vars) J(r, c++) = Hfull(meas_row, state_index_theta(grid, i));
      for (int i : mag_vars) J(r, c++) = Hfull(meas_row, state_index_v(grid, i));
    }
    Eigen::PartialPivLU<Mat> lu(J);
    Vec dx = lu.solve(mis);
    if (!dx.allFinite())
      throw NumericalError("power flow Jacobian is singular");
    int c = 0;
    for (int i : ang_vars) st.theta(i) += dx(c++);
    for (int i : mag_vars) st.V(i) += dx(c++);
  }
  auto [P, Q] = bus_injections(grid, st);
  double worst = 0;
  for (int i : ang_vars) worst = std::max(worst, std::abs(psp(i) - P(i)));
  for (int i : mag_vars) worst = std::max(worst, std::abs(qsp(i) - Q(i)));
  throw NumericalError("power flow did not converge in " + std::to_string(opts.max_iter) +
                       " iterations; final mismatch " + std::to_string(worst) + " pu");
}

int last_power_flow_iterations() { return local_pf_iterations; }

std::vector<LoadScenario> sample_load_scenarios(const PowerGrid& grid, int count, uint64_t seed) {
  if (count < 1) throw Error("scenario count must be >= 1");
  Rng rng(seed);
  std::vector<LoadScenario> out;
  out.reserve(static_cast<size_t>(count));
  const int n = grid.n();
  for (int k = 0; k < count; ++k) {
    LoadScenario sc;
    sc.Pd = Vec::Zero(n);
    sc.Qd = Vec::Zero(n);
    for (int i = 0; i < n; ++i) {
      double bp = grid.buses[static_cast<size_t>(i)].Pd;
      double bq = grid.buses[static_cast<size_t>(i)].Qd;
      double p = bp + (std::abs(bp) / 6.0) * rng.gaussian();
      double q = bq + (std::abs(bq) / 6.0) * rng.gaussian();
      sc.Pd(i) = bp >= 0 ? std::max(0.0, p) : p;
      sc.Qd(i) = bq >= 0 ? std::max(0.0, q) : q;
    }
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace ddia
