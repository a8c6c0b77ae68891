#include "ddia/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace ddia {

void AttackConfig::set_intensity(Intensity level) {
  intensity = level;
  switch (level) {
    case Intensity::Weak:
      delta = 0.1;
      sigma_overload = 0.2;
      break;
    case Intensity::Medium:
      delta = 0.25;
      sigma_overload = 0.4;
      break;
    case Intensity::Strong:
      delta = 0.5;
      sigma_overload = 0.6;
      break;
  }
}

void AttackConfig::validate() const {
  if (!(delta > 0.0) || delta > 1.0) throw ConfigError("delta must lie in (0, 1]");
  if (sigma_overload < 0.0) throw ConfigError("sigma_overload must be non-negative");
  if (pool_size < 2) throw ConfigError("pool_size must be at least 2");
  if (integrity < 0.0 || integrity > 1.0) throw ConfigError("integrity must lie in [0, 1]");
  if (window_T < 1) throw ConfigError("window_T must be positive");
  if (lp_rounds < 1) throw ConfigError("lp_rounds must be positive");
}

NoiseModel default_noise(const PowerGrid& grid) {
  MeasLayout lay = MeasLayout::build(grid);
  NoiseModel nm;
  nm.sigma.resize(lay.size());
  for (int i = 0; i < lay.size(); ++i)
    nm.sigma(i) = lay.entries[i].kind == MeasLayout::Kind::Vmag ? 0.005 : 0.02;
  return nm;
}

Vec add_meter_noise(const Vec& z, const NoiseModel& noise, double ratio, Rng& rng) {
  if (z.size() != noise.sigma.size()) throw Error("noise model size does not match measurements");
  Vec out = z;
  for (long i = 0; i < z.size(); ++i) out(i) += ratio * noise.sigma(i) * rng.gaussian();
  return out;
}

std::vector<Vec> generate_normal_pool(const PowerGrid& grid, int n, uint64_t seed) {
  if (n < 2) throw ConfigError("pool size must be at least 2");
  std::vector<Vec> pool;
  pool.reserve(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < 10 && !done; ++attempt) {
      uint64_t s = rng.next_u64();
      try {
        LoadScenario sc = sample_load_scenarios(grid, 1, s)[0];
        StateVector x = solve_power_flow(grid, sc);
        pool.push_back(measurement_function(grid, x));
        done = true;
      } catch (const NumericalError&) {
        // Divergent scenario: redraw.
      }
    }
    if (!done) throw NumericalError("10 consecutive load scenarios failed to solve");
  }
  return pool;
}

namespace {

using Kind = MeasLayout::Kind;

// Copies measurement values between two layouts of (possibly) different grids
// by matching (kind, element).
Vec map_measurements(const Vec& z_from, const MeasLayout& from, const MeasLayout& to) {
  Vec out(to.size());
  for (int i = 0; i < to.size(); ++i) {
    const auto& e = to.entries[i];
    int idx = from.index_of(e.kind, e.element);
    if (idx < 0) throw Error("measurement entry missing in source layout");
    out(i) = z_from(idx);
  }
  return out;
}

struct RegionModel {
  std::vector<int> A;
  std::vector<int> internal_br, tie_br;
  std::vector<int> touched;  // attacker-layout measurement indices
  struct DriftEntry {
    int meas;
    double sigma;
  };
  std::vector<DriftEntry> drifts;  // region-side tie-end flow entries
  int target_branch = -1;
  double rate_pu = 0;
  int tgt_p = -1, tgt_q = -1;
  std::vector<int> ucols;  // Jacobian columns of [theta_A; V_A]
};

RegionModel build_region_model(const PowerGrid& g, const MeasLayout& lay,
                               const std::vector<int>& buses, const NoiseModel& noise,
                               const Vec& z_base) {
  RegionModel rm;
  rm.A = buses;
  std::sort(rm.A.begin(), rm.A.end());
  std::vector<bool> in_A(g.n(), false);
  for (int a : rm.A) {
    if (a < 0 || a >= g.n()) throw ConfigError("region bus index out of range");
    if (a == g.slack) throw ConfigError("region may not contain the slack bus");
    if (!g.is_load_bus(a)) throw ConfigError("region buses must be load buses");
    in_A[a] = true;
  }
  for (int b = 0; b < g.n_branches(); ++b) {
    const Branch& br = g.branches[b];
    if (!br.on) continue;
    bool f = in_A[br.from], t = in_A[br.to];
    if (f && t) rm.internal_br.push_back(b);
    else if (f || t) rm.tie_br.push_back(b);
  }
  if (rm.tie_br.empty()) throw ConfigError("region has no tie lines to the rest of the grid");

  auto push_touched = [&](Kind k, int el) {
    int idx = lay.index_of(k, el);
    if (idx >= 0) rm.touched.push_back(idx);
    return idx;
  };
  for (int a : rm.A) {
    push_touched(Kind::PInj, a);
    push_touched(Kind::QInj, a);
    push_touched(Kind::Vmag, a);
  }
  for (int b : rm.internal_br) {
    push_touched(Kind::PFlowFrom, b);
    push_touched(Kind::QFlowFrom, b);
    push_touched(Kind::PFlowTo, b);
    push_touched(Kind::QFlowTo, b);
  }
  for (int b : rm.tie_br) {
    bool from_side = in_A[g.branches[b].from];
    int ip = push_touched(from_side ? Kind::PFlowFrom : Kind::PFlowTo, b);
    int iq = push_touched(from_side ? Kind::QFlowFrom : Kind::QFlowTo, b);
    if (ip >= 0) rm.drifts.push_back({ip, noise.sigma(ip)});
    if (iq >= 0) rm.drifts.push_back({iq, noise.sigma(iq)});
  }

  double best_loading = -1;
  for (int b : rm.internal_br) {
    const Branch& br = g.branches[b];
    if (br.rateA <= 0) continue;
    int ip = lay.index_of(Kind::PFlowFrom, b);
    int iq = lay.index_of(Kind::QFlowFrom, b);
    double f_pu = std::hypot(z_base(ip), z_base(iq));
    double loading = f_pu / (br.rateA / g.baseMVA);
    if (loading > best_loading) {
      best_loading = loading;
      rm.target_branch = b;
      rm.rate_pu = br.rateA / g.baseMVA;
      rm.tgt_p = ip;
      rm.tgt_q = iq;
    }
  }

  for (int a : rm.A) rm.ucols.push_back(state_index_theta(g, a));
  for (int a : rm.A) rm.ucols.push_back(state_index_v(g, a));
  return rm;
}

struct PortSolve {
  bool ok = false;
  StateVector x;
  double resid = 1e9;
  int iters = 0;
};

// Re-solves the region sub-network for given load shifts (pu), holding every
// bus outside the region at its value in x_base.
PortSolve solve_region_ports(const PowerGrid& g, const MeasLayout& lay, const RegionModel& rm,
                             const StateVector& x_base, const Vec& dD_pu) {
  const int nA = static_cast<int>(rm.A.size());
  PortSolve ps;
  ps.x = x_base;
  auto [P0, Q0] = bus_injections(g, x_base);
  Vec spec(2 * nA);
  for (int i = 0; i < nA; ++i) {
    spec(i) = P0(rm.A[i]) - dD_pu(i);
    spec(nA + i) = Q0(rm.A[i]) - dD_pu(nA + i);
  }
  for (int iter = 0; iter < 30; ++iter) {
    auto [P, Q] = bus_injections(g, ps.x);
    Vec F(2 * nA);
    for (int i = 0; i < nA; ++i) {
      F(i) = P(rm.A[i]) - spec(i);
      F(nA + i) = Q(rm.A[i]) - spec(nA + i);
    }
    ps.resid = F.lpNorm<Eigen::Infinity>();
    ps.iters = iter;
    if (ps.resid < 1e-11) {
      ps.ok = true;
      return ps;
    }
    Mat H = measurement_jacobian(g, ps.x);
    Mat J(2 * nA, 2 * nA);
    for (int i = 0; i < nA; ++i) {
      int rp = lay.index_of(Kind::PInj, rm.A[i]);
      int rq = lay.index_of(Kind::QInj, rm.A[i]);
      for (int j = 0; j < 2 * nA; ++j) {
        J(i, j) = H(rp, rm.ucols[j]);
        J(nA + i, j) = H(rq, rm.ucols[j]);
      }
    }
    Vec du = J.partialPivLu().solve(-F);
    if (!du.allFinite()) return ps;
    for (int i = 0; i < nA; ++i) {
      ps.x.theta(rm.A[i]) += du(i);
      ps.x.V(rm.A[i]) += du(nA + i);
      ps.x.V(rm.A[i]) = std::clamp(ps.x.V(rm.A[i]), 0.5, 1.5);
    }
  }
  ps.ok = ps.resid < 1e-8;
  return ps;
}

// First-order response of the region state to load shifts: du = S * dD.
Mat region_sensitivity(const PowerGrid& g, const MeasLayout& lay, const RegionModel& rm,
                       const StateVector& x_cur) {
  const int nA = static_cast<int>(rm.A.size());
  Mat H = measurement_jacobian(g, x_cur);
  Mat J(2 * nA, 2 * nA);
  for (int i = 0; i < nA; ++i) {
    int rp = lay.index_of(Kind::PInj, rm.A[i]);
    int rq = lay.index_of(Kind::QInj, rm.A[i]);
    for (int j = 0; j < 2 * nA; ++j) {
      J(i, j) = H(rp, rm.ucols[j]);
      J(nA + i, j) = H(rq, rm.ucols[j]);
    }
  }
  return -J.partialPivLu().solve(Mat::Identity(2 * nA, 2 * nA));
}

double pwl_pool_cost(double z, const Vec& pool_row) {
  double acc = 0;
  for (long k = 0; k < pool_row.size(); ++k) acc += std::abs(z - pool_row(k));
  return acc;
}

double pwl_pool_slope(double z, const Vec& pool_row) {
  double s = 0;
  for (long k = 0; k < pool_row.size(); ++k) {
    if (z > pool_row(k)) s += 1;
    else if (z < pool_row(k)) s -= 1;
  }
  return s;
}

}  // namespace

VirtualityResult virtuality_lp(const CandidateSpace& space, const Mat& pool_touched) {
  const int nv = static_cast<int>(space.G.cols());
  const int nt = static_cast<int>(space.G.rows());
  if (pool_touched.rows() != nt) throw Error("pool rows do not match candidate space entries");
  if (pool_touched.cols() < 1) throw Error("pool must be nonempty");

  struct Cut {
    int entry;
    double slope, icpt;
  };
  std::vector<Cut> cuts;
  auto add_cut = [&](int e, double at) {
    double slope = pwl_pool_slope(at, pool_touched.row(e));
    double icpt = pwl_pool_cost(at, pool_touched.row(e)) - slope * at;
    cuts.push_back({e, slope, icpt});
  };
  for (int e = 0; e < nt; ++e) {
    add_cut(e, pool_touched.row(e).minCoeff() - 1e-6);
    add_cut(e, pool_touched.row(e).maxCoeff() + 1e-6);
    add_cut(e, space.z0(e));
  }

  VirtualityResult vr;
  const int base_rows = static_cast<int>(space.A_ub.rows());
  for (int round = 0; round < 8; ++round) {
    vr.cut_rounds = round + 1;
    LinearProgram lp;
    int n = nv + nt;
    lp.c = Vec::Zero(n);
    lp.c.tail(nt).setOnes();
    lp.lo = Vec::Constant(n, -LinearProgram::infinity());
    lp.hi = Vec::Constant(n, LinearProgram::infinity());
    lp.lo.head(nv) = space.lo;
    lp.hi.head(nv) = space.hi;
    lp.lo.tail(nt).setZero();
    lp.A_eq = Mat::Zero(space.A_eq.rows(), n);
    if (space.A_eq.rows() > 0) lp.A_eq.leftCols(nv) = space.A_eq;
    lp.b_eq = space.b_eq;
    lp.A_ub = Mat::Zero(base_rows + static_cast<int>(cuts.size()), n);
    lp.b_ub = Vec::Zero(lp.A_ub.rows());
    if (base_rows > 0) {
      lp.A_ub.topLeftCorner(base_rows, nv) = space.A_ub;
      lp.b_ub.head(base_rows) = space.b_ub;
    }
    for (size_t ci = 0; ci < cuts.size(); ++ci) {
      const Cut& cut = cuts[ci];
      int r = base_rows + static_cast<int>(ci);
      lp.A_ub.row(r).head(nv) = cut.slope * space.G.row(cut.entry);
      lp.A_ub(r, nv + cut.entry) = -1.0;
      lp.b_ub(r) = -cut.icpt - cut.slope * space.z0(cut.entry);
    }
    LpSolution sol = simplex_solve(lp);
    if (sol.status != LpStatus::Optimal) {
      vr.feasible = false;
      return vr;
    }
    vr.coords = sol.x.head(nv);
    vr.z_touched = space.z0 + space.G * vr.coords;
    bool violated = false;
    double exact = 0;
    for (int e = 0; e < nt; ++e) {
      double fe = pwl_pool_cost(vr.z_touched(e), pool_touched.row(e));
      exact += fe;
      if (fe > sol.x(nv + e) + 1e-7) {
        add_cut(e, vr.z_touched(e));
        violated = true;
      }
    }
    vr.objective = exact;
    vr.feasible = true;
    if (!violated) break;
  }
  return vr;
}

namespace {

// Shared constraint assembly for the redistribution/placement LPs. All linear
// pieces are taken at the current operating point (x_cur, dD_cur).
struct RegionLinearization {
  CandidateSpace space;        // bounds + equalities + drift/voltage/overload rows
  Vec dD_cur;
  Vec h_base, h_cur;
  double target_gain_cur = 0;  // current F - F(base)
};

RegionLinearization linearize_region(const PowerGrid& g, const MeasLayout& lay,
                                     const RegionModel& rm, const StateVector& x_base,
                                     const StateVector& x_cur, const Vec& dD_cur,
                                     const AttackConfig& cfg, bool want_overload) {
  const int nA = static_cast<int>(rm.A.size());
  const int nv = 2 * nA;
  RegionLinearization L;
  L.dD_cur = dD_cur;
  L.h_base = measurement_function(g, x_base);
  L.h_cur = measurement_function(g, x_cur);
  Mat S = region_sensitivity(g, lay, rm, x_cur);
  Mat H = measurement_jacobian(g, x_cur);

  auto hrow_u = [&](int meas) {
    Vec r(nv);
    for (int j = 0; j < nv; ++j) r(j) = H(meas, rm.ucols[j]);
    return r;
  };

  // Candidate coordinates are the load shifts themselves (pu).
  const int nt = static_cast<int>(rm.touched.size());
  L.space.G = Mat::Zero(nt, nv);
  L.space.z0 = Vec::Zero(nt);
  for (int e = 0; e < nt; ++e) {
    int meas = rm.touched[e];
    Vec gz = S.transpose() * hrow_u(meas);  // d z_e / d dD
    L.space.G.row(e) = gz.transpose();
    L.space.z0(e) = L.h_cur(meas) - gz.dot(dD_cur);
  }

  // Per-bus shift bounds from the attacker's estimated loads.
  auto [Pb, Qb] = bus_injections(g, x_base);
  L.space.lo = Vec::Zero(nv);
  L.space.hi = Vec::Zero(nv);
  for (int i = 0; i < nA; ++i) {
    double pd = std::max(-Pb(rm.A[i]), 0.0);
    double qd = -Qb(rm.A[i]);
    double s_mag = std::hypot(pd, qd);
    L.space.lo(i) = -cfg.delta * pd;
    L.space.hi(i) = cfg.delta * pd;
    L.space.lo(nA + i) = -cfg.delta * s_mag;
    L.space.hi(nA + i) = cfg.delta * s_mag;
  }

  // Net-zero transfer, active and reactive.
  L.space.A_eq = Mat::Zero(2, nv);
  L.space.A_eq.row(0).head(nA).setOnes();
  L.space.A_eq.row(1).tail(nA).setOnes();
  L.space.b_eq = Vec::Zero(2);

  std::vector<Vec> rows;
  std::vector<double> rhs;
  // Tie-end drift windows: |h_e(x') - h_e(x_base)| <= margin * sigma_e.
  for (const auto& d : rm.drifts) {
    Vec gd = S.transpose() * hrow_u(d.meas);
    double drift0 = L.h_cur(d.meas) - L.h_base(d.meas) - gd.dot(dD_cur);
    double win = cfg.drift_margin * d.sigma;
    rows.push_back(gd);
    rhs.push_back(win - drift0);
    rows.push_back(-gd);
    rhs.push_back(win + drift0);
  }
  // Voltage limits on region buses.
  for (int i = 0; i < nA; ++i) {
    Vec gv = S.row(nA + i).transpose();
    double v0 = x_cur.V(rm.A[i]) - gv.dot(dD_cur);
    const Bus& bus = g.buses[rm.A[i]];
    rows.push_back(gv);
    rhs.push_back(bus.Vmax - v0);
    rows.push_back(-gv);
    rhs.push_back(v0 - bus.Vmin);
  }
  // Target-line flow gain.
  if (want_overload && rm.target_branch >= 0 && cfg.sigma_overload > 0) {
    double p = L.h_cur(rm.tgt_p), q = L.h_cur(rm.tgt_q);
    double f_cur = std::hypot(p, q);
    double f_base = std::hypot(L.h_base(rm.tgt_p), L.h_base(rm.tgt_q));
    Vec gF = S.transpose() *
             ((p * hrow_u(rm.tgt_p) + q * hrow_u(rm.tgt_q)) / std::max(f_cur, 1e-9));
    double f0 = f_cur - gF.dot(dD_cur);
    L.target_gain_cur = f_cur - f_base;
    rows.push_back(-gF);
    rhs.push_back(-(cfg.sigma_overload * rm.rate_pu + f_base) + f0);
  }
  L.space.A_ub = Mat::Zero(static_cast<int>(rows.size()), nv);
  L.space.b_ub = Vec::Zero(static_cast<int>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    L.space.A_ub.row(static_cast<int>(r)) = rows[r].transpose();
    L.space.b_ub(static_cast<int>(r)) = rhs[r];
  }
  return L;
}

struct ConstructionResult {
  bool feasible = false;
  Vec dD;  // pu, [P shifts; Q shifts]
  StateVector x_final;
  double region_residual = 0;
  int rounds = 0;
  std::string note;
};

// Sequential linearization around the exactly re-solved region sub-network.
// `objective` = 0: minimize total |dD|;  1: minimize pool L1 distance.
ConstructionResult construct_attack(const PowerGrid& g, const MeasLayout& lay,
                                    const RegionModel& rm, const StateVector& x_hat,
                                    const AttackConfig& cfg, const Mat& pool_touched,
                                    int objective) {
  const int nA = static_cast<int>(rm.A.size());
  const int nv = 2 * nA;
  ConstructionResult cr;
  Vec dD = Vec::Zero(nv);
  StateVector x_cur = x_hat;
  bool want_overload = cfg.sigma_overload > 0;
  if (want_overload && rm.target_branch < 0) {
    cr.note = "no rated line inside the region";
    return cr;
  }
  for (int round = 0; round < cfg.lp_rounds; ++round) {
    cr.rounds = round + 1;
    RegionLinearization L =
        linearize_region(g, lay, rm, x_hat, x_cur, dD, cfg, want_overload);
    Vec dD_new;
    if (objective == 1) {
      VirtualityResult vr = virtuality_lp(L.space, pool_touched);
      if (!vr.feasible) {
        cr.note = "placement LP infeasible";
        return cr;
      }
      dD_new = vr.coords;
    } else {
      // min sum |dD| via epigraph variables s >= +/- dD.
      LinearProgram lp;
      int n = 2 * nv;
      lp.c = Vec::Zero(n);
      lp.c.tail(nv).setOnes();
      lp.lo = Vec::Constant(n, -LinearProgram::infinity());
      lp.hi = Vec::Constant(n, LinearProgram::infinity());
      lp.lo.head(nv) = L.space.lo;
      lp.hi.head(nv) = L.space.hi;
      lp.lo.tail(nv).setZero();
      int m_ub = static_cast<int>(L.space.A_ub.rows());
      lp.A_ub = Mat::Zero(m_ub + 2 * nv, n);
      lp.b_ub = Vec::Zero(m_ub + 2 * nv);
      lp.A_ub.topLeftCorner(m_ub, nv) = L.space.A_ub;
      lp.b_ub.head(m_ub) = L.space.b_ub;
      for (int j = 0; j < nv; ++j) {
        lp.A_ub(m_ub + 2 * j, j) = 1.0;
        lp.A_ub(m_ub + 2 * j, nv + j) = -1.0;
        lp.A_ub(m_ub + 2 * j + 1, j) = -1.0;
        lp.A_ub(m_ub + 2 * j + 1, nv + j) = -1.0;
      }
      lp.A_eq = Mat::Zero(2, n);
      lp.A_eq.topLeftCorner(2, nv) = L.space.A_eq;
      lp.b_eq = L.space.b_eq;
      LpSolution sol = simplex_solve(lp);
      if (sol.status != LpStatus::Optimal) {
        cr.note = "shift LP infeasible";
        return cr;
      }
      dD_new = sol.x.head(nv);
    }
    PortSolve ps = solve_region_ports(g, lay, rm, x_hat, dD_new);
    if (!ps.ok) {
      cr.note = "region sub-network failed to re-solve";
      return cr;
    }
    double step = (dD_new - dD).lpNorm<Eigen::Infinity>();
    dD = dD_new;
    x_cur = ps.x;
    cr.region_residual = ps.resid;
    if (step < 1e-8) break;
  }
  cr.feasible = true;
  cr.dD = dD;
  cr.x_final = x_cur;
  return cr;
}

}  // namespace

RedistributionResult solve_load_redistribution(const PowerGrid& attacker_grid,
                                               const AttackRegion& region, const Vec& z_base,
                                               const AttackConfig& cfg) {
  cfg.validate();
  MeasLayout lay = MeasLayout::build(attacker_grid);
  if (z_base.size() != lay.size()) throw Error("measurement vector does not match grid layout");
  NoiseModel noise = default_noise(attacker_grid);
  RegionModel rm = build_region_model(attacker_grid, lay, region.A, noise, z_base);
  EstimationResult est = wls_estimate(attacker_grid, z_base, noise);

  RedistributionResult out;
  Mat dummy_pool(static_cast<int>(rm.touched.size()), 1);
  dummy_pool.setZero();
  ConstructionResult cr =
      construct_attack(attacker_grid, lay, rm, est.x_hat, cfg, dummy_pool, 0);
  out.feasible = cr.feasible;
  out.rounds = cr.rounds;
  out.region_residual = cr.region_residual;
  out.note = cr.note;
  if (!cr.feasible) return out;
  int nA = static_cast<int>(rm.A.size());
  out.delta_dp = cr.dD.head(nA) * attacker_grid.baseMVA;
  out.delta_dq = cr.dD.tail(nA) * attacker_grid.baseMVA;
  out.state = cr.x_final;
  out.objective = cr.dD.cwiseAbs().sum() * attacker_grid.baseMVA;
  return out;
}

OverloadReport overload_ratio(const PowerGrid& grid, const Vec& z_before, const Vec& z_after) {
  MeasLayout lay = MeasLayout::build(grid);
  if (z_before.size() != lay.size() || z_after.size() != lay.size())
    throw Error("measurement vector does not match grid layout");
  OverloadReport rep;
  rep.per_line = Vec::Zero(grid.n_branches());
  rep.post_loading = Vec::Zero(grid.n_branches());
  bool any_rated = false;
  for (int b = 0; b < grid.n_branches(); ++b) {
    const Branch& br = grid.branches[b];
    if (!br.on || br.rateA <= 0) continue;
    any_rated = true;
    int ip = lay.index_of(Kind::PFlowFrom, b);
    int iq = lay.index_of(Kind::QFlowFrom, b);
    double f0 = std::hypot(z_before(ip), z_before(iq)) * grid.baseMVA;
    double f1 = std::hypot(z_after(ip), z_after(iq)) * grid.baseMVA;
    rep.per_line(b) = std::abs(f1 - f0) / br.rateA;
    rep.post_loading(b) = f1 / br.rateA;
    rep.max_ratio = std::max(rep.max_ratio, rep.per_line(b));
  }
  if (!any_rated) throw Error("grid has no rated lines");
  return rep;
}

DistanceIndex distance_index(const Vec& z, const std::vector<Vec>& pool) {
  if (pool.empty()) throw Error("pool must be nonempty");
  const long m = pool[0].size();
  Vec mean = Vec::Zero(m);
  for (const Vec& p : pool) mean += p;
  mean /= static_cast<double>(pool.size());
  Mat centered(pool.size(), m);
  for (size_t i = 0; i < pool.size(); ++i) centered.row(i) = (pool[i] - mean).transpose();
  Mat cov = centered.transpose() * centered / std::max<double>(1.0, pool.size() - 1.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  Mat dirs = es.eigenvectors().rightCols(2).rowwise().reverse();
  // Deterministic sign: largest-magnitude coefficient positive.
  for (int j = 0; j < 2; ++j) {
    int idx = 0;
    dirs.col(j).cwiseAbs().maxCoeff(&idx);
    if (dirs(idx, j) < 0) dirs.col(j) = -dirs.col(j);
  }
  DistanceIndex di;
  Eigen::Vector2d pz = dirs.transpose() * (z - mean);
  di.value = pz.norm();
  double mx = 0;
  for (const Vec& p : pool) {
    Eigen::Vector2d pp = dirs.transpose() * (p - mean);
    mx = std::max(mx, pp.norm());
  }
  di.pool_max = mx;
  di.pool_min = 0;
  return di;
}

Vec naive_tamper(const PowerGrid& grid, const Vec& z, const std::vector<int>& buses,
                 double factor) {
  MeasLayout lay = MeasLayout::build(grid);
  Vec out = z;
  for (int bus : buses) {
    int ip = lay.index_of(Kind::PInj, bus);
    int iq = lay.index_of(Kind::QInj, bus);
    if (ip >= 0) out(ip) *= (1.0 + factor);
    if (iq >= 0) out(iq) *= (1.0 + factor);
  }
  return out;
}

std::vector<std::vector<int>> candidate_regions(const PowerGrid& grid, double delta,
                                                double sigma_overload) {
  std::vector<std::vector<int>> out;
  std::set<std::vector<int>> seen;
  auto push = [&](std::vector<int> region) {
    std::sort(region.begin(), region.end());
    if (seen.insert(region).second) out.push_back(region);
  };
  auto eligible = [&](int bus) {
    return bus != grid.slack && grid.is_load_bus(bus) && grid.buses[bus].Pd > 0;
  };
  std::vector<std::vector<int>> pairs;
  for (int b = 0; b < grid.n_branches(); ++b) {
    const Branch& br = grid.branches[b];
    if (!br.on || br.rateA <= 0) continue;
    if (!eligible(br.from) || !eligible(br.to)) continue;
    // Rough authority check: shifting load between the two ends changes the
    // internal flow by roughly 0.6 per unit shifted, and the smaller end's
    // budget binds; skip targets clearly beyond that reach.
    double budget = delta * std::min(grid.buses[br.from].Pd, grid.buses[br.to].Pd) / grid.baseMVA;
    if (sigma_overload > 0 && sigma_overload * br.rateA / grid.baseMVA > 0.72 * budget) continue;
    push({br.from, br.to});
    pairs.push_back({br.from, br.to});
  }
  // Prefer corridors with the largest binding budget.
  auto min_load = [&](const std::vector<int>& region) {
    double m = 1e300;
    for (int bus : region) m = std::min(m, grid.buses[bus].Pd);
    return m;
  };
  std::stable_sort(pairs.begin(), pairs.end(),
                   [&](const auto& a, const auto& b) { return min_load(a) > min_load(b); });
  // One three-bus extension per pair: the smallest eligible neighbor.
  for (const auto& pr : pairs) {
    int extra = -1;
    for (int b = 0; b < grid.n_branches(); ++b) {
      const Branch& br = grid.branches[b];
      if (!br.on) continue;
      for (int side = 0; side < 2; ++side) {
        int u = side == 0 ? br.from : br.to;
        int v = side == 0 ? br.to : br.from;
        if ((u == pr[0] || u == pr[1]) && v != pr[0] && v != pr[1] && eligible(v))
          extra = (extra < 0) ? v : std::min(extra, v);
      }
    }
    if (extra >= 0) {
      std::vector<int> tri = pr;
      tri.push_back(extra);
      push(tri);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [&](const auto& a, const auto& b) { return min_load(a) > min_load(b); });
  return out;
}

namespace {

std::vector<int> region_incident_branches(const PowerGrid& g, const std::vector<int>& buses) {
  std::vector<bool> in(g.n(), false);
  for (int b : buses) in[b] = true;
  std::vector<int> out;
  for (int i = 0; i < g.n_branches(); ++i) {
    const Branch& br = g.branches[i];
    if (!br.on) continue;
    if (in[br.from] || in[br.to]) out.push_back(i);
  }
  return out;
}

std::vector<int> region_internal_branches(const PowerGrid& g, const std::vector<int>& buses) {
  std::vector<bool> in(g.n(), false);
  for (int b : buses) in[b] = true;
  std::vector<int> out;
  for (int i = 0; i < g.n_branches(); ++i) {
    const Branch& br = g.branches[i];
    if (!br.on) continue;
    if (in[br.from] && in[br.to]) out.push_back(i);
  }
  return out;
}

}  // namespace

AttackSample run_attack_trial(const PowerGrid& grid, const AttackConfig& cfg,
                              const std::vector<Vec>& pool, Rng& rng) {
  cfg.validate();
  AttackSample s;
  MeasLayout lay_true = MeasLayout::build(grid);
  NoiseModel noise_true = default_noise(grid);

  StateVector x_true;
  try {
    LoadScenario sc = sample_load_scenarios(grid, 1, rng.next_u64())[0];
    x_true = solve_power_flow(grid, sc);
  } catch (const NumericalError& e) {
    s.note = std::string("scenario power flow failed: ") + e.what();
    return s;
  }
  Vec z_clean = measurement_function(grid, x_true);
  s.z_normal = add_meter_noise(z_clean, noise_true, cfg.noise_ratio, rng);

  PartialGrid knowledge = degrade_topology(grid, cfg.integrity, rng.next_u64());
  std::vector<std::vector<int>> cands;
  if (!cfg.region_buses.empty()) cands.push_back(cfg.region_buses);
  else cands = candidate_regions(grid, cfg.delta, cfg.sigma_overload);
  if (cands.empty()) {
    s.note = "no candidate regions on this grid";
    return s;
  }

  // Candidates the attacker's knowledge can support: regions with every
  // incident branch known come first (the local model is then exact), regions
  // with only the internal branches known after (tie modelling is wrong).
  std::vector<std::pair<const std::vector<int>*, bool>> usable;
  for (const auto& cand : cands)
    if (knowledge.knows_all(region_incident_branches(grid, cand))) usable.push_back({&cand, true});
  for (const auto& cand : cands)
    if (!knowledge.knows_all(region_incident_branches(grid, cand)) &&
        knowledge.knows_all(region_internal_branches(grid, cand)))
      usable.push_back({&cand, false});

  auto finish_scoring = [&](const Vec& z_attacked) {
    s.z_attacked = z_attacked;
    try {
      EstimationResult op = wls_estimate(grid, s.z_attacked, noise_true);
      BddVerdict verdict = bdd_detect(op, grid, noise_true);
      s.bypassed_bdd = !verdict.bad_data;
      s.max_r_norm = verdict.max_r_norm;
    } catch (const Error&) {
      s.bypassed_bdd = false;
      s.max_r_norm = std::numeric_limits<double>::infinity();
    }
    if (!pool.empty()) {
      DistanceIndex di = distance_index(s.z_attacked, pool);
      s.distance = di.value;
      s.pool_max = di.pool_max;
    }
  };

  auto naive_blind = [&](const std::vector<int>& buses, const std::string& why) {
    s.region = buses;
    s.feasible = true;
    s.exact_model = false;
    s.note = why;
    s.delta_dp = Vec::Zero(static_cast<long>(buses.size()));
    s.delta_dq = Vec::Zero(static_cast<long>(buses.size()));
    finish_scoring(naive_tamper(grid, s.z_normal, buses, 0.3));
    OverloadReport rep = overload_ratio(grid, s.z_normal, s.z_attacked);
    s.overload = rep.max_ratio;
    s.post_loading = rep.post_loading.maxCoeff();
  };

  if (usable.empty()) {
    naive_blind(cands[0], "insufficient topology knowledge; blind tamper");
    return s;
  }

  // The attacker works entirely inside its own model: the true grid at full
  // integrity, the known-branch reduction otherwise.
  const PowerGrid* ag = &grid;
  PowerGrid reduced;
  if (cfg.integrity < 1.0) {
    reduced = reduced_grid(grid, knowledge.known);
    ag = &reduced;
  }

  MeasLayout lay_att;
  NoiseModel noise_att;
  Vec z_att;
  EstimationResult est;
  try {
    lay_att = MeasLayout::build(*ag);
    noise_att = default_noise(*ag);
    z_att = map_measurements(s.z_normal, lay_true, lay_att);
    est = wls_estimate(*ag, z_att, noise_att);
  } catch (const Error& e) {
    // The degraded model cannot even be estimated: fall back to an
    // uncoordinated tamper, which detection almost always catches.
    naive_blind(*usable.front().first, std::string("attacker model failure: ") + e.what());
    return s;
  }

  std::string last_note = "no usable candidate region";
  for (const auto& [region, exact] : usable) {
    try {
      RegionModel rm = build_region_model(*ag, lay_att, *region, noise_att, z_att);
      Mat pool_touched(static_cast<int>(rm.touched.size()), std::max<size_t>(pool.size(), 1));
      if (pool.empty()) pool_touched.setZero();
      for (size_t k = 0; k < pool.size(); ++k)
        for (size_t e = 0; e < rm.touched.size(); ++e) {
          const auto& ent = lay_att.entries[rm.touched[e]];
          pool_touched(static_cast<int>(e), static_cast<int>(k)) =
              pool[k](lay_true.index_of(ent.kind, ent.element));
        }

      ConstructionResult cr = construct_attack(*ag, lay_att, rm, est.x_hat, cfg, pool_touched,
                                               pool.empty() ? 0 : 1);
      if (!cr.feasible) {
        last_note = cr.note;
        continue;
      }
      s.region = *region;
      s.exact_model = exact;
      s.rounds = cr.rounds;
      s.region_residual = cr.region_residual;
      int nA = static_cast<int>(rm.A.size());
      s.delta_dp = cr.dD.head(nA) * ag->baseMVA;
      s.delta_dq = cr.dD.tail(nA) * ag->baseMVA;
      s.target_branch = rm.target_branch;

      Vec h_b = measurement_function(*ag, est.x_hat);
      Vec h_c = measurement_function(*ag, cr.x_final);
      Vec z_attacked = s.z_normal;
      for (int e : rm.touched) {
        const auto& ent = lay_att.entries[e];
        int ti = lay_true.index_of(ent.kind, ent.element);
        z_attacked(ti) += h_c(e) - h_b(e);
      }
      s.feasible = true;
      finish_scoring(z_attacked);
      OverloadReport rep = overload_ratio(grid, s.z_normal, s.z_attacked);
      if (s.target_branch >= 0) {
        s.overload = rep.per_line(s.target_branch);
        s.post_loading = rep.post_loading(s.target_branch);
      } else {
        s.overload = rep.max_ratio;
        s.post_loading = rep.post_loading.maxCoeff();
      }
      return s;
    } catch (const Error& e) {
      last_note = e.what();
    }
  }
  s.note = "construction failed on every usable region: " + last_note;
  return s;
}

double attack_success_rate(const PowerGrid& grid, const AttackConfig& cfg, int trials,
                           uint64_t seed) {
  if (trials < 1) throw ConfigError("trials must be positive");
  std::vector<Vec> pool = generate_normal_pool(grid, cfg.pool_size, seed ^ 0xdd1a5eedULL);
  Rng rng(seed);
  int ok = 0;
  for (int t = 0; t < trials; ++t) {
    AttackSample s = run_attack_trial(grid, cfg, pool, rng);
    if (s.feasible && s.bypassed_bdd) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(trials);
}

Dataset generate_attack_dataset(const PowerGrid& grid, const AttackConfig& cfg, int n_normal,
                                int n_attacked, uint64_t seed) {
  cfg.validate();
  if (n_normal < 0 || n_attacked < 0 || n_normal + n_attacked < 1)
    throw ConfigError("dataset sizes must be non-negative and total at least 1");
  Dataset ds;
  ds.label_buses = grid.load_buses();
  ds.T = cfg.window_T;
  ds.seed = seed;
  ds.grid_id = "case" + std::to_string(grid.n());
  const int N = grid.n(), T = cfg.window_T;
  const int n_labels = ds.n_labels();
  MeasLayout lay = MeasLayout::build(grid);
  NoiseModel noise = default_noise(grid);
  Rng rng(seed);

  std::vector<int> pinj(N), qinj(N);
  for (int i = 0; i < N; ++i) {
    pinj[i] = lay.index_of(Kind::PInj, i);
    qinj[i] = lay.index_of(Kind::QInj, i);
  }
  // Every timestep is an independent telemetry scan: fresh load scenario,
  // fresh meter noise. An attack switches on at a random scan in the first
  // half of the window and persists to its end, so an attacked window carries
  // a change-point followed by a patch that holds steady against the
  // scan-to-scan fluctuation.
  auto fresh_clean_z = [&]() {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 10) throw NumericalError("10 consecutive load scenarios failed to solve");
      try {
        LoadScenario sc = sample_load_scenarios(grid, 1, rng.next_u64())[0];
        StateVector x = solve_power_flow(grid, sc);
        return measurement_function(grid, x);
      } catch (const NumericalError&) {
      }
    }
  };
  auto make_window = [&](const Vec& patch, int onset) {
    InputWindow w;
    w.x = Tensor({N, 2, T});
    for (int t = 0; t < T; ++t) {
      Vec z_t = add_meter_noise(fresh_clean_z(), noise, cfg.noise_ratio, rng);
      if (t >= onset) z_t += patch;
      for (int n = 0; n < N; ++n) {
        w.x.data((static_cast<long>(n) * 2 + 0) * T + t) = z_t(pinj[n]);
        w.x.data((static_cast<long>(n) * 2 + 1) * T + t) = z_t(qinj[n]);
      }
    }
    return w;
  };

  // Normal windows.
  for (int i = 0; i < n_normal; ++i) {
    ds.windows.push_back(make_window(Vec::Zero(lay.size()), 0));
    ds.labels.push_back(Vec::Zero(n_labels));
  }

  // Attacked windows: full-knowledge constructions with randomized region and
  // strength, retried until accepted.
  std::vector<Vec> pool = generate_normal_pool(grid, cfg.pool_size, seed ^ 0xa77ac4edULL);
  auto cands = candidate_regions(grid, cfg.delta, cfg.sigma_overload);
  if (n_attacked > 0 && cands.empty()) throw ConfigError("no candidate regions on this grid");
  int made = 0;
  long attempts = 0;
  const long max_attempts = 40L * std::max(1, n_attacked);
  while (made < n_attacked) {
    if (++attempts > max_attempts)
      throw NumericalError("attack construction kept failing; dataset generation aborted");
    AttackConfig one = cfg;
    one.integrity = 1.0;
    one.region_buses = cands[rng.below(cands.size())];
    // Training attacks sit at and above the nominal strength so the corpus
    // reflects the destructive operating regime rather than threshold cases.
    one.delta = cfg.delta * rng.uniform(0.85, 1.0);
    one.sigma_overload = cfg.sigma_overload * rng.uniform(0.9, 1.3);
    AttackSample trial = run_attack_trial(grid, one, pool, rng);
    if (!(trial.feasible && trial.bypassed_bdd)) continue;
    // The trial's pre-noise snapshot is not returned; carry its measurement
    // patch into freshly scanned windows.
    Vec patch = trial.z_attacked - trial.z_normal;
    int onset = static_cast<int>(rng.below(static_cast<uint64_t>(T / 2 + 1)));
    ds.windows.push_back(make_window(patch, onset));
    Vec y = Vec::Zero(n_labels);
    for (size_t i = 0; i < trial.region.size(); ++i) {
      auto it = std::find(ds.label_buses.begin(), ds.label_buses.end(), trial.region[i]);
      if (it != ds.label_buses.end() &&
          std::hypot(trial.delta_dp(i), trial.delta_dq(i)) > 1e-9)
        y(it - ds.label_buses.begin()) = 1.0;
    }
    y(n_labels - 1) = 1.0;
    ds.labels.push_back(y);
    ++made;
  }

  // Interleave classes deterministically.
  std::vector<int> order(ds.windows.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<InputWindow> w2(ds.windows.size());
  std::vector<Vec> l2(ds.labels.size());
  for (size_t i = 0; i < order.size(); ++i) {
    w2[i] = std::move(ds.windows[order[i]]);
    l2[i] = ds.labels[order[i]];
  }
  ds.windows = std::move(w2);
  ds.labels = std::move(l2);
  std::ostringstream meta;
  meta << "delta=" << cfg.delta << " sigma=" << cfg.sigma_overload << " T=" << T;
  ds.meta = meta.str();
  return ds;
}

}  // namespace ddia
