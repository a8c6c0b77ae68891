#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "ddia/attack.hpp"
#include "ddia/powerflow.hpp"
#include "test_util.hpp"

using namespace ddia;
using Kind = MeasLayout::Kind;

namespace {

AttackSample first_feasible(const PowerGrid& g, const AttackConfig& cfg,
                            const std::vector<Vec>& pool, Rng& rng, int max_tries = 40) {
  for (int i = 0; i < max_tries; ++i) {
    AttackSample s = run_attack_trial(g, cfg, pool, rng);
    if (s.feasible) return s;
  }
  FAIL("no feasible attack trial within the attempt budget");
  return {};
}

std::set<int> neighbor_closure(const PowerGrid& g, const std::vector<int>& region) {
  std::set<int> out(region.begin(), region.end());
  for (const auto& br : g.branches) {
    if (!br.on) continue;
    bool f_in = std::count(region.begin(), region.end(), br.from) > 0;
    bool t_in = std::count(region.begin(), region.end(), br.to) > 0;
    if (f_in) out.insert(br.to);
    if (t_in) out.insert(br.from);
  }
  return out;
}

double l1_pool_distance(const CandidateSpace& sp, const Mat& pool, const Vec& coords) {
  Vec z = sp.z0 + sp.G * coords;
  double acc = 0;
  for (int j = 0; j < pool.cols(); ++j) acc += (z - pool.col(j)).cwiseAbs().sum();
  return acc;
}

}  // namespace

TEST_CASE("assumed meter accuracy distinguishes power from voltage channels") {
  PowerGrid g = load_ieee14_rated();
  MeasLayout lay = MeasLayout::build(g);
  NoiseModel nm = default_noise(g);
  REQUIRE(nm.sigma.size() == lay.size());
  for (int i = 0; i < lay.size(); ++i) {
    if (lay.entries[i].kind == Kind::Vmag) {
      CHECK(nm.sigma(i) == 0.005);
    } else {
      CHECK(nm.sigma(i) == 0.02);
    }
  }
}

TEST_CASE("meter noise scales with the requested ratio and is reproducible") {
  PowerGrid g = load_ieee14_rated();
  NoiseModel nm = default_noise(g);
  Vec z = measurement_function(g, solve_power_flow(g, base_scenario(g)));

  Rng r0(77);
  Vec same = add_meter_noise(z, nm, 0.0, r0);
  for (long i = 0; i < z.size(); ++i) CHECK(same(i) == z(i));

  Rng r1(77), r2(77), r3(123);
  Vec a = add_meter_noise(z, nm, 0.6, r1);
  Vec b = add_meter_noise(z, nm, 0.6, r2);
  Vec c = add_meter_noise(z, nm, 0.6, r3);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);   // same stream, same draw
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);    // different stream differs

  // Empirical spread of the standardized perturbation matches the ratio.
  Vec std_diff = (a - z).cwiseQuotient(nm.sigma);
  double var = std_diff.squaredNorm() / static_cast<double>(std_diff.size());
  CHECK(std::sqrt(var) > 0.45);
  CHECK(std::sqrt(var) < 0.75);
}

TEST_CASE("normal pool snapshots are deterministic, distinct and physical") {
  PowerGrid g = load_ieee14_rated();
  MeasLayout lay = MeasLayout::build(g);
  std::vector<Vec> pool = generate_normal_pool(g, 12, 31);
  std::vector<Vec> pool2 = generate_normal_pool(g, 12, 31);
  std::vector<Vec> pool3 = generate_normal_pool(g, 12, 32);
  REQUIRE(pool.size() == 12);
  CHECK((pool[0] - pool2[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pool[0] - pool3[0]).cwiseAbs().maxCoeff() > 0.0);
  for (size_t i = 0; i < pool.size(); ++i) {
    REQUIRE(pool[i].size() == lay.size());
    CHECK(pool[i].allFinite());
    for (int j = 0; j < lay.size(); ++j) {
      if (lay.entries[j].kind == Kind::Vmag) {
        CHECK(pool[i](j) > 0.8);
        CHECK(pool[i](j) < 1.2);
      }
    }
    for (size_t k = i + 1; k < pool.size(); ++k)
      CHECK((pool[i] - pool[k]).cwiseAbs().maxCoeff() > 1e-8);
  }
}

TEST_CASE("constructed attacks shift load to nowhere: transfers sum to zero") {
  PowerGrid g = load_ieee14_rated();
  AttackConfig cfg;
  cfg.set_intensity(Intensity::Medium);
  std::vector<Vec> pool = generate_normal_pool(g, 30, 11);
  Rng rng(401);
  for (int rep = 0; rep < 3; ++rep) {
    AttackSample s = first_feasible(g, cfg, pool, rng);
    REQUIRE(s.region.size() >= 2);
    CHECK(std::abs(s.delta_dp.sum()) < 1e-6);
    CHECK(std::abs(s.delta_dq.sum()) < 1e-6);

    // Per-bus shifts respect the allowed fraction of that trial's load draw;
    // scenario sampling stays within two thirds above nominal, so the budget
    // cannot exceed the nominal bound by more than that factor.
    for (size_t i = 0; i < s.region.size(); ++i) {
      const Bus& bus = g.buses[s.region[i]];
      double apparent = std::hypot(bus.Pd, bus.Qd);
      CHECK(std::abs(s.delta_dp(i)) <= cfg.delta * bus.Pd * 5.0 / 3.0 + 1e-6);
      CHECK(std::abs(s.delta_dq(i)) <= cfg.delta * apparent * 5.0 / 3.0 + 1e-6);
    }
    // A real attack moves real power somewhere.
    CHECK(s.delta_dp.cwiseAbs().maxCoeff() > 1e-3);
  }
}

TEST_CASE("composed measurements only touch the attacked neighborhood") {
  PowerGrid g = load_ieee14_rated();
  MeasLayout lay = MeasLayout::build(g);
  AttackConfig cfg;
  cfg.set_intensity(Intensity::Medium);
  std::vector<Vec> pool = generate_normal_pool(g, 30, 12);
  Rng rng(402);
  AttackSample s = first_feasible(g, cfg, pool, rng);

  std::set<int> closure = neighbor_closure(g, s.region);
  auto in_region = [&](int bus) {
    return std::count(s.region.begin(), s.region.end(), bus) > 0;
  };
  int touched = 0;
  for (int i = 0; i < lay.size(); ++i) {
    if (s.z_attacked(i) == s.z_normal(i)) continue;
    ++touched;
    const auto& e = lay.entries[i];
    switch (e.kind) {
      case Kind::PFlowFrom:
      case Kind::PFlowTo:
      case Kind::QFlowFrom:
      case Kind::QFlowTo: {
        const Branch& br = g.branches[lay.live_branches[e.element]];
        CHECK((in_region(br.from) || in_region(br.to)));
        break;
      }
      case Kind::PInj:
      case Kind::QInj:
        CHECK(closure.count(e.element) == 1);
        break;
      case Kind::Vmag:
        CHECK(closure.count(e.element) == 1);
        break;
    }
  }
  CHECK(touched > 0);
  CHECK(touched < lay.size() / 2);  // the patch stays local

  // The composed sub-network state satisfies its own power balance.
  CHECK(s.region_residual < 1e-6);
  CHECK(s.rounds <= cfg.lp_rounds);
  CHECK(s.target_branch >= 0);
  CHECK(s.overload >= cfg.sigma_overload - 0.05);
}

TEST_CASE("minimum-shift construction needs no shift without an overload target") {
  PowerGrid g = load_ieee14_rated();
  Vec z = measurement_function(g, solve_power_flow(g, base_scenario(g)));
  AttackRegion region = partition_region(g, {8, 13});

  AttackConfig cfg;
  cfg.sigma_overload = 0.0;
  RedistributionResult r0 = solve_load_redistribution(g, region, z, cfg);
  REQUIRE(r0.feasible);
  CHECK(r0.objective < 1e-8);
  CHECK(r0.delta_dp.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(r0.delta_dq.cwiseAbs().maxCoeff() < 1e-8);

  // Demanding a flow gain forces real movement, and demanding more of it
  // never gets cheaper.
  cfg.sigma_overload = 0.3;
  RedistributionResult r3 = solve_load_redistribution(g, region, z, cfg);
  REQUIRE(r3.feasible);
  CHECK(r3.objective > 0.1);
  cfg.sigma_overload = 0.45;
  RedistributionResult r45 = solve_load_redistribution(g, region, z, cfg);
  REQUIRE(r45.feasible);
  CHECK(r45.objective >= r3.objective - 1e-6);

  // The re-solved state honors the operating band of the attacked buses.
  for (int bus : region.A) {
    CHECK(r45.state.V(bus) >= g.buses[bus].Vmin - 1e-6);
    CHECK(r45.state.V(bus) <= g.buses[bus].Vmax + 1e-6);
  }
}

TEST_CASE("a zero overload requirement still composes a stealthy placement") {
  PowerGrid g = load_ieee14_rated();
  AttackConfig cfg;
  cfg.sigma_overload = 0.0;
  std::vector<Vec> pool = generate_normal_pool(g, 30, 13);
  Rng rng(403);
  // The full trial optimizes closeness to the normal pool instead of shift
  // size, so the load moves, but only within budget and without tripping
  // detection.
  AttackSample s = first_feasible(g, cfg, pool, rng);
  CHECK(std::abs(s.delta_dp.sum()) < 1e-6);
  for (size_t i = 0; i < s.region.size(); ++i) {
    CHECK(std::abs(s.delta_dp(i)) <= cfg.delta * g.buses[s.region[i]].Pd + 1e-6);
  }
  CHECK(s.bypassed_bdd);
}

TEST_CASE("impossible budgets surface as infeasible trials with a reason") {
  PowerGrid g = load_ieee14_rated();
  AttackConfig cfg;
  cfg.delta = 0.001;          // nearly no shift allowed
  cfg.sigma_overload = 0.9;   // while demanding a huge flow gain
  std::vector<Vec> pool = generate_normal_pool(g, 10, 14);
  Rng rng(404);
  for (int i = 0; i < 8; ++i) {
    AttackSample s = run_attack_trial(g, cfg, pool, rng);
    CHECK_FALSE(s.feasible);
    CHECK_FALSE(s.note.empty());
  }
}

TEST_CASE("virtuality placement finds the pool median in one dimension") {
  CandidateSpace sp;
  sp.z0 = Vec::Zero(1);
  sp.G = Mat::Ones(1, 1);
  sp.lo = Vec::Constant(1, -10.0);
  sp.hi = Vec::Constant(1, 10.0);
  Mat pool(1, 3);
  pool << 1.0, 2.0, 7.0;

  VirtualityResult r = virtuality_lp(sp, pool);
  REQUIRE(r.feasible);
  CHECK(r.coords(0) == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(r.z_touched(0) == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(r.objective == doctest::Approx(6.0).epsilon(1e-7));

  // A box that excludes the median clamps the solution to its edge.
  sp.hi = Vec::Constant(1, 1.5);
  VirtualityResult rc = virtuality_lp(sp, pool);
  REQUIRE(rc.feasible);
  CHECK(rc.coords(0) == doctest::Approx(1.5).epsilon(1e-7));
  CHECK(rc.objective == doctest::Approx(6.5).epsilon(1e-7));
}

TEST_CASE("virtuality placement reaches a lone pool point exactly") {
  CandidateSpace sp;
  sp.z0 = Vec::Zero(2);
  sp.G = Mat::Identity(2, 2);
  sp.lo = Vec::Constant(2, -5.0);
  sp.hi = Vec::Constant(2, 5.0);
  Mat pool(2, 1);
  pool << 3.0, -1.0;
  VirtualityResult r = virtuality_lp(sp, pool);
  REQUIRE(r.feasible);
  CHECK(std::abs(r.objective) < 1e-9);
  CHECK(r.z_touched(0) == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(r.z_touched(1) == doctest::Approx(-1.0).epsilon(1e-8));
}

TEST_CASE("virtuality placement certifies optimality against enumeration") {
  Rng rng(55);
  CandidateSpace sp;
  const int touched = 4;
  sp.z0 = Vec(touched);
  for (int i = 0; i < touched; ++i) sp.z0(i) = rng.uniform(-1, 1);
  sp.G = Mat(touched, 2);
  for (int i = 0; i < touched; ++i)
    for (int j = 0; j < 2; ++j) sp.G(i, j) = rng.uniform(-1, 1);
  sp.lo = Vec::Constant(2, -2.0);
  sp.hi = Vec::Constant(2, 2.0);
  sp.A_ub = Mat::Ones(1, 2);       // c0 + c1 <= 1
  sp.b_ub = Vec::Constant(1, 1.0);
  Mat pool(touched, 5);
  for (int i = 0; i < touched; ++i)
    for (int j = 0; j < 5; ++j) pool(i, j) = rng.uniform(-2, 2);

  VirtualityResult r = virtuality_lp(sp, pool);
  REQUIRE(r.feasible);

  // Reported objective is consistent with its own coordinates.
  CHECK(r.objective == doctest::Approx(l1_pool_distance(sp, pool, r.coords)).epsilon(1e-7));
  // Solution respects box and inequality constraints.
  for (int j = 0; j < 2; ++j) {
    CHECK(r.coords(j) >= sp.lo(j) - 1e-7);
    CHECK(r.coords(j) <= sp.hi(j) + 1e-7);
  }
  CHECK(r.coords.sum() <= 1.0 + 1e-7);
  // No grid point beats it.
  double best = r.objective;
  for (double c0 = -2.0; c0 <= 2.0 + 1e-12; c0 += 0.1) {
    for (double c1 = -2.0; c1 <= 2.0 + 1e-12; c1 += 0.1) {
      if (c0 + c1 > 1.0) continue;
      Vec c(2);
      c << c0, c1;
      CHECK(l1_pool_distance(sp, pool, c) >= best - 1e-7);
    }
  }

  // An equality constraint pins its coordinate.
  sp.A_eq = Mat::Zero(1, 2);
  sp.A_eq(0, 0) = 1.0;
  sp.b_eq = Vec::Constant(1, 0.5);
  VirtualityResult re = virtuality_lp(sp, pool);
  REQUIRE(re.feasible);
  CHECK(re.coords(0) == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("overload ratios follow the apparent-power change on rated lines") {
  PowerGrid g = load_ieee14_rated();
  MeasLayout lay = MeasLayout::build(g);
  Vec z = measurement_function(g, solve_power_flow(g, base_scenario(g)));

  OverloadReport zero = overload_ratio(g, z, z);
  CHECK(zero.max_ratio == 0.0);

  int rated = -1;
  for (int b = 0; b < g.n_branches(); ++b)
    if (g.branches[b].on && g.branches[b].rateA > 0) {
      rated = b;
      break;
    }
  REQUIRE(rated >= 0);
  int ip = lay.index_of(Kind::PFlowFrom, rated);
  int iq = lay.index_of(Kind::QFlowFrom, rated);
  Vec z2 = z;
  z2(ip) += 0.03;
  OverloadReport rep = overload_ratio(g, z, z2);
  double f0 = std::hypot(z(ip), z(iq)) * g.baseMVA;
  double f1 = std::hypot(z2(ip), z2(iq)) * g.baseMVA;
  double expect = std::abs(f1 - f0) / g.branches[rated].rateA;
  CHECK(rep.per_line(rated) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(rep.max_ratio == doctest::Approx(expect).epsilon(1e-12));
  CHECK(rep.post_loading(rated) == doctest::Approx(f1 / g.branches[rated].rateA).epsilon(1e-12));

  // Unrated lines report zero; a grid without ratings cannot be scored.
  PowerGrid plain = load_ieee14();
  bool any_rated = false;
  for (const auto& br : plain.branches) any_rated = any_rated || br.rateA > 0;
  if (!any_rated) {
    Vec zp = measurement_function(plain, solve_power_flow(plain, base_scenario(plain)));
    CHECK_THROWS_AS(overload_ratio(plain, zp, zp), Error);
  }
  Vec wrong = Vec::Zero(lay.size() - 1);
  CHECK_THROWS_AS(overload_ratio(g, z, wrong), Error);
}

TEST_CASE("distance index vanishes at the centroid and covers the pool") {
  Rng rng(91);
  std::vector<Vec> pool;
  Vec mean = Vec::Zero(10);
  for (int i = 0; i < 20; ++i) {
    Vec p(10);
    for (int j = 0; j < 10; ++j) p(j) = rng.gaussian(0.0, 1.0 + j * 0.1);
    pool.push_back(p);
    mean += p;
  }
  mean /= 20.0;

  DistanceIndex at_mean = distance_index(mean, pool);
  CHECK(at_mean.value < 1e-10);
  CHECK(at_mean.pool_min == 0.0);
  CHECK(at_mean.pool_max > 0.0);

  for (const Vec& p : pool) {
    DistanceIndex di = distance_index(p, pool);
    CHECK(di.value <= di.pool_max + 1e-12);
  }

  // Rigid translation of pool and probe leaves the index unchanged.
  Vec shift = Vec::Constant(10, 4.2);
  std::vector<Vec> moved;
  for (const Vec& p : pool) moved.push_back(p + shift);
  DistanceIndex a = distance_index(pool[3], pool);
  DistanceIndex b = distance_index(pool[3] + shift, moved);
  CHECK(a.value == doctest::Approx(b.value).epsilon(1e-9));

  CHECK_THROWS_AS(distance_index(mean, {}), Error);
}

TEST_CASE("naive tampering rescales exactly the targeted injections") {
  PowerGrid g = load_ieee14_rated();
  MeasLayout lay = MeasLayout::build(g);
  Vec z = measurement_function(g, solve_power_flow(g, base_scenario(g)));
  std::vector<int> buses{2, 8};
  Vec t = naive_tamper(g, z, buses, 0.3);
  for (int i = 0; i < lay.size(); ++i) {
    const auto& e = lay.entries[i];
    bool hit = (e.kind == Kind::PInj || e.kind == Kind::QInj) &&
               std::count(buses.begin(), buses.end(), e.element) > 0;
    if (hit) {
      CHECK(t(i) == doctest::Approx(z(i) * 1.3).epsilon(1e-14));
    } else {
      CHECK(t(i) == z(i));
    }
  }
  Vec untouched = naive_tamper(g, z, buses, 0.0);
  for (long i = 0; i < z.size(); ++i) CHECK(untouched(i) == z(i));
}

TEST_CASE("candidate regions are small groups of real load buses") {
  PowerGrid g = load_ieee14_rated();
  auto regions = candidate_regions(g);
  REQUIRE_FALSE(regions.empty());
  for (const auto& reg : regions) {
    CHECK(reg.size() >= 2);
    CHECK(reg.size() <= 3);
    CHECK(std::is_sorted(reg.begin(), reg.end()));
    for (int bus : reg) {
      CHECK(bus != g.slack);
      CHECK(g.is_load_bus(bus));
      CHECK(g.buses[bus].Pd > 0);
    }
  }
  // The most attractive pair couples the weakest rated corridor.
  CHECK(regions.front() == std::vector<int>{8, 13});
  auto has = [&](const std::vector<std::vector<int>>& rs, std::vector<int> want) {
    return std::count(rs.begin(), rs.end(), want) == 1;
  };
  CHECK(has(regions, {12, 13}));
  CHECK(has(regions, {11, 12}));

  auto again = candidate_regions(g);
  CHECK(regions == again);

  // Loosening the budget and easing the target only ever admits more pairs.
  auto relaxed = candidate_regions(g, 0.5, 0.2);
  for (const auto& reg : regions)
    if (reg.size() == 2) CHECK(has(relaxed, reg));
  size_t pairs = 0, relaxed_pairs = 0;
  for (const auto& reg : regions) pairs += reg.size() == 2;
  for (const auto& reg : relaxed) relaxed_pairs += reg.size() == 2;
  CHECK(relaxed_pairs > pairs);
}

TEST_CASE("attack success collapses without topology knowledge") {
  PowerGrid g = load_ieee14_rated();
  AttackConfig cfg;
  cfg.set_intensity(Intensity::Medium);
  cfg.seed = 7;

  cfg.integrity = 1.0;
  double full = attack_success_rate(g, cfg, 30, 7);
  double full_again = attack_success_rate(g, cfg, 30, 7);
  CHECK(full == full_again);

  cfg.integrity = 0.0;
  double blind = attack_success_rate(g, cfg, 30, 7);

  CHECK(full >= 0.85);
  CHECK(blind <= 0.55);
  CHECK(full > blind);
}
