#include <doctest.h>

#include <cmath>

#include "ddia/powerflow.hpp"
#include "ddia/rng.hpp"
#include "test_util.hpp"

using namespace ddia;

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

StateVector perturbed_state(const PowerGrid& g, uint64_t seed, double mag) {
  Rng rng(seed);
  StateVector s;
  s.V = Vec::Ones(g.n());
  s.theta = Vec::Zero(g.n());
  for (int i = 0; i < g.n(); ++i) {
    s.V(i) = 1.0 + mag * rng.gaussian();
    if (i != g.slack) s.theta(i) = mag * rng.gaussian();
  }
  return s;
}

}  // namespace

TEST_CASE("newton power flow reproduces the published 14-bus operating point") {
  PowerGrid g = load_ieee14();
  StateVector st = solve_power_flow(g, base_scenario(g));
  CHECK(last_power_flow_iterations() <= 6);

  CHECK(st.theta(g.slack) == 0.0);
  // Voltage-controlled buses hold their setpoints.
  CHECK(st.V(g.id_to_int.at(1)) == doctest::Approx(1.06));
  CHECK(st.V(g.id_to_int.at(2)) == doctest::Approx(1.045));
  CHECK(st.V(g.id_to_int.at(3)) == doctest::Approx(1.01));
  CHECK(st.V(g.id_to_int.at(6)) == doctest::Approx(1.07));
  CHECK(st.V(g.id_to_int.at(8)) == doctest::Approx(1.09));

  // Solved angles and load-bus magnitudes of the standard case.
  CHECK(st.theta(g.id_to_int.at(2)) == doctest::Approx(-4.98 * kDegToRad).epsilon(0.02));
  CHECK(st.theta(g.id_to_int.at(3)) == doctest::Approx(-12.72 * kDegToRad).epsilon(0.02));
  CHECK(st.theta(g.id_to_int.at(14)) == doctest::Approx(-16.04 * kDegToRad).epsilon(0.02));
  CHECK(st.V(g.id_to_int.at(4)) == doctest::Approx(1.018).epsilon(0.005));
  CHECK(st.V(g.id_to_int.at(14)) == doctest::Approx(1.036).epsilon(0.005));
}

TEST_CASE("power flow satisfies nodal balance and branch loss accounting") {
  PowerGrid g = load_ieee14();
  LoadScenario sc = base_scenario(g);
  StateVector st = solve_power_flow(g, sc);
  auto [P, Q] = bus_injections(g, st);
  BranchFlows bf = branch_flows(g, st);

  // Total injection equals total series loss (no active shunts in this case).
  double inj_sum = P.sum();
  double loss_sum = (bf.pf + bf.pt).sum();
  CHECK(inj_sum == doctest::Approx(loss_sum).epsilon(1e-9));
  for (int i = 0; i < bf.pf.size(); ++i) CHECK(bf.pf(i) + bf.pt(i) >= -1e-12);

  // Load buses meet their specified withdrawals.
  for (int i : g.load_buses()) {
    CHECK(P(i) == doctest::Approx(-sc.Pd(i) / g.baseMVA).epsilon(1e-8));
    CHECK(Q(i) == doctest::Approx(-sc.Qd(i) / g.baseMVA).epsilon(1e-8));
  }
}

TEST_CASE("measurement stack concatenates flows, injections, and magnitudes") {
  PowerGrid g = load_ieee14();
  MeasLayout ml = MeasLayout::build(g);
  const int f = static_cast<int>(ml.live_branches.size());
  CHECK(f == 20);
  CHECK(ml.size() == 4 * f + 3 * g.n());

  StateVector st = solve_power_flow(g, base_scenario(g));
  Vec h = measurement_function(g, st);
  REQUIRE(h.size() == ml.size());

  auto [P, Q] = bus_injections(g, st);
  BranchFlows bf = branch_flows(g, st);
  for (int k = 0; k < ml.size(); ++k) {
    const auto& e = ml.entries[static_cast<size_t>(k)];
    double expect = 0;
    switch (e.kind) {
      case MeasLayout::Kind::PFlowFrom: expect = bf.pf(ml.branch_pos[e.element]); break;
      case MeasLayout::Kind::PFlowTo: expect = bf.pt(ml.branch_pos[e.element]); break;
      case MeasLayout::Kind::QFlowFrom: expect = bf.qf(ml.branch_pos[e.element]); break;
      case MeasLayout::Kind::QFlowTo: expect = bf.qt(ml.branch_pos[e.element]); break;
      case MeasLayout::Kind::PInj: expect = P(e.element); break;
      case MeasLayout::Kind::QInj: expect = Q(e.element); break;
      case MeasLayout::Kind::Vmag: expect = st.V(e.element); break;
    }
    CHECK(h(k) == doctest::Approx(expect).epsilon(1e-14));
    CHECK(ml.index_of(e.kind, e.element) == k);
  }
}

TEST_CASE("measurement jacobian matches central finite differences") {
  PowerGrid g = load_ieee14();
  StateVector st = perturbed_state(g, 3, 0.02);
  Mat J = measurement_jacobian(g, st);
  const int nx = 2 * g.n() - 1;
  REQUIRE(J.cols() == nx);
  REQUIRE(J.rows() == MeasLayout::build(g).size());

  Vec x0 = pack_state(g, st);
  const double h = 1e-6;
  double worst = 0;
  for (int c = 0; c < nx; ++c) {
    Vec xp = x0, xm = x0;
    xp(c) += h;
    xm(c) -= h;
    Vec fp = measurement_function(g, unpack_state(g, xp));
    Vec fm = measurement_function(g, unpack_state(g, xm));
    Vec fd = (fp - fm) / (2 * h);
    worst = std::max(worst, (J.col(c) - fd).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("state packing round-trips and indexes every variable once") {
  PowerGrid g = load_ieee14();
  StateVector st = perturbed_state(g, 11, 0.05);
  Vec x = pack_state(g, st);
  REQUIRE(x.size() == 2 * g.n() - 1);
  StateVector back = unpack_state(g, x);
  CHECK((back.V - st.V).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.theta - st.theta).cwiseAbs().maxCoeff() == 0.0);

  std::vector<bool> used(static_cast<size_t>(x.size()), false);
  for (int i = 0; i < g.n(); ++i) {
    int vi = state_index_v(g, i);
    CHECK(vi >= 0);
    CHECK(vi < x.size());
    CHECK_FALSE(used[static_cast<size_t>(vi)]);
    used[static_cast<size_t>(vi)] = true;
    if (i == g.slack) continue;
    int ti = state_index_theta(g, i);
    CHECK(ti >= 0);
    CHECK(ti < x.size());
    CHECK_FALSE(used[static_cast<size_t>(ti)]);
    used[static_cast<size_t>(ti)] = true;
  }
  for (bool u : used) CHECK(u);
}

TEST_CASE("load scenario sampling is reproducible and stays non-negative") {
  PowerGrid g = load_ieee14();
  auto a = sample_load_scenarios(g, 40, 5);
  auto b = sample_load_scenarios(g, 40, 5);
  REQUIRE(a.size() == 40);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i].Pd - b[i].Pd).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a[i].Qd - b[i].Qd).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a[i].Pd.minCoeff() >= 0.0);
  }
  auto c = sample_load_scenarios(g, 40, 6);
  CHECK((a[0].Pd - c[0].Pd).cwiseAbs().maxCoeff() > 0.0);

  // Sample mean tracks the base load within Monte Carlo error.
  int big = 400;
  auto pool = sample_load_scenarios(g, big, 9);
  Vec mean = Vec::Zero(g.n());
  for (const auto& sc : pool) mean += sc.Pd;
  mean /= big;
  for (int i = 0; i < g.n(); ++i) {
    double sd = g.buses[i].Pd / 6.0;
    CHECK(std::abs(mean(i) - g.buses[i].Pd) <= 4.0 * sd / std::sqrt(double(big)) + 1e-12);
  }
}

TEST_CASE("power flow reports non-convergence on an infeasible loading") {
  PowerGrid g = load_ieee14();
  LoadScenario sc = base_scenario(g);
  sc.Pd = sc.Pd.array() * 50.0;  // far beyond any transfer capability
  CHECK_THROWS_AS(solve_power_flow(g, sc), NumericalError);
}

TEST_CASE("power flow respects switched-off branches") {
  PowerGrid toy = load_toy4();
  StateVector full = solve_power_flow(toy, base_scenario(toy));
  std::vector<bool> keep{true, true, true, false};  // drop the 3-4 line
  PowerGrid cut = reduced_grid(toy, keep);
  StateVector part = solve_power_flow(cut, base_scenario(cut));
  // Same loads now routed differently: angles must differ noticeably.
  CHECK((full.theta - part.theta).cwiseAbs().maxCoeff() > 1e-3);
  // The dropped line no longer appears in the layout.
  MeasLayout ml = MeasLayout::build(cut);
  CHECK(ml.live_branches.size() == 3);
  CHECK(ml.size() == 4 * 3 + 3 * 4);
}
