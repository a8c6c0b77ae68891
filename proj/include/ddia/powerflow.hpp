#pragma once

#include <cstdint>

#include "ddia/grid.hpp"

namespace ddia {

struct StateVector {
  Vec V;      // per-bus voltage magnitude, pu
  Vec theta;  // per-bus angle, rad; slack entry is 0
};

struct LoadScenario {
  Vec Pd, Qd;  // MW / MVAr per bus
};

// Measurement stack: active branch-end flows (from then to side), reactive
// branch-end flows (from then to), bus active injections, bus reactive
// injections, bus voltage magnitudes. All flow entries cover in-service
// branches in branch order. Everything is per-unit.
struct MeasLayout {
  enum class Kind { PFlowFrom, PFlowTo, QFlowFrom, QFlowTo, PInj, QInj, Vmag };
  struct Entry {
    Kind kind;
    int element;  // branch index for flows, bus index otherwise
  };

  std::vector<Entry> entries;
  std::vector<int> live_branches;              // in-service branch indices
  std::vector<int> branch_pos;                 // branch index -> live position, -1 if off
  int n_bus = 0;

  int size() const { return static_cast<int>(entries.size()); }
  int index_of(Kind kind, int element) const;
  static MeasLayout build(const PowerGrid& grid);
};

struct BranchFlows {
  Vec pf, qf, pt, qt;  // per in-service branch, pu
};

std::pair<Vec, Vec> bus_injections(const PowerGrid& grid, const StateVector& state);
BranchFlows branch_flows(const PowerGrid& grid, const StateVector& state);

Vec measurement_function(const PowerGrid& grid, const StateVector& state);

// Rows follow MeasLayout; columns are [theta at non-slack buses; V at all
// buses], giving m x (2N-1).
Mat measurement_jacobian(const PowerGrid& grid, const StateVector& state);

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 20;
};

StateVector solve_power_flow(const PowerGrid& grid, const LoadScenario& scenario,
                             const PowerFlowOptions& opts = {});
int last_power_flow_iterations();

LoadScenario base_scenario(const PowerGrid& grid);
std::vector<LoadScenario> sample_load_scenarios(const PowerGrid& grid, int count, uint64_t seed);

// Column index of a state variable in the Jacobian ordering.
int state_index_theta(const PowerGrid& grid, int bus);
int state_index_v(const PowerGrid& grid, int bus);
Vec pack_state(const PowerGrid& grid, const StateVector& s);
StateVector unpack_state(const PowerGrid& grid, const Vec& x);

}  // namespace ddia
