#pragma once

#include <optional>
#include <set>
#include <string>
#include <unordered_map>

#include "ddia/common.hpp"

namespace ddia {

enum class BusKind { PQ = 1, PV = 2, Slack = 3 };

struct Bus {
  int id = 0;  // external id as found in the case file
  BusKind kind = BusKind::PQ;
  double Pd = 0, Qd = 0;    // base load, MW / MVAr
  double Gs = 0, Bs = 0;    // shunt at 1 pu voltage, MW / MVAr
  double baseKV = 0;
  double Vmax = 1.06, Vmin = 0.94;
  double Vm = 1.0, Va = 0.0;  // case-file initial point (informational)
};

struct Gen {
  int bus = 0;  // internal index after renumbering
  double Pg = 0, Qg = 0, Qmax = 0, Qmin = 0, Vg = 1.0, mBase = 100;
  bool on = true;
  double Pmax = 0, Pmin = 0;
};

struct Branch {
  int from = 0, to = 0;  // internal indices
  double r = 0, x = 0, b = 0;
  double rateA = 0;  // MVA limit; 0 means unlimited
  double tap = 0;    // 0 means nominal ratio 1.0
  bool on = true;
};

struct PowerGrid {
  double baseMVA = 100;
  std::vector<Bus> buses;
  std::vector<Gen> gens;
  std::vector<Branch> branches;
  CMat Y;   // bus admittance
  Mat W;    // nonnegative coupling weights |Y_ij|, zero diagonal
  int slack = -1;
  std::vector<int> ext_ids;                 // internal -> external id
  std::unordered_map<int, int> id_to_int;   // external -> internal

  int n() const { return static_cast<int>(buses.size()); }
  int n_branches() const { return static_cast<int>(branches.size()); }
  bool is_load_bus(int i) const { return buses[i].kind == BusKind::PQ; }
  std::vector<int> load_buses() const {
    std::vector<int> out;
    for (int i = 0; i < n(); ++i)
      if (is_load_bus(i)) out.push_back(i);
    return out;
  }
  double tap_of(const Branch& br) const { return br.tap == 0.0 ? 1.0 : br.tap; }
};

// Attacked buses A, boundary buses B, tie branches C (exactly one endpoint in
// A), and per-bus objective weights.
struct AttackRegion {
  std::vector<int> A;
  std::vector<int> B;
  std::vector<int> C;  // branch indices
  Vec weights;         // one weight per bus in A
};

// Attacker-side view: which branches of the true grid the attacker knows.
struct PartialGrid {
  const PowerGrid* base = nullptr;
  std::vector<bool> known;  // per branch
  double integrity = 1.0;

  bool knows_all(const std::vector<int>& branch_idx) const {
    for (int b : branch_idx)
      if (!known[static_cast<size_t>(b)]) return false;
    return true;
  }
};

PowerGrid parse_matpower_case(const std::string& text);
PowerGrid load_case_file(const std::string& path);
std::string serialize_case(const PowerGrid& grid);

CMat admittance_matrix(const PowerGrid& grid);
Mat coupling_weights(const PowerGrid& grid, const CMat& Y);
Mat normalized_laplacian(const PowerGrid& grid);

PartialGrid degrade_topology(const PowerGrid& grid, double integrity, uint64_t seed);

AttackRegion partition_region(const PowerGrid& grid, const std::set<int>& attacked);

// Grid with a branch subset removed (the attacker's wrong model when its
// knowledge is incomplete). Y/W rebuilt over the surviving branches.
PowerGrid reduced_grid(const PowerGrid& grid, const std::vector<bool>& keep_branch);

// All-pairs shortest-path hop counts over in-service branches (99 = disconnected).
Eigen::MatrixXi hop_distances(const PowerGrid& grid);

}  // namespace ddia
