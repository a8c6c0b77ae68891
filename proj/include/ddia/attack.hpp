#pragma once

#include <string>
#include <vector>

#include "ddia/estimation.hpp"
#include "ddia/evalkit.hpp"
#include "ddia/simplex.hpp"

namespace ddia {

enum class Intensity { Weak, Medium, Strong };

struct AttackConfig {
  std::vector<int> region_buses;  // preferred attacked buses; empty = auto-pick
  double delta = 0.25;            // allowed load-change fraction per bus
  double sigma_overload = 0.4;    // required flow gain on the target line, per unit of rating
  int pool_size = 50;             // normal-measurement pool size
  double integrity = 1.0;         // fraction of branches the attacker knows
  Intensity intensity = Intensity::Medium;
  uint64_t seed = 1;
  double noise_ratio = 0.6;       // true meter noise / assumed meter noise
  double drift_margin = 0.75;     // tie-entry drift window, in assumed sigmas
  int lp_rounds = 15;             // sequential linearization cap
  int window_T = 12;              // dataset window length

  void set_intensity(Intensity level);
  void validate() const;
};

struct AttackSample {
  bool feasible = false;
  Vec z_normal;                // operator-layout snapshot before the attack
  Vec z_attacked;              // after composition
  std::vector<int> region;     // attacked buses (internal indices)
  Vec delta_dp, delta_dq;      // MW / MVAr shift per region bus
  double overload = 0;         // |dF| / F_max on the target line
  double post_loading = 0;     // post-attack F / F_max on the target line
  int target_branch = -1;
  double distance = 0;         // distance index of z_attacked against the pool
  double pool_max = 0;         // upper end of the pool's own index range
  bool bypassed_bdd = false;
  double max_r_norm = 0;
  double region_residual = 0;  // port sub-network mismatch of the composed state
  int rounds = 0;              // linearization rounds used
  bool exact_model = false;    // attacker had full topology for the region
  std::string note;            // failure reason when infeasible
};

// Assumed meter standard deviations: 0.02 pu for power entries, 0.005 pu for
// voltage magnitudes.
NoiseModel default_noise(const PowerGrid& grid);
Vec add_meter_noise(const Vec& z, const NoiseModel& noise, double ratio, Rng& rng);

// n independent load scenarios solved to measurement vectors h(x).
std::vector<Vec> generate_normal_pool(const PowerGrid& grid, int n, uint64_t seed);

struct RedistributionResult {
  bool feasible = false;
  Vec delta_dp, delta_dq;  // MW / MVAr per region bus
  StateVector state;       // post-attack state under the attacker's model
  double objective = 0;    // sum of absolute load shifts, MW + MVAr
  int rounds = 0;
  double region_residual = 0;
  std::string note;
};

// Minimal total load shift satisfying net-zero transfer, per-bus bounds,
// boundary-drift windows, voltage limits and (when sigma_overload > 0) the
// target-line flow gain. Nonlinear feasibility restored by re-solving the
// region sub-network between LP rounds.
RedistributionResult solve_load_redistribution(const PowerGrid& attacker_grid,
                                               const AttackRegion& region, const Vec& z_base,
                                               const AttackConfig& cfg);

// Affine candidate set for the stealth-placement step: touched measurement
// entries move as z = z0 + G * coords, with box bounds and extra linear
// constraints on the coordinates.
struct CandidateSpace {
  Vec z0;
  Mat G;
  Vec lo, hi;
  Mat A_eq;
  Vec b_eq;
  Mat A_ub;
  Vec b_ub;
};

struct VirtualityResult {
  bool feasible = false;
  Vec coords;
  Vec z_touched;
  double objective = 0;  // sum over pool of L1 distances on touched entries
  int cut_rounds = 0;
};

// Minimizes the summed L1 distance from the candidate point to every pool
// column, by lazily cutting the per-entry piecewise-linear distance terms.
VirtualityResult virtuality_lp(const CandidateSpace& space, const Mat& pool_touched);

struct OverloadReport {
  double max_ratio = 0;   // max |dF| / F_max over rated lines
  Vec per_line;           // |dF| / F_max per branch (0 for unrated)
  Vec post_loading;       // F_after / F_max per branch (0 for unrated)
};

// Flow changes implied by the flow entries of the two measurement vectors.
OverloadReport overload_ratio(const PowerGrid& grid, const Vec& z_before, const Vec& z_after);

struct DistanceIndex {
  double value = 0;
  double pool_min = 0;
  double pool_max = 0;
};

// Euclidean distance from the pool centroid in the plane of the pool's top two
// principal directions.
DistanceIndex distance_index(const Vec& z, const std::vector<Vec>& pool);

// Crude uncoordinated tamper: scales the injection entries at the given buses.
Vec naive_tamper(const PowerGrid& grid, const Vec& z, const std::vector<int>& buses,
                 double factor);

// Small load-bus regions containing at least one rated internal line whose
// overload target looks reachable under the given shift budget, ordered by
// preference.
std::vector<std::vector<int>> candidate_regions(const PowerGrid& grid, double delta = 0.25,
                                                double sigma_overload = 0.4);

// One full trial: scenario, meter noise, attacker knowledge draw, region pick,
// construction, composition, operator-side detection, scoring.
AttackSample run_attack_trial(const PowerGrid& grid, const AttackConfig& cfg,
                              const std::vector<Vec>& pool, Rng& rng);

// Fraction of trials whose composed measurements pass bad-data detection.
double attack_success_rate(const PowerGrid& grid, const AttackConfig& cfg, int trials,
                           uint64_t seed);

Dataset generate_attack_dataset(const PowerGrid& grid, const AttackConfig& cfg, int n_normal,
                                int n_attacked, uint64_t seed);

}  // namespace ddia
