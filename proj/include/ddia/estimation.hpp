#pragma once

#include "ddia/powerflow.hpp"

namespace ddia {

struct NoiseModel {
  Vec sigma;  // assumed per-measurement standard deviation (defines R)

  static NoiseModel uniform(const PowerGrid& grid, double sd);
  Vec r_diag() const { return sigma.array().square(); }
};

struct EstimationOptions {
  double tol = 1e-8;  // infinity norm of the weighted gradient
  int max_iter = 25;
};

struct EstimationResult {
  StateVector x_hat;
  Vec residual;      // z - h(x_hat)
  double objective;  // r' R^-1 r
  bool converged = false;
  int iterations = 0;
};

struct NormalizedResiduals {
  Vec r_norm;                 // |r_i| / sqrt(Omega_ii); 0 where non-testable
  std::vector<bool> testable; // false for critical measurements
};

struct BddVerdict {
  bool bad_data = false;
  std::vector<int> indices;  // flagged measurements, descending by r_norm
  double max_r_norm = 0.0;
};

struct UnobservableError : Error {
  int rank;
  UnobservableError(int rk, const std::string& msg) : Error(msg), rank(rk) {}
};

EstimationResult wls_estimate(const PowerGrid& grid, const Vec& z, const NoiseModel& noise,
                              const EstimationOptions& opts = {});

double residual_norm(const Vec& z, const PowerGrid& grid, const StateVector& x_hat);

NormalizedResiduals normalized_residuals(const EstimationResult& result, const PowerGrid& grid,
                                         const NoiseModel& noise);

BddVerdict bdd_detect(const EstimationResult& result, const PowerGrid& grid,
                      const NoiseModel& noise, double threshold = 3.0);

}  // namespace ddia
