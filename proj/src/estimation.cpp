#include "ddia/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ddia {

NoiseModel NoiseModel::uniform(const PowerGrid& grid, double sd) {
  MeasLayout ml = MeasLayout::build(grid);
  NoiseModel nm;
  nm.sigma = Vec::Constant(ml.size(), sd);
  return nm;
}

EstimationResult wls_estimate(const PowerGrid& grid, const Vec& z, const NoiseModel& noise,
                              const EstimationOptions& opts) {
  const int n = grid.n();
  const int nx = 2 * n - 1;
  if (z.size() < nx)
    throw UnobservableError(static_cast<int>(z.size()),
                            "fewer measurements than state variables");
  if (z.size() != noise.sigma.size())
    throw Error("measurement/noise dimension mismatch");

  Vec w = noise.sigma.array().square().inverse();  // R^-1 diagonal

  StateVector st;
  st.V = Vec::Ones(n);
  st.theta = Vec::Zero(n);

  auto objective_at = [&](const StateVector& s) {
    Vec r = z - measurement_function(grid, s);
    return (r.array().square() * w.array()).sum();
  };

  double obj = objective_at(st);
  EstimationResult res;
  res.converged = false;

  for (int it = 1; it <= opts.max_iter; ++it) {
    Mat H = measurement_jacobian(grid, st);
    Vec r = z - measurement_function(grid, st);
    Mat Hw = w.asDiagonal() * H;            // R^-1 H
    Mat gain = H.transpose() * Hw;          // H' R^-1 H
    Vec grad = Hw.transpose() * r;          // H' R^-1 r

    Eigen::LDLT<Mat> ldlt(gain);
    Vec dx = ldlt.solve(grad);
    // A rank-deficient gain can slip through LDLT whenever the unobservable
    // direction also has zero gradient (the flat start silently fills it in),
    // so inspect the pivots rather than the solve residual alone.
    Vec piv = ldlt.vectorD().cwiseAbs();
    bool deficient = piv.minCoeff() <= 1e-10 * piv.maxCoeff();
    double solve_err = (gain * dx - grad).cwiseAbs().maxCoeff();
    if (deficient || ldlt.info() != Eigen::Success || !dx.allFinite() ||
        solve_err > 1e-6 * std::max(1.0, grad.cwiseAbs().maxCoeff())) {
      Eigen::ColPivHouseholderQR<Mat> qr(gain);
      int rank = static_cast<int>(qr.rank());
      throw UnobservableError(
          rank, "gain matrix is rank deficient (" + std::to_string(rank) + " of " +
                    std::to_string(nx) + "): measurement set does not observe the state");
    }

    // The Newton step measured in state units is scale-free, unlike the raw
    // weighted gradient, whose magnitude carries the 1/sigma^2 weights.
    if (dx.cwiseAbs().maxCoeff() < opts.tol) {
      res.converged = true;
      res.iterations = it - 1;
      break;
    }

    // Step halving keeps the objective non-increasing.
    Vec x0 = pack_state(grid, st);
    double step = 1.0;
    StateVector trial;
    double new_obj = obj;
    for (int h = 0; h < 8; ++h) {
      trial = unpack_state(grid, Vec(x0 + step * dx));
      new_obj = objective_at(trial);
      if (new_obj <= obj * (1 + 1e-12) + 1e-14) break;
      step *= 0.5;
    }
    st = trial;
    obj = new_obj;
    res.iterations = it;
  }

  res.x_hat = st;
  res.residual = z - measurement_function(grid, st);
  res.objective = (res.residual.array().square() * w.array()).sum();
  return res;
}

double residual_norm(const Vec& z, const PowerGrid& grid, const StateVector& x_hat) {
  return (z - measurement_function(grid, x_hat)).norm();
}

NormalizedResiduals normalized_residuals(const EstimationResult& result, const PowerGrid& grid,
                                         const NoiseModel& noise) {
  if (!result.converged) throw Error("normalized residuals need a converged estimate");
  Mat H = measurement_jacobian(grid, result.x_hat);
  const int m = static_cast<int>(H.rows());
  Vec rdiag = noise.r_diag();
  Vec w = rdiag.array().inverse();
  Mat gain = H.transpose() * (w.asDiagonal() * H);
  Eigen::LDLT<Mat> ldlt(gain);
  // Omega = R - H G^-1 H'; only the diagonal is needed.
  Mat ginv_ht = ldlt.solve(H.transpose());
  NormalizedResiduals out;
  out.r_norm = Vec::Zero(m);
  out.testable.assign(static_cast<size_t>(m), true);
  for (int i = 0; i < m; ++i) {
    double omega_ii = rdiag(i) - H.row(i).dot(ginv_ht.col(i));
    if (omega_ii <= 1e-10 * rdiag(i)) {
      out.testable[static_cast<size_t>(i)] = false;
      continue;
    }
    out.r_norm(i) = std::abs(result.residual(i)) / std::sqrt(omega_ii);
  }
  return out;
}

BddVerdict bdd_detect(const EstimationResult& result, const PowerGrid& grid,
                      const NoiseModel& noise, double threshold) {
  NormalizedResiduals nr = normalized_residuals(result, grid, noise);
  BddVerdict v;
  std::vector<int> flagged;
  for (int i = 0; i < nr.r_norm.size(); ++i) {
    if (!nr.testable[static_cast<size_t>(i)]) continue;
    v.max_r_norm = std::max(v.max_r_norm, nr.r_norm(i));
    if (nr.r_norm(i) > threshold) flagged.push_back(i);
  }
  std::sort(flagged.begin(), flagged.end(),
            [&](int a, int b) { return nr.r_norm(a) > nr.r_norm(b); });
  v.bad_data = !flagged.empty();
  v.indices = std::move(flagged);
  return v;
}

}  // namespace ddia
