#pragma once

#include "ddia/grid.hpp"

namespace ddia {

struct SpectralDecomposition {
  Mat U;       // orthonormal eigenvectors, columns ascending by eigenvalue
  Vec lambda;  // eigenvalues ascending
};

struct WaveletBasis {
  double s = 0;
  double threshold = 0;
  Mat psi;       // forward (synthesis) operator, sparsified
  Mat psi_inv;   // inverse (analysis) operator, sparsified
  Mat psi_raw;       // pre-sparsification operators kept for exactness checks
  Mat psi_inv_raw;
  double density = 1.0;      // non-zero fraction of psi after sparsification
  double density_inv = 1.0;  // same for psi_inv
};

SpectralDecomposition eigendecompose(const Mat& L);

// Heat-kernel wavelet operators psi = U exp(-s Lambda) U', psi_inv with the
// opposite sign. Sparsification zeroes entries below the magnitude threshold
// and outside a shortest-path neighborhood whose radius grows with the scale
// (radius = max(1, round(s/2))), which is what keeps the basis local.
WaveletBasis wavelet_basis_exact(const SpectralDecomposition& decomp, double s, double tau,
                                 const Eigen::MatrixXi& hops);

// Same operators via a K-term Chebyshev expansion of the kernel applied to L
// directly (no eigendecomposition); accuracy improves with K.
struct ChebyshevReport {
  WaveletBasis basis;
  int K = 0;
  long matvec_count = 0;  // sparse multiply work counter
};
ChebyshevReport wavelet_basis_chebyshev(const Mat& L, double s, int K, double tau,
                                        const Eigen::MatrixXi& hops);

Vec graph_wavelet_transform(const WaveletBasis& basis, const Vec& x);
Vec graph_wavelet_inverse(const WaveletBasis& basis, const Vec& coeffs);

// y = sum_k theta_k T_k(L_rescaled) x with L rescaled to [-1, 1].
Vec chebyshev_graph_conv(const Mat& L, const Vec& theta, const Vec& x);

double sparsity_report(const Mat& m, double tau);

}  // namespace ddia
