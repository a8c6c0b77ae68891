#pragma once

#include <map>
#include <string>
#include <vector>

#include "ddia/autodiff.hpp"
#include "ddia/grid.hpp"
#include "ddia/spectral.hpp"

namespace ddia {

// One training/inference sample: per-bus active and reactive injections over a
// time window, shape {N, 2, T}.
struct InputWindow {
  Tensor x;
};

struct LocalizerConfig {
  int T = 12;                          // window length
  int kernel = 2;                      // temporal kernel size
  std::vector<int> dilations = {1, 2}; // one entry per temporal layer, in order
  int hidden = 16;                     // channel width after every layer
  double scale = 2.0;                  // wavelet scale s
  int cheb_order = 30;                 // kept with the model for reporting
  double tau = 1e-4;                   // basis sparsification threshold
  double dropout = 0.2;
  int n_blocks = 1;
  bool tanh_gate = false;              // tanh(.)*sigmoid(.) gate variant
  std::string structure = "T-S-T";     // layer order per block, e.g. "T-S", "S-T-S"
};

struct Localizer {
  LocalizerConfig cfg;
  int n_bus = 0;
  int c_in = 2;
  std::vector<int> label_buses;   // internal bus indices that carry labels
  Mat psi_dense;                  // synthesis operator after sparsification
  SpMat psi_inv_sp;               // analysis operator, sparse
  std::map<std::string, Tensor> params;
  Tensor mu, sd;                  // per (bus, channel) input standardization
  bool standardized = false;

  int n_labels() const { return static_cast<int>(label_buses.size()) + 1; }
};

Localizer make_localizer(const PowerGrid& grid, const LocalizerConfig& cfg, uint64_t seed);

// Builds the model's computation on the tape and returns the node holding the
// per-label probabilities, shape {n_labels, 1}. `x_node` must carry a
// standardized {N, C, T} window.
int localizer_forward(const Localizer& model, Tape& tape,
                      const std::map<std::string, int>& param_nodes, int x_node, bool train,
                      Rng& rng);

Tensor standardize_window(const Localizer& model, const Tensor& raw);
void fit_standardization(Localizer& model, const std::vector<InputWindow>& windows);

struct TrainHyper {
  int epochs = 100;
  int batch = 64;
  double lr = 1e-4;
  // Weight on the positive-class term of the training loss; values above 1
  // push recall up on label sets where attacked buses are the minority.
  double pos_weight = 1.0;
  uint64_t seed = 1;
};

struct EpochStat {
  int epoch = 0;
  double train_loss = 0;
  double val_accuracy = 0;
};

struct TrainHistory {
  std::vector<EpochStat> epochs;
  double wall_seconds = 0;
};

TrainHistory train_localizer(Localizer& model, const std::vector<InputWindow>& windows,
                             const std::vector<Vec>& labels,
                             const std::vector<InputWindow>& val_windows,
                             const std::vector<Vec>& val_labels, const TrainHyper& hyper);

Vec predict_probabilities(const Localizer& model, const Tensor& raw_window);

struct LocatedLabels {
  Vec probabilities;        // length n_labels, system label last
  std::vector<int> labels;  // thresholded at 0.5; system label forced to 1
                            // whenever any bus label fires
};
LocatedLabels predict_locations(const Localizer& model, const Tensor& raw_window);

// Label layout helper: per-bus entries in label_buses order, then the
// system-wide entry.
Vec make_label_vector(const Localizer& model, const std::vector<int>& attacked_buses);

}  // namespace ddia
