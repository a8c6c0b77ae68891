#pragma once

#include <string>
#include <vector>

#include "ddia/localizer.hpp"

namespace ddia {

struct Dataset {
  std::vector<InputWindow> windows;
  std::vector<Vec> labels;        // one entry per label slot, system label last
  std::vector<int> label_buses;   // internal bus index per per-bus label slot
  std::string grid_id;
  uint64_t seed = 0;
  int T = 12;
  std::string meta;

  size_t size() const { return windows.size(); }
  int n_labels() const { return static_cast<int>(label_buses.size()) + 1; }
};

struct MetricsReport {
  long tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double false_alarm = 0;  // FP / (FP + TN)
  double f1 = 0;
};

MetricsReport compute_metrics(const std::vector<Vec>& predictions, const std::vector<Vec>& labels,
                              double threshold = 0.5);
MetricsReport metrics_from_counts(long tp, long tn, long fp, long fn);

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
  std::vector<double> thresholds;
  double auc = 0;
};

RocCurve roc_curve(const Vec& scores, const std::vector<int>& labels);

struct PcaProjection {
  Mat coords;              // n_samples x dims
  Mat directions;          // dims x feature_dim, rows are principal directions
  Vec mean;
  Vec explained_variance;  // per kept component
  double explained_ratio = 0;
};

PcaProjection pca_project(const std::vector<Vec>& samples, int dims = 2);

struct FoldSplit {
  std::vector<int> train;
  std::vector<int> validation;
};

// Stratified by the system label (last label entry).
std::vector<FoldSplit> kfold_split(const Dataset& dataset, int k, uint64_t seed);

struct NoisePoint {
  double sigma = 0;
  MetricsReport metrics;
};

std::vector<NoisePoint> noise_sweep(const Localizer& model, const Dataset& dataset,
                                    const std::vector<double>& sigmas, uint64_t seed);

struct LogisticBaseline {
  Mat W;       // n_labels x feature_dim
  Vec b;       // n_labels
  Vec feat_mu, feat_sd;
  MetricsReport train_metrics;
};

LogisticBaseline train_logistic_baseline(const Dataset& train, int epochs = 200, double lr = 0.1,
                                         uint64_t seed = 7);
std::vector<Vec> logistic_predict(const LogisticBaseline& model, const Dataset& data);

// Model predictions over a whole dataset (optionally with added input noise).
std::vector<Vec> model_predict_all(const Localizer& model, const Dataset& data,
                                   double input_noise = 0.0, uint64_t seed = 0);

Dataset subset(const Dataset& data, const std::vector<int>& indices);

}  // namespace ddia
