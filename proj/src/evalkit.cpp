#include "ddia/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddia/rng.hpp"

namespace ddia {

MetricsReport metrics_from_counts(long tp, long tn, long fp, long fn) {
  MetricsReport m;
  m.tp = tp;
  m.tn = tn;
  m.fp = fp;
  m.fn = fn;
  long total = tp + tn + fp + fn;
  m.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.false_alarm = (fp + tn) > 0 ? static_cast<double>(fp) / (fp + tn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  return m;
}

MetricsReport compute_metrics(const std::vector<Vec>& predictions, const std::vector<Vec>& labels,
                              double threshold) {
  if (predictions.size() != labels.size())
    throw Error("prediction and label counts differ");
  long tp = 0, tn = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != labels[i].size())
      throw Error("prediction and label widths differ");
    for (long j = 0; j < labels[i].size(); ++j) {
      bool pred = predictions[i](j) >= threshold;
      bool truth = labels[i](j) >= 0.5;
      if (pred && truth) ++tp;
      else if (pred && !truth) ++fp;
      else if (!pred && truth) ++fn;
      else ++tn;
    }
  }
  return metrics_from_counts(tp, tn, fp, fn);
}

RocCurve roc_curve(const Vec& scores, const std::vector<int>& labels) {
  if (scores.size() != static_cast<long>(labels.size()))
    throw Error("score and label counts differ");
  long P = 0, N = 0;
  for (int y : labels) (y ? P : N)++;
  if (P == 0 || N == 0) throw Error("both classes must be present for a ROC curve");

  std::vector<int> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores(a) > scores(b); });

  RocCurve rc;
  rc.fpr.push_back(0);
  rc.tpr.push_back(0);
  rc.thresholds.push_back(std::numeric_limits<double>::infinity());
  long tp = 0, fp = 0;
  for (size_t i = 0; i < order.size(); ++i) {
    (labels[order[i]] ? tp : fp)++;
    // Emit a point only after the last of a run of tied scores.
    if (i + 1 < order.size() && scores(order[i + 1]) == scores(order[i])) continue;
    rc.fpr.push_back(static_cast<double>(fp) / N);
    rc.tpr.push_back(static_cast<double>(tp) / P);
    rc.thresholds.push_back(scores(order[i]));
  }
  rc.auc = 0;
  for (size_t i = 1; i < rc.fpr.size(); ++i)
    rc.auc += (rc.fpr[i] - rc.fpr[i - 1]) * 0.5 * (rc.tpr[i] + rc.tpr[i - 1]);
  return rc;
}

PcaProjection pca_project(const std::vector<Vec>& samples, int dims) {
  if (samples.empty()) throw Error("PCA needs at least one sample");
  const long m = samples[0].size();
  if (dims < 1 || dims > m) throw ConfigError("PCA dimension out of range");
  PcaProjection pp;
  pp.mean = Vec::Zero(m);
  for (const Vec& s : samples) pp.mean += s;
  pp.mean /= static_cast<double>(samples.size());
  Mat centered(samples.size(), m);
  for (size_t i = 0; i < samples.size(); ++i) centered.row(i) = (samples[i] - pp.mean).transpose();
  Mat cov = centered.transpose() * centered / std::max<double>(1.0, samples.size() - 1.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);

  pp.directions = Mat(dims, m);
  pp.explained_variance = Vec(dims);
  for (int j = 0; j < dims; ++j) {
    Vec dir = es.eigenvectors().col(m - 1 - j);
    int idx = 0;
    dir.cwiseAbs().maxCoeff(&idx);
    if (dir(idx) < 0) dir = -dir;
    pp.directions.row(j) = dir.transpose();
    pp.explained_variance(j) = std::max(es.eigenvalues()(m - 1 - j), 0.0);
  }
  double total = std::max(es.eigenvalues().cwiseMax(0.0).sum(), 1e-300);
  pp.explained_ratio = pp.explained_variance.sum() / total;
  pp.coords = centered * pp.directions.transpose();
  return pp;
}

std::vector<FoldSplit> kfold_split(const Dataset& dataset, int k, uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold split needs k >= 2");
  if (dataset.size() < static_cast<size_t>(k)) throw ConfigError("fewer samples than folds");
  std::vector<int> pos, neg;
  for (size_t i = 0; i < dataset.size(); ++i) {
    bool attacked = dataset.labels[i](dataset.labels[i].size() - 1) >= 0.5;
    (attacked ? pos : neg).push_back(static_cast<int>(i));
  }
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<FoldSplit> folds(k);
  auto deal = [&](const std::vector<int>& ids) {
    for (size_t i = 0; i < ids.size(); ++i)
      folds[i % k].validation.push_back(ids[i]);
  };
  deal(pos);
  deal(neg);
  for (int f = 0; f < k; ++f) {
    std::sort(folds[f].validation.begin(), folds[f].validation.end());
    for (size_t i = 0; i < dataset.size(); ++i) {
      if (!std::binary_search(folds[f].validation.begin(), folds[f].validation.end(),
                              static_cast<int>(i)))
        folds[f].train.push_back(static_cast<int>(i));
    }
  }
  return folds;
}

std::vector<Vec> model_predict_all(const Localizer& model, const Dataset& data,
                                   double input_noise, uint64_t seed) {
  std::vector<Vec> out;
  out.reserve(data.size());
  Rng rng(seed);
  for (const InputWindow& w : data.windows) {
    if (input_noise > 0) {
      Tensor noisy = w.x;
      for (long i = 0; i < noisy.data.size(); ++i)
        noisy.data(i) += input_noise * rng.gaussian();
      out.push_back(predict_probabilities(model, noisy));
    } else {
      out.push_back(predict_probabilities(model, w.x));
    }
  }
  return out;
}

std::vector<NoisePoint> noise_sweep(const Localizer& model, const Dataset& dataset,
                                    const std::vector<double>& sigmas, uint64_t seed) {
  std::vector<NoisePoint> out;
  for (size_t i = 0; i < sigmas.size(); ++i) {
    NoisePoint np;
    np.sigma = sigmas[i];
    std::vector<Vec> preds = model_predict_all(model, dataset, sigmas[i], seed + i);
    np.metrics = compute_metrics(preds, dataset.labels);
    out.push_back(np);
  }
  return out;
}

namespace {

Vec window_features(const InputWindow& w) {
  return w.x.data;
}

}  // namespace

LogisticBaseline train_logistic_baseline(const Dataset& train, int epochs, double lr,
                                         uint64_t seed) {
  if (train.size() == 0) throw ConfigError("empty training set");
  const long d = window_features(train.windows[0]).size();
  const int L = train.n_labels();
  const long n = static_cast<long>(train.size());

  Mat X(n, d);
  Mat Y(n, L);
  for (long i = 0; i < n; ++i) {
    X.row(i) = window_features(train.windows[i]).transpose();
    Y.row(i) = train.labels[i].transpose();
  }
  LogisticBaseline lb;
  lb.feat_mu = X.colwise().mean().transpose();
  Vec var = ((X.rowwise() - lb.feat_mu.transpose()).array().square().colwise().sum() /
             std::max<double>(1.0, n - 1.0))
                .transpose();
  lb.feat_sd = var.cwiseMax(1e-12).cwiseSqrt();
  Mat Xs = (X.rowwise() - lb.feat_mu.transpose()).array().rowwise() /
           lb.feat_sd.transpose().array();

  Rng rng(seed);
  lb.W = Mat::Zero(L, d);
  for (long i = 0; i < L * d; ++i) lb.W(i / d, i % d) = 0.01 * rng.gaussian();
  lb.b = Vec::Zero(L);
  for (int e = 0; e < epochs; ++e) {
    Mat logits = Xs * lb.W.transpose();
    logits.rowwise() += lb.b.transpose();
    Mat probs = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
    Mat G = (probs - Y) / static_cast<double>(n);
    lb.W -= lr * (G.transpose() * Xs);
    lb.b -= lr * G.colwise().sum().transpose();
  }
  std::vector<Vec> preds = logistic_predict(lb, train);
  lb.train_metrics = compute_metrics(preds, train.labels);
  return lb;
}

std::vector<Vec> logistic_predict(const LogisticBaseline& model, const Dataset& data) {
  std::vector<Vec> out;
  out.reserve(data.size());
  for (const InputWindow& w : data.windows) {
    Vec f = window_features(w);
    Vec fs = (f - model.feat_mu).cwiseQuotient(model.feat_sd);
    Vec logits = model.W * fs + model.b;
    out.push_back((1.0 / (1.0 + (-logits.array()).exp())).matrix());
  }
  return out;
}

Dataset subset(const Dataset& data, const std::vector<int>& indices) {
  Dataset out;
  out.label_buses = data.label_buses;
  out.grid_id = data.grid_id;
  out.seed = data.seed;
  out.T = data.T;
  out.meta = data.meta;
  out.windows.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= static_cast<int>(data.size())) throw Error("subset index out of range");
    out.windows.push_back(data.windows[i]);
    out.labels.push_back(data.labels[i]);
  }
  return out;
}

}  // namespace ddia
