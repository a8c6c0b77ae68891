#include "ddia/localizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ddia {

namespace {

struct LayerPlan {
  char kind;       // 'T' or 'S'
  int c_in;
  int c_out;
  int dilation;    // temporal layers only
  int index;       // per-kind index within the block
};

std::vector<char> parse_structure(const std::string& s) {
  std::vector<char> out;
  for (char ch : s) {
    if (ch == 'T' || ch == 'S') out.push_back(ch);
    else if (ch == '-' || ch == ' ') continue;
    else throw ConfigError("structure string may only contain T, S and dashes: " + s);
  }
  if (out.empty()) throw ConfigError("structure string has no layers: " + s);
  return out;
}

std::vector<LayerPlan> block_plan(const LocalizerConfig& cfg, int c_block_in) {
  auto kinds = parse_structure(cfg.structure);
  std::vector<LayerPlan> plan;
  int c = c_block_in;
  int t_idx = 0, s_idx = 0;
  for (char k : kinds) {
    LayerPlan lp;
    lp.kind = k;
    lp.c_in = c;
    lp.c_out = cfg.hidden;
    if (k == 'T') {
      int di = t_idx < static_cast<int>(cfg.dilations.size())
                   ? cfg.dilations[t_idx]
                   : (cfg.dilations.empty() ? 1 : cfg.dilations.back());
      lp.dilation = di;
      lp.index = t_idx++;
    } else {
      lp.dilation = 0;
      lp.index = s_idx++;
    }
    c = lp.c_out;
    plan.push_back(lp);
  }
  return plan;
}

std::string pname(int block, const std::string& tail) {
  return "b" + std::to_string(block) + "." + tail;
}

}  // namespace

Localizer make_localizer(const PowerGrid& grid, const LocalizerConfig& cfg, uint64_t seed) {
  Localizer m;
  m.cfg = cfg;
  m.n_bus = grid.n();
  m.label_buses = grid.load_buses();
  if (m.label_buses.empty()) throw ConfigError("grid has no load buses to label");

  Mat L = normalized_laplacian(grid);
  SpectralDecomposition dec = eigendecompose(L);
  Eigen::MatrixXi hops = hop_distances(grid);
  WaveletBasis basis = wavelet_basis_exact(dec, cfg.scale, cfg.tau, hops);
  m.psi_dense = basis.psi;
  m.psi_inv_sp = basis.psi_inv.sparseView();

  Rng rng(seed);
  const int N = m.n_bus, T = cfg.T, H = cfg.hidden;
  int c_block = m.c_in;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    auto plan = block_plan(cfg, c_block);
    bool has_t = false;
    for (const auto& lp : plan) {
      if (lp.kind == 'T') {
        std::string base = pname(b, "t" + std::to_string(lp.index) + ".");
        int fan = lp.c_in * cfg.kernel;
        double std_w = std::sqrt(2.0 / fan);
        m.params[base + "w1"] = randn_tensor({lp.c_out, fan}, rng, std_w);
        m.params[base + "b1"] = Tensor({lp.c_out}, true);
        m.params[base + "w2"] = randn_tensor({lp.c_out, fan}, rng, std_w);
        m.params[base + "b2"] = Tensor({lp.c_out}, true);
        if (!has_t) {
          // Temporal attention runs right before the first temporal layer, so
          // its mixing matrices are sized to that layer's input width.
          int C = lp.c_in;
          std::string ta = pname(b, "ta.");
          m.params[ta + "U1"] = randn_tensor({N, 1}, rng, 1.0 / std::sqrt(N));
          m.params[ta + "U2"] = randn_tensor({C, N}, rng, 1.0 / std::sqrt(C));
          m.params[ta + "U3"] = randn_tensor({C, 1}, rng, 1.0 / std::sqrt(C));
          m.params[ta + "Ve"] = randn_tensor({T, T}, rng, 1.0 / std::sqrt(T));
          m.params[ta + "be"] = Tensor({T, T}, true);
          has_t = true;
        }
      } else {
        std::string base = pname(b, "s" + std::to_string(lp.index) + ".");
        m.params[base + "F"] = randn_tensor({lp.c_in, lp.c_out}, rng, std::sqrt(2.0 / lp.c_in));
        // Each propagation layer carries its own attention parameters, sized
        // to that layer's input channel width.
        int C = lp.c_in;
        m.params[base + "W1"] = randn_tensor({T, 1}, rng, 1.0 / std::sqrt(T));
        m.params[base + "W2"] = randn_tensor({C, T}, rng, 1.0 / std::sqrt(C));
        m.params[base + "W3"] = randn_tensor({C, 1}, rng, 1.0 / std::sqrt(C));
        m.params[base + "Vs"] = randn_tensor({N, N}, rng, 1.0 / std::sqrt(N));
        m.params[base + "bs"] = Tensor({N, N}, true);
      }
    }
    m.params[pname(b, "ln.gamma")] = Tensor({N * H}, Vec::Ones(static_cast<long>(N) * H), true);
    m.params[pname(b, "ln.beta")] = Tensor({N * H}, true);
    c_block = H;
  }
  int L_out = m.n_labels();
  m.params["head.W"] = randn_tensor({L_out, N * H}, rng, 1.0 / std::sqrt(static_cast<double>(N) * H));
  m.params["head.b"] = Tensor({L_out}, true);

  m.mu = Tensor({N, m.c_in});
  m.sd = Tensor({N, m.c_in}, Vec::Ones(static_cast<long>(N) * m.c_in));
  return m;
}

namespace {

int temporal_attention_apply(Tape& tp, const std::map<std::string, int>& P, const std::string& ta,
                             int X, int N, int C, int T) {
  // score = (X' U1) U2 (U3 X): contract over buses, then over channels.
  int xt = tp.reshape(tp.permute3(X, {2, 1, 0}), {T * C, N});
  int t1 = tp.reshape(tp.matmul(xt, P.at(ta + "U1")), {T, C});
  int t2 = tp.matmul(t1, P.at(ta + "U2"));  // T x N
  int xc = tp.reshape(tp.permute3(X, {1, 0, 2}), {C, N * T});
  int t3 = tp.reshape(tp.matmul(tp.transpose(P.at(ta + "U3")), xc), {N, T});
  int e = tp.matmul(P.at(ta + "Ve"), tp.sigmoid(tp.add(tp.matmul(t2, t3), P.at(ta + "be"))));
  int attn = tp.softmax_rows(e);  // T x T, rows sum to 1
  int xa = tp.matmul(tp.reshape(X, {N * C, T}), attn);
  return tp.reshape(xa, {N, C, T});
}

int spatial_attention(Tape& tp, const std::map<std::string, int>& P, const std::string& sa, int X,
                      int N, int C, int T) {
  int s1 = tp.reshape(tp.matmul(tp.reshape(X, {N * C, T}), P.at(sa + "W1")), {N, C});
  int s2 = tp.matmul(s1, P.at(sa + "W2"));  // N x T
  int xc = tp.reshape(tp.permute3(X, {1, 0, 2}), {C, N * T});
  int s3 = tp.reshape(tp.matmul(tp.transpose(P.at(sa + "W3")), xc), {N, T});
  int b = tp.matmul(P.at(sa + "Vs"),
                    tp.sigmoid(tp.add(tp.matmul(s2, tp.transpose(s3)), P.at(sa + "bs"))));
  return tp.softmax_rows(b);  // N x N
}

int gated_tcn(Tape& tp, const std::map<std::string, int>& P, const std::string& base, int X, int N,
              int C_in, int C_out, int T, int k, int d, bool tanh_gate) {
  int xr = tp.reshape(X, {N * C_in, T});
  int c1 = tp.dilated_causal_conv1d(xr, P.at(base + "w1"), P.at(base + "b1"), N, k, d);
  int c2 = tp.dilated_causal_conv1d(xr, P.at(base + "w2"), P.at(base + "b2"), N, k, d);
  int g1 = tanh_gate ? tp.tanh_act(c1) : tp.sigmoid(c1);
  int z = tp.hadamard(g1, tp.sigmoid(c2));
  return tp.reshape(z, {N, C_out, T});
}

int gw_conv(Tape& tp, const Localizer& m, const std::map<std::string, int>& P,
            const std::string& base, int X, int attn_b, int N, int C, int Q, int T) {
  int y = tp.spmm(m.psi_inv_sp, tp.reshape(X, {N, C * T}));
  int yp = tp.reshape(tp.permute3(tp.reshape(y, {N, C, T}), {0, 2, 1}), {N * T, C});
  int z = tp.matmul(yp, P.at(base + "F"));  // (N*T) x Q
  int zr = tp.reshape(tp.permute3(tp.reshape(z, {N, T, Q}), {0, 2, 1}), {N, Q * T});
  int psi_c = tp.constant({N, N}, Eigen::Map<const Vec>(
                                      Mat(m.psi_dense.transpose()).data(),
                                      static_cast<long>(N) * N));
  int mmod = tp.hadamard(attn_b, psi_c);  // propagation operator modulated by attention
  return tp.reshape(tp.relu(tp.matmul(mmod, zr)), {N, Q, T});
}

int channel_pad(Tape& tp, int X, int N, int C_in, int C_out, int T) {
  if (C_in == C_out) return X;
  Vec pad = Vec::Zero(static_cast<long>(C_out) * C_in);
  for (int i = 0; i < std::min(C_in, C_out); ++i) pad(static_cast<long>(i) * C_in + i) = 1.0;
  int pc = tp.constant({C_out, C_in}, pad);
  int xc = tp.reshape(tp.permute3(X, {1, 0, 2}), {C_in, N * T});
  return tp.permute3(tp.reshape(tp.matmul(pc, xc), {C_out, N, T}), {1, 0, 2});
}

}  // namespace

int localizer_forward(const Localizer& model, Tape& tape,
                      const std::map<std::string, int>& param_nodes, int x_node, bool train,
                      Rng& rng) {
  const auto& cfg = model.cfg;
  const int N = model.n_bus, T = cfg.T, H = cfg.hidden;
  int X = x_node;
  int c_block = model.c_in;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    auto plan = block_plan(cfg, c_block);
    int skip = channel_pad(tape, X, N, c_block, H, T);
    int cur = X;
    int c_cur = c_block;
    bool t_seen = false;
    for (const auto& lp : plan) {
      if (lp.kind == 'T') {
        if (!t_seen) {
          cur = temporal_attention_apply(tape, param_nodes, pname(b, "ta."), cur, N, c_cur, T);
          t_seen = true;
        }
        cur = gated_tcn(tape, param_nodes, pname(b, "t" + std::to_string(lp.index) + "."), cur, N,
                        lp.c_in, lp.c_out, T, cfg.kernel, lp.dilation, cfg.tanh_gate);
      } else {
        // Every propagation layer modulates the wavelet operator with an
        // attention map computed from its own input.
        std::string base = pname(b, "s" + std::to_string(lp.index) + ".");
        int attn_b = spatial_attention(tape, param_nodes, base, cur, N, c_cur, T);
        cur = gw_conv(tape, model, param_nodes, base, cur, attn_b, N, lp.c_in, lp.c_out, T);
      }
      c_cur = lp.c_out;
    }
    int ln = tape.layer_norm_rows(tape.reshape(cur, {N * H, T}));
    int aff = tape.add(tape.hadamard(ln, param_nodes.at(pname(b, "ln.gamma"))),
                       param_nodes.at(pname(b, "ln.beta")));
    int out = tape.add(tape.reshape(skip, {N * H, T}), aff);
    out = tape.dropout(out, cfg.dropout, train, rng);
    X = tape.reshape(out, {N, H, T});
    c_block = H;
  }
  int pooled = tape.mean_pool_cols(tape.reshape(X, {N * H, T}));
  int logits = tape.add(tape.matmul(param_nodes.at("head.W"), tape.reshape(pooled, {N * H, 1})),
                        param_nodes.at("head.b"));
  return tape.sigmoid(logits);
}

Tensor standardize_window(const Localizer& model, const Tensor& raw) {
  const int N = model.n_bus, C = model.c_in, T = model.cfg.T;
  if (raw.shape != Shape{N, C, T}) {
    std::ostringstream os;
    os << "window shape mismatch: expected " << N << "x" << C << "x" << T;
    throw Error(os.str());
  }
  Tensor out = raw;
  out.requires_grad = false;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double mu = model.mu.data(static_cast<long>(n) * C + c);
      double sd = model.sd.data(static_cast<long>(n) * C + c);
      for (int t = 0; t < T; ++t) {
        long idx = (static_cast<long>(n) * C + c) * T + t;
        out.data(idx) = (out.data(idx) - mu) / sd;
      }
    }
  return out;
}

void fit_standardization(Localizer& model, const std::vector<InputWindow>& windows) {
  const int N = model.n_bus, C = model.c_in, T = model.cfg.T;
  Vec sum = Vec::Zero(static_cast<long>(N) * C), sq = Vec::Zero(static_cast<long>(N) * C);
  long count = static_cast<long>(windows.size()) * T;
  if (count == 0) throw Error("cannot fit input standardization on an empty set");
  for (const auto& w : windows)
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t) {
          double v = w.x.data((static_cast<long>(n) * C + c) * T + t);
          sum(static_cast<long>(n) * C + c) += v;
          sq(static_cast<long>(n) * C + c) += v * v;
        }
  for (long i = 0; i < sum.size(); ++i) {
    double mu = sum(i) / count;
    double var = sq(i) / count - mu * mu;
    model.mu.data(i) = mu;
    model.sd.data(i) = std::sqrt(std::max(var, 1e-12));
  }
  model.standardized = true;
}

namespace {

std::map<std::string, int> leaf_params(Tape& tape, const Localizer& model, bool with_grad) {
  std::map<std::string, int> ids;
  for (const auto& [name, t] : model.params) {
    Tensor copy = t;
    copy.requires_grad = with_grad;
    ids[name] = tape.leaf(copy);
  }
  return ids;
}

double label_accuracy(const Localizer& model, const std::vector<InputWindow>& windows,
                      const std::vector<Vec>& labels) {
  if (windows.empty()) return 0.0;
  long correct = 0, total = 0;
  for (size_t i = 0; i < windows.size(); ++i) {
    Vec p = predict_probabilities(model, windows[i].x);
    for (long j = 0; j < p.size(); ++j) {
      int pred = p(j) >= 0.5 ? 1 : 0;
      int truth = labels[i](j) >= 0.5 ? 1 : 0;
      correct += (pred == truth);
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

TrainHistory train_localizer(Localizer& model, const std::vector<InputWindow>& windows,
                             const std::vector<Vec>& labels,
                             const std::vector<InputWindow>& val_windows,
                             const std::vector<Vec>& val_labels, const TrainHyper& hyper) {
  if (windows.empty() || windows.size() != labels.size())
    throw Error("training set empty or label count mismatch");
  auto t_start = std::chrono::steady_clock::now();
  if (!model.standardized) fit_standardization(model, windows);

  Rng rng(hyper.seed);
  AdamState adam;
  adam.lr = hyper.lr;
  TrainHistory hist;
  std::vector<int> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += hyper.batch) {
      size_t end = std::min(order.size(), start + hyper.batch);
      Tape tape;
      auto pids = leaf_params(tape, model, true);
      int loss = -1;
      for (size_t i = start; i < end; ++i) {
        int idx = order[i];
        Tensor xs = standardize_window(model, windows[idx].x);
        int x = tape.leaf(xs);
        int probs = localizer_forward(model, tape, pids, x, true, rng);
        int target = tape.constant({model.n_labels(), 1}, labels[idx]);
        int l = tape.bce_loss(probs, target, hyper.pos_weight);
        loss = (loss < 0) ? l : tape.add(loss, l);
      }
      loss = tape.scale(loss, 1.0 / static_cast<double>(end - start));
      double lval = tape.value(loss)(0);
      if (!std::isfinite(lval)) {
        std::ostringstream os;
        os << "non-finite training loss " << lval << " at epoch " << epoch << ", batch "
           << n_batches;
        throw NumericalError(os.str());
      }
      tape.backward(loss);
      std::map<std::string, Vec> grads;
      for (const auto& [name, id] : pids) grads[name] = tape.grad(id);
      adam_step(model.params, grads, adam);
      epoch_loss += lval * static_cast<double>(end - start);
      ++n_batches;
    }
    EpochStat st;
    st.epoch = epoch;
    st.train_loss = epoch_loss / static_cast<double>(order.size());
    st.val_accuracy = label_accuracy(model, val_windows, val_labels);
    hist.epochs.push_back(st);
  }
  hist.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return hist;
}

Vec predict_probabilities(const Localizer& model, const Tensor& raw_window) {
  Tape tape;
  auto pids = leaf_params(tape, model, false);
  Rng rng(0);
  Tensor xs = standardize_window(model, raw_window);
  int x = tape.leaf(xs);
  int probs = localizer_forward(model, tape, pids, x, false, rng);
  return tape.value(probs);
}

LocatedLabels predict_locations(const Localizer& model, const Tensor& raw_window) {
  LocatedLabels out;
  out.probabilities = predict_probabilities(model, raw_window);
  long L = out.probabilities.size();
  out.labels.assign(L, 0);
  bool any_bus = false;
  for (long i = 0; i < L; ++i) {
    out.labels[i] = out.probabilities(i) >= 0.5 ? 1 : 0;
    if (i + 1 < L && out.labels[i]) any_bus = true;
  }
  if (any_bus) out.labels[L - 1] = 1;  // system flag is implied by any bus flag
  return out;
}

Vec make_label_vector(const Localizer& model, const std::vector<int>& attacked_buses) {
  Vec y = Vec::Zero(model.n_labels());
  for (int bus : attacked_buses) {
    auto it = std::find(model.label_buses.begin(), model.label_buses.end(), bus);
    if (it != model.label_buses.end()) y(it - model.label_buses.begin()) = 1.0;
  }
  if (!attacked_buses.empty()) y(y.size() - 1) = 1.0;
  return y;
}

}  // namespace ddia
