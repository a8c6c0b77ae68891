#include "ddia/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ddia {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RMat>;
using CMapM = Eigen::Map<const RMat>;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Broadcast classification for add/hadamard: 0 = same shape, 1 = b is a
// column vector matching a's rows, 2 = b is a scalar.
int broadcast_mode(const Shape& a, const Shape& b) {
  if (same_shape(a, b)) return 0;
  if (a.size() == 2 && (b == Shape{a[0]} || b == Shape{a[0], 1})) return 1;
  if (shape_size(b) == 1) return 2;
  return -1;
}

}  // namespace

Tensor randn_tensor(const Shape& s, Rng& rng, double stddev, bool requires_grad) {
  Tensor t(s, requires_grad);
  for (long i = 0; i < t.data.size(); ++i) t.data(i) = stddev * rng.gaussian();
  return t;
}

int Tape::check(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) throw Error("invalid tape node handle");
  return id;
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(const Tensor& t) {
  Node n;
  n.op = Op::Leaf;
  n.shape = t.shape;
  n.val = t.data;
  n.requires_grad = t.requires_grad;
  return push(std::move(n));
}

int Tape::constant(const Shape& shape, const Vec& data) {
  Tensor t(shape, data, false);
  return leaf(t);
}

int Tape::constant_scalar(double v) {
  Vec d(1);
  d(0) = v;
  return leaf(Tensor({1}, d, false));
}

Tensor Tape::tensor_of(int id) const {
  const Node& n = at(id);
  return Tensor(n.shape, n.val, n.requires_grad);
}

int Tape::matmul(int a, int b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0])
    shape_error("matmul", na.shape, nb.shape);
  Node n;
  n.op = Op::Matmul;
  n.a = a;
  n.b = b;
  n.shape = {na.shape[0], nb.shape[1]};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.val.resize(shape_size(n.shape));
  CMapM A(na.val.data(), na.shape[0], na.shape[1]);
  CMapM B(nb.val.data(), nb.shape[0], nb.shape[1]);
  MapM C(n.val.data(), n.shape[0], n.shape[1]);
  C.noalias() = A * B;
  return push(std::move(n));
}

int Tape::spmm(const SpMat& S, int x) {
  const Node& nx = at(x);
  if (nx.shape.size() != 2 || S.cols() != nx.shape[0])
    throw Error("spmm: operator has " + std::to_string(S.cols()) + " columns but input has " +
                std::to_string(nx.shape.empty() ? -1 : nx.shape[0]) + " rows");
  Node n;
  n.op = Op::Spmm;
  n.a = x;
  n.sparse = S;
  n.shape = {static_cast<int>(S.rows()), nx.shape[1]};
  n.requires_grad = nx.requires_grad;
  n.val.resize(shape_size(n.shape));
  CMapM X(nx.val.data(), nx.shape[0], nx.shape[1]);
  MapM Y(n.val.data(), n.shape[0], n.shape[1]);
  Y = S * X;
  return push(std::move(n));
}

int Tape::add_scaled(int a, int b, double cb) {
  const Node& na = at(a);
  const Node& nb = at(b);
  int mode = broadcast_mode(na.shape, nb.shape);
  if (mode < 0) shape_error("add", na.shape, nb.shape);
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.i0 = mode;
  n.x0 = cb;
  n.shape = na.shape;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  if (mode == 0) {
    n.val = na.val + cb * nb.val;
  } else if (mode == 2) {
    n.val = na.val.array() + cb * nb.val(0);
  } else {
    int r = na.shape[0], c = na.shape[1];
    n.val.resize(na.val.size());
    CMapM A(na.val.data(), r, c);
    MapM O(n.val.data(), r, c);
    O = A.colwise() + Eigen::VectorXd(cb * nb.val);
  }
  return push(std::move(n));
}

int Tape::add(int a, int b) { return add_scaled(a, b, 1.0); }

int Tape::scale(int a, double c) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.x0 = c;
  n.shape = na.shape;
  n.requires_grad = na.requires_grad;
  n.val = c * na.val;
  return push(std::move(n));
}

int Tape::hadamard(int a, int b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  int mode = broadcast_mode(na.shape, nb.shape);
  if (mode < 0) shape_error("hadamard", na.shape, nb.shape);
  Node n;
  n.op = Op::Hadamard;
  n.a = a;
  n.b = b;
  n.i0 = mode;
  n.shape = na.shape;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  if (mode == 0) {
    n.val = na.val.cwiseProduct(nb.val);
  } else if (mode == 2) {
    n.val = na.val * nb.val(0);
  } else {
    int r = na.shape[0], c = na.shape[1];
    n.val.resize(na.val.size());
    CMapM A(na.val.data(), r, c);
    MapM O(n.val.data(), r, c);
    O = A.array().colwise() * Eigen::ArrayXd(nb.val.array());
  }
  return push(std::move(n));
}

int Tape::sigmoid(int a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Sigmoid;
  n.a = a;
  n.shape = na.shape;
  n.requires_grad = na.requires_grad;
  n.val = na.val.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return push(std::move(n));
}

int Tape::tanh_act(int a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Tanh;
  n.a = a;
  n.shape = na.shape;
  n.requires_grad = na.requires_grad;
  n.val = na.val.array().tanh();
  return push(std::move(n));
}

int Tape::relu(int a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Relu;
  n.a = a;
  n.shape = na.shape;
  n.requires_grad = na.requires_grad;
  n.val = na.val.cwiseMax(0.0);
  return push(std::move(n));
}

int Tape::softmax_rows(int a) {
  const Node& na = at(a);
  if (na.shape.size() != 2) throw Error("softmax_rows: expected rank-2 input " + shape_str(na.shape));
  Node n;
  n.op = Op::SoftmaxRows;
  n.a = a;
  n.shape = na.shape;
  n.requires_grad = na.requires_grad;
  int r = na.shape[0], c = na.shape[1];
  n.val.resize(na.val.size());
  CMapM A(na.val.data(), r, c);
  MapM O(n.val.data(), r, c);
  for (int i = 0; i < r; ++i) {
    double mx = A.row(i).maxCoeff();
    Eigen::RowVectorXd e = (A.row(i).array() - mx).exp();
    O.row(i) = e / e.sum();
  }
  return push(std::move(n));
}

int Tape::dilated_causal_conv1d(int x, int w, int bias, int groups, int k, int d) {
  const Node& nx = at(x);
  const Node& nw = at(w);
  const Node& nb = at(bias);
  if (nx.shape.size() != 2 || nx.shape[0] % groups != 0)
    throw Error("conv1d: input rows " + shape_str(nx.shape) + " not divisible into " +
                std::to_string(groups) + " groups");
  int c_in = nx.shape[0] / groups;
  int T = nx.shape[1];
  if (nw.shape.size() != 2 || nw.shape[1] != c_in * k)
    throw Error("conv1d: kernel shape " + shape_str(nw.shape) + " does not match c_in*k = " +
                std::to_string(c_in * k));
  int c_out = nw.shape[0];
  if (shape_size(nb.shape) != c_out) shape_error("conv1d bias", nb.shape, nw.shape);
  if (T <= (k - 1) * d)
    throw Error("conv1d: window length " + std::to_string(T) +
                " does not cover receptive step (k-1)*d = " + std::to_string((k - 1) * d));
  Node n;
  n.op = Op::Conv1d;
  n.a = x;
  n.b = w;
  n.c = bias;
  n.i0 = groups;
  n.i1 = k;
  n.i2 = d;
  n.shape = {groups * c_out, T};
  n.requires_grad = nx.requires_grad || nw.requires_grad || nb.requires_grad;
  n.val = Vec::Zero(shape_size(n.shape));
  CMapM X(nx.val.data(), nx.shape[0], T);
  CMapM W(nw.val.data(), c_out, c_in * k);
  MapM O(n.val.data(), n.shape[0], T);
  // Lowered to one matrix product: columns of the patch matrix enumerate
  // (group, t); rows enumerate (channel, kernel offset) with left zero pad.
  n.aux = Vec::Zero(static_cast<long>(c_in) * k * groups * T);
  MapM P(n.aux.data(), c_in * k, static_cast<long>(groups) * T);
  for (int g = 0; g < groups; ++g)
    for (int c = 0; c < c_in; ++c)
      for (int s = 0; s < k; ++s)
        for (int t = d * s; t < T; ++t) P(c * k + s, g * T + t) = X(g * c_in + c, t - d * s);
  RMat out_flat = W * P;  // c_out x (groups*T)
  for (int g = 0; g < groups; ++g)
    for (int o = 0; o < c_out; ++o)
      O.row(g * c_out + o) = out_flat.row(o).segment(g * T, T).array() + nb.val(o);
  return push(std::move(n));
}

int Tape::dropout(int x, double p, bool train, Rng& rng) {
  const Node& nx = at(x);
  Node n;
  n.op = Op::Dropout;
  n.a = x;
  n.shape = nx.shape;
  n.requires_grad = nx.requires_grad;
  if (!train || p <= 0.0) {
    n.val = nx.val;
    n.aux = Vec::Ones(nx.val.size());
  } else {
    n.aux.resize(nx.val.size());
    double keep = 1.0 - p;
    for (long i = 0; i < n.aux.size(); ++i)
      n.aux(i) = (rng.uniform() < keep) ? 1.0 / keep : 0.0;  // inverted scaling
    n.val = nx.val.cwiseProduct(n.aux);
  }
  return push(std::move(n));
}

int Tape::concat(int a, int b, int axis) {
  const Node& na = at(a);
  const Node& nb = at(b);
  if (na.shape.size() != nb.shape.size())
    shape_error("concat", na.shape, nb.shape);
  int rank = static_cast<int>(na.shape.size());
  if (axis < 0 || axis >= rank) throw Error("concat: axis out of range");
  for (int i = 0; i < rank; ++i)
    if (i != axis && na.shape[i] != nb.shape[i]) shape_error("concat", na.shape, nb.shape);
  Node n;
  n.op = Op::Concat;
  n.a = a;
  n.b = b;
  n.i0 = axis;
  n.shape = na.shape;
  n.shape[axis] += nb.shape[axis];
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.val.resize(shape_size(n.shape));
  // Row-major copy: outer = product of dims before axis, inner = after.
  long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= na.shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= na.shape[i];
  long wa = na.shape[axis] * inner, wb = nb.shape[axis] * inner;
  for (long o = 0; o < outer; ++o) {
    n.val.segment(o * (wa + wb), wa) = na.val.segment(o * wa, wa);
    n.val.segment(o * (wa + wb) + wa, wb) = nb.val.segment(o * wb, wb);
  }
  return push(std::move(n));
}

int Tape::slice(int x, int axis, int start, int len) {
  const Node& nx = at(x);
  int rank = static_cast<int>(nx.shape.size());
  if (axis < 0 || axis >= rank) throw Error("slice: axis out of range");
  if (start < 0 || len < 1 || start + len > nx.shape[axis])
    throw Error("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                ") exceeds axis extent " + std::to_string(nx.shape[axis]));
  Node n;
  n.op = Op::Slice;
  n.a = x;
  n.i0 = axis;
  n.i1 = start;
  n.i2 = len;
  n.shape = nx.shape;
  n.shape[axis] = len;
  n.requires_grad = nx.requires_grad;
  n.val.resize(shape_size(n.shape));
  long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= nx.shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= nx.shape[i];
  long w_in = nx.shape[axis] * inner, w_out = len * inner;
  for (long o = 0; o < outer; ++o)
    n.val.segment(o * w_out, w_out) = nx.val.segment(o * w_in + start * inner, w_out);
  return push(std::move(n));
}

int Tape::transpose(int a) {
  const Node& na = at(a);
  if (na.shape.size() != 2) throw Error("transpose: expected rank-2 input " + shape_str(na.shape));
  Node n;
  n.op = Op::Transpose;
  n.a = a;
  n.shape = {na.shape[1], na.shape[0]};
  n.requires_grad = na.requires_grad;
  n.val.resize(na.val.size());
  CMapM A(na.val.data(), na.shape[0], na.shape[1]);
  MapM O(n.val.data(), n.shape[0], n.shape[1]);
  O = A.transpose();
  return push(std::move(n));
}

namespace {

void permute3_copy(const Vec& in, const Shape& s, const std::array<int, 3>& perm, Vec& out,
                   Shape& out_shape) {
  out_shape = {s[perm[0]], s[perm[1]], s[perm[2]]};
  out.resize(in.size());
  long stride[3] = {static_cast<long>(s[1]) * s[2], s[2], 1};
  long idx = 0;
  for (int i = 0; i < out_shape[0]; ++i)
    for (int j = 0; j < out_shape[1]; ++j)
      for (int l = 0; l < out_shape[2]; ++l)
        out(idx++) = in(i * stride[perm[0]] + j * stride[perm[1]] + l * stride[perm[2]]);
}

}  // namespace

int Tape::permute3(int a, std::array<int, 3> perm) {
  const Node& na = at(a);
  if (na.shape.size() != 3) throw Error("permute3: expected rank-3 input " + shape_str(na.shape));
  bool seen[3] = {false, false, false};
  for (int p : perm) {
    if (p < 0 || p > 2 || seen[p]) throw Error("permute3: invalid permutation");
    seen[p] = true;
  }
  Node n;
  n.op = Op::Permute3;
  n.a = a;
  n.i0 = perm[0];
  n.i1 = perm[1];
  n.i2 = perm[2];
  n.requires_grad = na.requires_grad;
  permute3_copy(na.val, na.shape, perm, n.val, n.shape);
  return push(std::move(n));
}

int Tape::reshape(int a, Shape s) {
  const Node& na = at(a);
  if (shape_size(s) != na.val.size()) shape_error("reshape", na.shape, s);
  Node n;
  n.op = Op::Reshape;
  n.a = a;
  n.shape = std::move(s);
  n.requires_grad = na.requires_grad;
  n.val = na.val;
  return push(std::move(n));
}

int Tape::layer_norm_rows(int a) {
  const Node& na = at(a);
  if (na.shape.size() != 2) throw Error("layer_norm: expected rank-2 input " + shape_str(na.shape));
  constexpr double kEps = 1e-5;
  int r = na.shape[0], c = na.shape[1];
  Node n;
  n.op = Op::LayerNorm;
  n.a = a;
  n.shape = na.shape;
  n.requires_grad = na.requires_grad;
  n.val.resize(na.val.size());
  n.aux.resize(r);  // saved 1/std per row
  CMapM A(na.val.data(), r, c);
  MapM O(n.val.data(), r, c);
  for (int i = 0; i < r; ++i) {
    double mu = A.row(i).mean();
    double var = (A.row(i).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + kEps);
    n.aux(i) = inv;
    O.row(i) = (A.row(i).array() - mu) * inv;
  }
  return push(std::move(n));
}

int Tape::mean_pool_cols(int a) {
  const Node& na = at(a);
  if (na.shape.size() != 2) throw Error("mean_pool: expected rank-2 input " + shape_str(na.shape));
  Node n;
  n.op = Op::MeanPoolCols;
  n.a = a;
  n.shape = {na.shape[0]};
  n.requires_grad = na.requires_grad;
  CMapM A(na.val.data(), na.shape[0], na.shape[1]);
  n.val = A.rowwise().mean();
  return push(std::move(n));
}

int Tape::bce_loss(int pred, int target, double pos_weight) {
  const Node& np = at(pred);
  const Node& nt = at(target);
  if (shape_size(np.shape) != shape_size(nt.shape)) shape_error("bce_loss", np.shape, nt.shape);
  if (!(pos_weight > 0)) throw Error("bce_loss pos_weight must be positive");
  Node n;
  n.op = Op::BceLoss;
  n.a = pred;
  n.b = target;
  n.shape = {1};
  n.x0 = pos_weight;
  n.requires_grad = np.requires_grad;
  constexpr double kClip = 1e-12;
  double acc = 0;
  long m = np.val.size();
  for (long i = 0; i < m; ++i) {
    double p = std::clamp(np.val(i), kClip, 1.0 - kClip);
    double y = nt.val(i);
    acc -= pos_weight * y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  n.val = Vec::Constant(1, acc / static_cast<double>(m));
  return push(std::move(n));
}

const Vec& Tape::grad(int id) const {
  const Node& n = at(id);
  if (n.grad.size() == 0) throw Error("gradient not populated; run backward first");
  return n.grad;
}

void Tape::backward(int loss) {
  if (backward_done_) throw Error("backward called twice on the same tape");
  backward_done_ = true;
  Node& ln = at(loss);
  if (shape_size(ln.shape) != 1) throw Error("backward: loss must be scalar");
  for (auto& n : nodes_)
    if (n.requires_grad) n.grad = Vec::Zero(n.val.size());
  if (!ln.requires_grad) return;
  ln.grad(0) = 1.0;
  for (int id = loss; id >= 0; --id) {
    if (nodes_[id].requires_grad && nodes_[id].grad.size()) backward_node(id);
  }
}

void Tape::backward_node(int id) {
  Node& n = nodes_[id];
  auto g_into = [&](int src, const Vec& contrib) {
    Node& s = nodes_[src];
    if (s.requires_grad) s.grad += contrib;
  };
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Matmul: {
      Node& na = nodes_[n.a];
      Node& nb = nodes_[n.b];
      CMapM A(na.val.data(), na.shape[0], na.shape[1]);
      CMapM B(nb.val.data(), nb.shape[0], nb.shape[1]);
      CMapM G(n.grad.data(), n.shape[0], n.shape[1]);
      if (na.requires_grad) {
        MapM GA(na.grad.data(), na.shape[0], na.shape[1]);
        GA.noalias() += G * B.transpose();
      }
      if (nb.requires_grad) {
        MapM GB(nb.grad.data(), nb.shape[0], nb.shape[1]);
        GB.noalias() += A.transpose() * G;
      }
      break;
    }
    case Op::Spmm: {
      Node& na = nodes_[n.a];
      if (na.requires_grad) {
        CMapM G(n.grad.data(), n.shape[0], n.shape[1]);
        MapM GX(na.grad.data(), na.shape[0], na.shape[1]);
        GX += n.sparse.transpose() * G;
      }
      break;
    }
    case Op::Add: {
      Node& na = nodes_[n.a];
      Node& nb = nodes_[n.b];
      if (na.requires_grad) na.grad += n.grad;
      if (nb.requires_grad) {
        if (n.i0 == 0) {
          nb.grad += n.x0 * n.grad;
        } else if (n.i0 == 2) {
          nb.grad(0) += n.x0 * n.grad.sum();
        } else {
          CMapM G(n.grad.data(), n.shape[0], n.shape[1]);
          Eigen::Map<Vec> GB(nb.grad.data(), nb.grad.size());
          GB += n.x0 * G.rowwise().sum();
        }
      }
      break;
    }
    case Op::Scale:
      g_into(n.a, n.x0 * n.grad);
      break;
    case Op::Hadamard: {
      Node& na = nodes_[n.a];
      Node& nb = nodes_[n.b];
      if (n.i0 == 0) {
        if (na.requires_grad) na.grad += n.grad.cwiseProduct(nb.val);
        if (nb.requires_grad) nb.grad += n.grad.cwiseProduct(na.val);
      } else if (n.i0 == 2) {
        if (na.requires_grad) na.grad += nb.val(0) * n.grad;
        if (nb.requires_grad) nb.grad(0) += n.grad.dot(na.val);
      } else {
        int r = n.shape[0], c = n.shape[1];
        CMapM G(n.grad.data(), r, c);
        CMapM A(na.val.data(), r, c);
        if (na.requires_grad) {
          MapM GA(na.grad.data(), r, c);
          GA.array() += G.array().colwise() * Eigen::ArrayXd(nb.val.array());
        }
        if (nb.requires_grad) {
          Eigen::Map<Vec> GB(nb.grad.data(), nb.grad.size());
          GB += (G.array() * A.array()).rowwise().sum().matrix();
        }
      }
      break;
    }
    case Op::Sigmoid:
      g_into(n.a, n.grad.cwiseProduct(n.val.cwiseProduct(Vec::Ones(n.val.size()) - n.val)));
      break;
    case Op::Tanh:
      g_into(n.a, n.grad.cwiseProduct(Vec::Ones(n.val.size()) - n.val.cwiseProduct(n.val)));
      break;
    case Op::Relu: {
      Node& na = nodes_[n.a];
      if (na.requires_grad) {
        for (long i = 0; i < n.grad.size(); ++i)
          if (na.val(i) > 0) na.grad(i) += n.grad(i);
      }
      break;
    }
    case Op::SoftmaxRows: {
      Node& na = nodes_[n.a];
      if (!na.requires_grad) break;
      int r = n.shape[0], c = n.shape[1];
      CMapM S(n.val.data(), r, c);
      CMapM G(n.grad.data(), r, c);
      MapM GA(na.grad.data(), r, c);
      for (int i = 0; i < r; ++i) {
        double dot = G.row(i).dot(S.row(i));
        GA.row(i) += ((G.row(i).array() - dot) * S.row(i).array()).matrix();
      }
      break;
    }
    case Op::Conv1d: {
      Node& nx = nodes_[n.a];
      Node& nw = nodes_[n.b];
      Node& nb = nodes_[n.c];
      int groups = n.i0, k = n.i1, d = n.i2;
      int c_out = nw.shape[0];
      int c_in = nx.shape[0] / groups;
      int T = nx.shape[1];
      CMapM W(nw.val.data(), c_out, c_in * k);
      CMapM G(n.grad.data(), n.shape[0], T);
      CMapM P(n.aux.data(), c_in * k, static_cast<long>(groups) * T);
      RMat g_flat(c_out, static_cast<long>(groups) * T);
      for (int g = 0; g < groups; ++g)
        for (int o = 0; o < c_out; ++o) g_flat.row(o).segment(g * T, T) = G.row(g * c_out + o);
      if (nb.requires_grad)
        for (int o = 0; o < c_out; ++o) nb.grad(o) += g_flat.row(o).sum();
      if (nw.requires_grad) {
        MapM GW(nw.grad.data(), c_out, c_in * k);
        GW.noalias() += g_flat * P.transpose();
      }
      if (nx.requires_grad) {
        RMat gp = W.transpose() * g_flat;  // (c_in*k) x (groups*T)
        MapM GX(nx.grad.data(), nx.shape[0], T);
        for (int g = 0; g < groups; ++g)
          for (int c = 0; c < c_in; ++c)
            for (int s = 0; s < k; ++s)
              for (int t = d * s; t < T; ++t)
                GX(g * c_in + c, t - d * s) += gp(c * k + s, g * T + t);
      }
      break;
    }
    case Op::Dropout:
      g_into(n.a, n.grad.cwiseProduct(n.aux));
      break;
    case Op::Concat: {
      Node& na = nodes_[n.a];
      Node& nb = nodes_[n.b];
      int axis = n.i0;
      int rank = static_cast<int>(n.shape.size());
      long outer = 1, inner = 1;
      for (int i = 0; i < axis; ++i) outer *= n.shape[i];
      for (int i = axis + 1; i < rank; ++i) inner *= n.shape[i];
      long wa = na.shape[axis] * inner, wb = nb.shape[axis] * inner;
      for (long o = 0; o < outer; ++o) {
        if (na.requires_grad) na.grad.segment(o * wa, wa) += n.grad.segment(o * (wa + wb), wa);
        if (nb.requires_grad) nb.grad.segment(o * wb, wb) += n.grad.segment(o * (wa + wb) + wa, wb);
      }
      break;
    }
    case Op::Slice: {
      Node& nx = nodes_[n.a];
      if (!nx.requires_grad) break;
      int axis = n.i0, start = n.i1, len = n.i2;
      int rank = static_cast<int>(nx.shape.size());
      long outer = 1, inner = 1;
      for (int i = 0; i < axis; ++i) outer *= nx.shape[i];
      for (int i = axis + 1; i < rank; ++i) inner *= nx.shape[i];
      long w_in = nx.shape[axis] * inner, w_out = len * inner;
      for (long o = 0; o < outer; ++o)
        nx.grad.segment(o * w_in + start * inner, w_out) += n.grad.segment(o * w_out, w_out);
      break;
    }
    case Op::Transpose: {
      Node& na = nodes_[n.a];
      if (!na.requires_grad) break;
      CMapM G(n.grad.data(), n.shape[0], n.shape[1]);
      MapM GA(na.grad.data(), na.shape[0], na.shape[1]);
      GA += G.transpose();
      break;
    }
    case Op::Permute3: {
      Node& na = nodes_[n.a];
      if (!na.requires_grad) break;
      std::array<int, 3> perm = {n.i0, n.i1, n.i2};
      std::array<int, 3> inv{};
      for (int i = 0; i < 3; ++i) inv[perm[i]] = i;
      Vec gin;
      Shape tmp;
      permute3_copy(n.grad, n.shape, inv, gin, tmp);
      na.grad += gin;
      break;
    }
    case Op::Reshape:
      g_into(n.a, n.grad);
      break;
    case Op::LayerNorm: {
      Node& na = nodes_[n.a];
      if (!na.requires_grad) break;
      int r = n.shape[0], c = n.shape[1];
      CMapM Y(n.val.data(), r, c);
      CMapM G(n.grad.data(), r, c);
      MapM GA(na.grad.data(), r, c);
      for (int i = 0; i < r; ++i) {
        double gmean = G.row(i).mean();
        double gydot = G.row(i).dot(Y.row(i)) / c;
        GA.row(i) += (n.aux(i) * (G.row(i).array() - gmean - Y.row(i).array() * gydot)).matrix();
      }
      break;
    }
    case Op::MeanPoolCols: {
      Node& na = nodes_[n.a];
      if (!na.requires_grad) break;
      int r = na.shape[0], c = na.shape[1];
      MapM GA(na.grad.data(), r, c);
      GA.colwise() += Eigen::VectorXd(n.grad / static_cast<double>(c));
      break;
    }
    case Op::BceLoss: {
      Node& np = nodes_[n.a];
      if (!np.requires_grad) break;
      constexpr double kClip = 1e-12;
      long m = np.val.size();
      double g0 = n.grad(0) / static_cast<double>(m);
      double w = n.x0;
      Node& nt = nodes_[n.b];
      for (long i = 0; i < m; ++i) {
        double p = std::clamp(np.val(i), kClip, 1.0 - kClip);
        double y = nt.val(i);
        np.grad(i) += g0 * (-w * y / p + (1.0 - y) / (1.0 - p));
      }
      break;
    }
  }
}

double grad_check(const std::function<int(Tape&, const std::vector<int>&)>& fn,
                  std::vector<Tensor> params, double eps, Rng& rng, int max_coords) {
  for (auto& p : params) p.requires_grad = true;
  std::vector<Vec> analytic(params.size());
  {
    Tape tape;
    std::vector<int> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(tape.leaf(p));
    int loss = fn(tape, ids);
    tape.backward(loss);
    for (size_t i = 0; i < params.size(); ++i) analytic[i] = tape.grad(ids[i]);
  }
  auto eval = [&](const std::vector<Tensor>& ps) {
    Tape tape;
    std::vector<int> ids;
    ids.reserve(ps.size());
    for (const auto& p : ps) ids.push_back(tape.leaf(p));
    return tape.value(fn(tape, ids))(0);
  };
  double worst = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    long sz = params[pi].size();
    std::vector<long> coords;
    if (sz <= max_coords) {
      for (long i = 0; i < sz; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < max_coords; ++i) coords.push_back(static_cast<long>(rng.below(static_cast<uint64_t>(sz))));
    }
    for (long ci : coords) {
      double saved = params[pi].data(ci);
      params[pi].data(ci) = saved + eps;
      double fp = eval(params);
      params[pi].data(ci) = saved - eps;
      double fm = eval(params);
      params[pi].data(ci) = saved;
      double numeric = (fp - fm) / (2 * eps);
      double a = analytic[pi](ci);
      double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Vec>& grads,
               AdamState& state) {
  state.step += 1;
  double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Vec& g = git->second;
    if (g.size() != p.data.size())
      throw Error("adam_step: gradient size mismatch for parameter " + name);
    Vec& m = state.m[name];
    Vec& v = state.v[name];
    if (m.size() != g.size()) m = Vec::Zero(g.size());
    if (v.size() != g.size()) v = Vec::Zero(g.size());
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    for (long i = 0; i < p.data.size(); ++i) {
      double mh = m(i) / b1t;
      double vh = v(i) / b2t;
      p.data(i) -= state.lr * mh / (std::sqrt(vh) + state.eps);
    }
  }
}

}  // namespace ddia
