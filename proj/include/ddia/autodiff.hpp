#pragma once

#include <Eigen/Sparse>
#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ddia/common.hpp"
#include "ddia/rng.hpp"

namespace ddia {

using Shape = std::vector<int>;
using SpMat = Eigen::SparseMatrix<double>;

inline long shape_size(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

// Plain value tensor: row-major data, used for parameters and I/O. Computation
// happens through Tape nodes, which reference these by copy.
struct Tensor {
  Shape shape;
  Vec data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, bool rg = false)
      : shape(std::move(s)), data(Vec::Zero(shape_size(shape))), requires_grad(rg) {}
  Tensor(Shape s, Vec d, bool rg = false)
      : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (data.size() != shape_size(shape)) throw Error("tensor data length does not match shape");
  }
  long size() const { return data.size(); }
};

Tensor randn_tensor(const Shape& s, Rng& rng, double stddev, bool requires_grad = true);

// Reverse-mode tape. Each op appends a node; backward() walks the record in
// reverse exactly once. Node handles are plain ints.
class Tape {
 public:
  // Leaves.
  int leaf(const Tensor& t);
  int constant(const Shape& shape, const Vec& data);
  int constant_scalar(double v);

  // Primitives.
  int matmul(int a, int b);
  // Fixed sparse operator times dense node; the operator itself carries no
  // gradient (it encodes graph structure, not learnable weight).
  int spmm(const SpMat& S, int x);
  int add(int a, int b);       // same shape, column-vector broadcast, or scalar broadcast
  int add_scaled(int a, int b, double cb);  // a + cb * b (same broadcast rules)
  int scale(int a, double c);
  int hadamard(int a, int b);  // same shape or column-vector broadcast
  int sigmoid(int a);
  int tanh_act(int a);
  int relu(int a);
  int softmax_rows(int a);
  // x: (groups*c_in) x T, w: c_out x (c_in*k), bias: c_out. Causal with left
  // zero padding: out[g,o,t] = bias[o] + sum_{c,s} w[o,c*k+s] * x[g,c,t-d*s].
  int dilated_causal_conv1d(int x, int w, int bias, int groups, int k, int d);
  int dropout(int x, double p, bool train, Rng& rng);
  int concat(int a, int b, int axis);
  int slice(int x, int axis, int start, int len);
  int transpose(int a);
  int permute3(int a, std::array<int, 3> perm);
  int reshape(int a, Shape s);
  int layer_norm_rows(int a);   // per-row standardization, epsilon 1e-5
  int mean_pool_cols(int a);    // rank-2 (m x n) -> (m)
  // Mean binary cross-entropy over all entries. pos_weight scales the
  // positive-class term, trading precision for recall on imbalanced labels.
  int bce_loss(int pred, int target, double pos_weight = 1.0);

  void backward(int loss);

  const Vec& value(int id) const { return nodes_[check(id)].val; }
  const Vec& grad(int id) const;
  const Shape& shape_of(int id) const { return nodes_[check(id)].shape; }
  int rows(int id) const { return nodes_[check(id)].shape.at(0); }
  int cols(int id) const { return nodes_[check(id)].shape.at(1); }
  Tensor tensor_of(int id) const;
  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    Leaf, Matmul, Spmm, Add, Scale, Hadamard, Sigmoid, Tanh, Relu, SoftmaxRows,
    Conv1d, Dropout, Concat, Slice, Transpose, Permute3, Reshape, LayerNorm,
    MeanPoolCols, BceLoss
  };
  struct Node {
    Op op;
    Shape shape;
    Vec val;
    Vec grad;
    bool requires_grad = false;
    int a = -1, b = -1, c = -1;
    int i0 = 0, i1 = 0, i2 = 0;  // op-specific ints (k, d, axis, start, ...)
    double x0 = 0;               // op-specific scalar
    double x1 = 0;
    Vec aux;                     // saved context (masks, row stats, ...)
    SpMat sparse;
  };

  int push(Node n);
  int check(int id) const;
  Node& at(int id) { return nodes_[static_cast<size_t>(check(id))]; }
  const Node& at(int id) const { return nodes_[static_cast<size_t>(check(id))]; }
  void backward_node(int id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Central-difference check of reverse-mode gradients. `fn` rebuilds its
// computation on the given tape from the supplied parameter leaves and returns
// the loss node. Samples up to `max_coords` coordinates per parameter.
double grad_check(const std::function<int(Tape&, const std::vector<int>&)>& fn,
                  std::vector<Tensor> params, double eps, Rng& rng, int max_coords = 12);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Vec> m;
  std::map<std::string, Vec> v;
};

// Bias-corrected Adam update applied in place to every named parameter that
// has a gradient entry.
void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Vec>& grads,
               AdamState& state);

}  // namespace ddia
