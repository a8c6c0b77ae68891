#include <doctest.h>

#include <cmath>
#include <vector>

#include "ddia/autodiff.hpp"
#include "ddia/rng.hpp"

using namespace ddia;

namespace {

Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s), true);
  for (long i = 0; i < t.size(); ++i) t.data(i) = rng.uniform(lo, hi);
  return t;
}

// Projects a node to a scalar through a fixed random linear functional so
// every output coordinate influences the loss during gradient checks.
int project(Tape& tape, int id, uint64_t seed = 5) {
  long n = shape_size(tape.shape_of(id));
  Rng prng(seed);
  Vec w(n);
  for (long i = 0; i < n; ++i) w(i) = prng.uniform(0.25, 1.5) * (i % 2 == 0 ? 1.0 : -1.0);
  int flat = tape.reshape(id, {1, static_cast<int>(n)});
  int wc = tape.constant({static_cast<int>(n), 1}, w);
  return tape.matmul(flat, wc);
}

double check_op(const std::function<int(Tape&, const std::vector<int>&)>& fn,
                std::vector<Tensor> params, uint64_t seed = 11) {
  Rng rng(seed);
  return grad_check(fn, std::move(params), 1e-5, rng);
}

}  // namespace

TEST_CASE("matmul forwards match an index-level oracle") {
  Rng rng(3);
  Tensor a = rand_tensor({3, 4}, rng);
  Tensor b = rand_tensor({4, 2}, rng);
  Tape tape;
  Vec y = tape.value(tape.matmul(tape.leaf(a), tape.leaf(b)));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a.data(i * 4 + k) * b.data(k * 2 + j);
      CHECK(y(i * 2 + j) == doctest::Approx(acc).epsilon(1e-13));
    }
  }
  Tape bad;
  CHECK_THROWS_AS(bad.matmul(bad.leaf(a), bad.leaf(a)), Error);
}

TEST_CASE("every differentiable primitive passes a finite-difference check") {
  Rng rng(17);

  SUBCASE("matmul") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.matmul(p[0], p[1])); },
                   {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)}) < 1e-4);
  }
  SUBCASE("sparse operator times dense") {
    SpMat S(4, 3);
    std::vector<Eigen::Triplet<double>> trips{{0, 0, 1.5}, {1, 2, -0.7}, {2, 1, 0.3}, {3, 0, 2.0}};
    S.setFromTriplets(trips.begin(), trips.end());
    CHECK(check_op([S](Tape& t, const std::vector<int>& p) { return project(t, t.spmm(S, p[0])); },
                   {rand_tensor({3, 2}, rng)}) < 1e-4);
  }
  SUBCASE("add, all broadcast modes") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.add(p[0], p[1])); },
                   {rand_tensor({3, 3}, rng), rand_tensor({3, 3}, rng)}) < 1e-4);
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.add(p[0], p[1])); },
                   {rand_tensor({3, 4}, rng), rand_tensor({3}, rng)}) < 1e-4);
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.add(p[0], p[1])); },
                   {rand_tensor({3, 4}, rng), rand_tensor({1}, rng)}) < 1e-4);
  }
  SUBCASE("scaled add") {
    CHECK(check_op(
              [](Tape& t, const std::vector<int>& p) { return project(t, t.add_scaled(p[0], p[1], -2.5)); },
              {rand_tensor({2, 5}, rng), rand_tensor({2, 5}, rng)}) < 1e-4);
  }
  SUBCASE("scale") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.scale(p[0], 3.25)); },
                   {rand_tensor({3, 4}, rng)}) < 1e-4);
  }
  SUBCASE("hadamard, all broadcast modes") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.hadamard(p[0], p[1])); },
                   {rand_tensor({3, 3}, rng), rand_tensor({3, 3}, rng)}) < 1e-4);
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.hadamard(p[0], p[1])); },
                   {rand_tensor({3, 4}, rng), rand_tensor({3}, rng)}) < 1e-4);
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.hadamard(p[0], p[1])); },
                   {rand_tensor({3, 4}, rng), rand_tensor({1}, rng)}) < 1e-4);
  }
  SUBCASE("sigmoid") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.sigmoid(p[0])); },
                   {rand_tensor({3, 4}, rng, -2, 2)}) < 1e-4);
  }
  SUBCASE("tanh") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.tanh_act(p[0])); },
                   {rand_tensor({3, 4}, rng, -2, 2)}) < 1e-4);
  }
  SUBCASE("relu away from the kink") {
    Tensor x({3, 4}, true);
    for (long i = 0; i < x.size(); ++i)
      x.data(i) = rng.uniform(0.2, 1.0) * (i % 2 == 0 ? 1.0 : -1.0);
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.relu(p[0])); },
                   {x}) < 1e-4);
  }
  SUBCASE("row softmax") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.softmax_rows(p[0])); },
                   {rand_tensor({3, 4}, rng, -2, 2)}) < 1e-4);
  }
  SUBCASE("dilated causal convolution") {
    // Two groups of two channels, filter width 2, dilation 2.
    CHECK(check_op(
              [](Tape& t, const std::vector<int>& p) {
                return project(t, t.dilated_causal_conv1d(p[0], p[1], p[2], 2, 2, 2));
              },
              {rand_tensor({4, 6}, rng), rand_tensor({3, 4}, rng), rand_tensor({3}, rng)}) < 1e-4);
  }
  SUBCASE("dropout with a fixed mask") {
    CHECK(check_op(
              [](Tape& t, const std::vector<int>& p) {
                Rng mask_rng(23);
                return project(t, t.dropout(p[0], 0.3, true, mask_rng));
              },
              {rand_tensor({3, 4}, rng)}) < 1e-4);
  }
  SUBCASE("concat along both axes") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.concat(p[0], p[1], 0)); },
                   {rand_tensor({2, 3}, rng), rand_tensor({1, 3}, rng)}) < 1e-4);
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.concat(p[0], p[1], 1)); },
                   {rand_tensor({2, 3}, rng), rand_tensor({2, 2}, rng)}) < 1e-4);
  }
  SUBCASE("slice") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.slice(p[0], 1, 1, 2)); },
                   {rand_tensor({3, 4}, rng)}) < 1e-4);
  }
  SUBCASE("transpose") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.transpose(p[0])); },
                   {rand_tensor({3, 4}, rng)}) < 1e-4);
  }
  SUBCASE("rank-3 permutation") {
    CHECK(check_op(
              [](Tape& t, const std::vector<int>& p) { return project(t, t.permute3(p[0], {2, 0, 1})); },
              {rand_tensor({2, 3, 2}, rng)}) < 1e-4);
  }
  SUBCASE("reshape") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.reshape(p[0], {2, 6})); },
                   {rand_tensor({3, 4}, rng)}) < 1e-4);
  }
  SUBCASE("row layer norm") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.layer_norm_rows(p[0])); },
                   {rand_tensor({3, 4}, rng)}) < 1e-4);
  }
  SUBCASE("column mean pool") {
    CHECK(check_op([](Tape& t, const std::vector<int>& p) { return project(t, t.mean_pool_cols(p[0])); },
                   {rand_tensor({3, 4}, rng)}) < 1e-4);
  }
  SUBCASE("binary cross-entropy, weighted and unweighted") {
    Tensor pred({6}, true);
    for (long i = 0; i < 6; ++i) pred.data(i) = rng.uniform(0.15, 0.85);
    Vec target(6);
    for (long i = 0; i < 6; ++i) target(i) = (i % 2 == 0) ? 1.0 : 0.0;
    CHECK(check_op(
              [target](Tape& t, const std::vector<int>& p) {
                return t.bce_loss(p[0], t.constant({6}, target));
              },
              {pred}) < 1e-4);
    CHECK(check_op(
              [target](Tape& t, const std::vector<int>& p) {
                return t.bce_loss(p[0], t.constant({6}, target), 2.5);
              },
              {pred}) < 1e-4);
  }
}

TEST_CASE("activation forward values satisfy their identities") {
  Tape tape;
  Vec x(5);
  x << -2.0, -0.5, 0.0, 0.5, 2.0;
  int xi = tape.leaf(Tensor({5}, x));

  Vec s = tape.value(tape.sigmoid(xi));
  CHECK(s(2) == doctest::Approx(0.5).epsilon(1e-14));
  for (int i = 0; i < 5; ++i) {
    CHECK(s(i) == doctest::Approx(1.0 / (1.0 + std::exp(-x(i)))).epsilon(1e-13));
    CHECK(s(i) + s(4 - i) == doctest::Approx(1.0).epsilon(1e-13));  // symmetry
  }

  Vec th = tape.value(tape.tanh_act(xi));
  for (int i = 0; i < 5; ++i) {
    CHECK(th(i) == doctest::Approx(std::tanh(x(i))).epsilon(1e-13));
    CHECK(th(i) + th(4 - i) == doctest::Approx(0.0).scale(1.0));  // odd function
  }

  Vec r = tape.value(tape.relu(xi));
  for (int i = 0; i < 5; ++i) CHECK(r(i) == std::max(0.0, x(i)));
}

TEST_CASE("row softmax produces shift-invariant distributions") {
  Rng rng(9);
  Tensor x = rand_tensor({3, 5}, rng, -2, 2);
  Tape tape;
  Vec p = tape.value(tape.softmax_rows(tape.leaf(x)));
  for (int i = 0; i < 3; ++i) {
    double row_sum = 0;
    for (int j = 0; j < 5; ++j) {
      CHECK(p(i * 5 + j) > 0.0);
      row_sum += p(i * 5 + j);
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Constant rows map to the uniform distribution.
  Tape t2;
  Vec u = t2.value(t2.softmax_rows(t2.leaf(Tensor({2, 4}, Vec::Constant(8, 3.7)))));
  for (int i = 0; i < 8; ++i) CHECK(u(i) == doctest::Approx(0.25).epsilon(1e-13));

  // Adding a constant to a row leaves the distribution unchanged.
  Tensor shifted = x;
  for (int j = 0; j < 5; ++j) shifted.data(5 + j) += 11.0;
  Tape t3;
  Vec p2 = t3.value(t3.softmax_rows(t3.leaf(shifted)));
  for (int j = 0; j < 5; ++j) CHECK(p2(5 + j) == doctest::Approx(p(5 + j)).epsilon(1e-10));
}

TEST_CASE("row layer norm standardizes each row") {
  Rng rng(21);
  Tensor x = rand_tensor({4, 6}, rng, -3, 3);
  Tape tape;
  Vec y = tape.value(tape.layer_norm_rows(tape.leaf(x)));
  for (int i = 0; i < 4; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < 6; ++j) mean += y(i * 6 + j);
    mean /= 6;
    for (int j = 0; j < 6; ++j) var += (y(i * 6 + j) - mean) * (y(i * 6 + j) - mean);
    var /= 6;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // epsilon-regularized
  }

  // A constant row has no direction to standardize along: it maps to zeros.
  Tape t2;
  Vec z = t2.value(t2.layer_norm_rows(t2.leaf(Tensor({1, 5}, Vec::Constant(5, 2.0)))));
  for (int j = 0; j < 5; ++j) CHECK(std::abs(z(j)) < 1e-6);
}

TEST_CASE("causal convolution uses only present and past samples") {
  // Single channel, width 2, dilation 3: out[t] = b + w0*x[t] + w1*x[t-3].
  const int T = 7;
  Vec xv(T);
  xv << 0.3, -1.1, 0.7, 2.0, -0.4, 1.5, 0.9;
  Vec wv(2);
  wv << 1.25, -0.75;
  Vec bv(1);
  bv << 0.1;
  Tape tape;
  int out = tape.dilated_causal_conv1d(tape.leaf(Tensor({1, T}, xv)),
                                       tape.leaf(Tensor({1, 2}, wv)),
                                       tape.leaf(Tensor({1}, bv)), 1, 2, 3);
  Vec y = tape.value(out);
  REQUIRE(y.size() == T);
  for (int t = 0; t < T; ++t) {
    double expect = bv(0) + wv(0) * xv(t) + (t >= 3 ? wv(1) * xv(t - 3) : 0.0);
    CHECK(y(t) == doctest::Approx(expect).epsilon(1e-13));
  }

  // Perturbing a sample never changes outputs at earlier times.
  Vec xp = xv;
  xp(4) += 10.0;
  Tape t2;
  Vec y2 = t2.value(t2.dilated_causal_conv1d(t2.leaf(Tensor({1, T}, xp)),
                                             t2.leaf(Tensor({1, 2}, wv)),
                                             t2.leaf(Tensor({1}, bv)), 1, 2, 3));
  for (int t = 0; t < 4; ++t) CHECK(y2(t) == y(t));
  CHECK(y2(4) != y(4));
}

TEST_CASE("stacked dilations one, two, four cover exactly eight samples") {
  const int T = 16;
  Vec impulse = Vec::Zero(T);
  impulse(0) = 1.0;
  Vec wv(2);
  wv << 1.0, 1.0;
  Vec bv = Vec::Zero(1);
  Tape tape;
  int h = tape.leaf(Tensor({1, T}, impulse));
  for (int d : {1, 2, 4}) {
    h = tape.dilated_causal_conv1d(h, tape.constant({1, 2}, wv), tape.constant({1}, bv), 1, 2, d);
  }
  Vec y = tape.value(h);
  for (int t = 0; t < 8; ++t) CHECK(y(t) > 0.0);   // inside the receptive field
  for (int t = 8; t < T; ++t) CHECK(y(t) == 0.0);  // strictly outside
}

TEST_CASE("grouped convolution keeps groups independent") {
  Rng rng(31);
  Tensor x = rand_tensor({4, 5}, rng);  // 2 groups x 2 channels
  Tensor w = rand_tensor({2, 4}, rng);  // 2 out channels, width 2
  Tensor b = rand_tensor({2}, rng);
  Tape tape;
  Vec base = tape.value(
      tape.dilated_causal_conv1d(tape.leaf(x), tape.leaf(w), tape.leaf(b), 2, 2, 1));

  // Changing group 1's input leaves group 0's output rows untouched.
  Tensor x2 = x;
  for (int j = 0; j < 5; ++j) x2.data(2 * 5 + j) += 3.0;
  Tape t2;
  Vec mod = t2.value(
      t2.dilated_causal_conv1d(t2.leaf(x2), t2.leaf(w), t2.leaf(b), 2, 2, 1));
  for (int j = 0; j < 2 * 5; ++j) CHECK(mod(j) == base(j));
  bool any_changed = false;
  for (int j = 2 * 5; j < 4 * 5; ++j) any_changed = any_changed || (mod(j) != base(j));
  CHECK(any_changed);
}

TEST_CASE("dropout scales survivors in training and vanishes at evaluation") {
  Rng data_rng(41);
  Tensor x = rand_tensor({100, 100}, data_rng, 0.5, 1.5);

  Tape tape;
  Rng mask_rng(7);
  Vec y = tape.value(tape.dropout(tape.leaf(x), 0.5, true, mask_rng));
  long zeros = 0;
  for (long i = 0; i < y.size(); ++i) {
    if (y(i) == 0.0) {
      ++zeros;
    } else {
      CHECK(y(i) == doctest::Approx(x.data(i) / 0.5).epsilon(1e-12));
    }
  }
  // Binomial(10000, 0.5): four standard deviations is 200.
  CHECK(zeros > 4800);
  CHECK(zeros < 5200);

  Tape t2;
  Rng r2(7);
  Vec ye = t2.value(t2.dropout(t2.leaf(x), 0.5, false, r2));
  for (long i = 0; i < ye.size(); ++i) CHECK(ye(i) == x.data(i));

  Tape t3;
  Rng r3(7);
  Vec y0 = t3.value(t3.dropout(t3.leaf(x), 0.0, true, r3));
  for (long i = 0; i < y0.size(); ++i) CHECK(y0(i) == x.data(i));
}

TEST_CASE("structural ops rearrange data without altering it") {
  Rng rng(51);
  Tensor a = rand_tensor({2, 3}, rng);
  Tensor b = rand_tensor({2, 2}, rng);

  Tape tape;
  int ai = tape.leaf(a);
  int bi = tape.leaf(b);
  int cat = tape.concat(ai, bi, 1);
  CHECK(tape.shape_of(cat) == Shape{2, 5});
  Vec cv = tape.value(cat);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(cv(i * 5 + j) == a.data(i * 3 + j));
    for (int j = 0; j < 2; ++j) CHECK(cv(i * 5 + 3 + j) == b.data(i * 2 + j));
  }
  // Slicing recovers each original block bitwise.
  Vec back_a = tape.value(tape.slice(cat, 1, 0, 3));
  Vec back_b = tape.value(tape.slice(cat, 1, 3, 2));
  for (long i = 0; i < a.size(); ++i) CHECK(back_a(i) == a.data(i));
  for (long i = 0; i < b.size(); ++i) CHECK(back_b(i) == b.data(i));

  Vec tr = tape.value(tape.transpose(ai));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(tr(j * 2 + i) == a.data(i * 3 + j));

  // Reshape preserves the row-major stream bitwise.
  Vec rs = tape.value(tape.reshape(ai, {3, 2}));
  for (long i = 0; i < a.size(); ++i) CHECK(rs(i) == a.data(i));

  // Rank-3 permutation: inverse permutation restores the original.
  Tensor c = rand_tensor({2, 3, 4}, rng);
  Tape t2;
  int ci = t2.leaf(c);
  int fwd = t2.permute3(ci, {2, 0, 1});
  CHECK(t2.shape_of(fwd) == Shape{4, 2, 3});
  int round = t2.permute3(fwd, {1, 2, 0});
  Vec rv = t2.value(round);
  for (long i = 0; i < c.size(); ++i) CHECK(rv(i) == c.data(i));
  // Spot-check one mapped coordinate: out[k][i][j] = in[i][j][k].
  Vec fv = t2.value(fwd);
  CHECK(fv((3 * 2 + 1) * 3 + 2) == c.data((1 * 3 + 2) * 4 + 3));

  Vec mp = t2.value(t2.mean_pool_cols(t2.leaf(a)));
  for (int i = 0; i < 2; ++i) {
    double mean = (a.data(i * 3) + a.data(i * 3 + 1) + a.data(i * 3 + 2)) / 3.0;
    CHECK(mp(i) == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("weighted cross-entropy scales only the positive-class term") {
  Vec pv(2), tv(2);
  pv << 0.7, 0.4;
  tv << 1.0, 0.0;
  Tape tape;
  int pi = tape.leaf(Tensor({2}, pv));
  double base = tape.value(tape.bce_loss(pi, tape.constant({2}, tv)))(0);
  double weighted = tape.value(tape.bce_loss(pi, tape.constant({2}, tv), 3.0))(0);
  double expect_base = -(std::log(0.7) + std::log(0.6)) / 2.0;
  double expect_weighted = -(3.0 * std::log(0.7) + std::log(0.6)) / 2.0;
  CHECK(base == doctest::Approx(expect_base).epsilon(1e-13));
  CHECK(weighted == doctest::Approx(expect_weighted).epsilon(1e-13));
  CHECK_THROWS_AS(tape.bce_loss(pi, tape.constant({2}, tv), 0.0), Error);
}

TEST_CASE("tape guards reject misuse") {
  Rng rng(61);
  Tensor a = rand_tensor({2, 2}, rng);

  // backward twice on one tape
  {
    Tape tape;
    int loss = project(tape, tape.leaf(a));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), Error);
  }
  // gradient read before backward
  {
    Tape tape;
    int id = tape.leaf(a);
    project(tape, id);
    CHECK_THROWS_AS(tape.grad(id), Error);
  }
  // non-scalar loss
  {
    Tape tape;
    int id = tape.leaf(a);
    CHECK_THROWS_AS(tape.backward(id), Error);
  }
  // a leaf that never reaches the loss gets an exactly-zero gradient
  {
    Tape tape;
    int used = tape.leaf(a);
    int unused = tape.leaf(a);
    tape.backward(project(tape, used));
    CHECK(tape.grad(unused).cwiseAbs().maxCoeff() == 0.0);
    CHECK(tape.grad(used).cwiseAbs().maxCoeff() > 0.0);
  }
  // invalid node handle
  {
    Tape tape;
    CHECK_THROWS_AS(tape.value(42), Error);
  }
}

TEST_CASE("adam takes unit-learning-rate-sized first steps and stands still at zero gradient") {
  std::map<std::string, Tensor> params;
  params["w"] = Tensor({3}, Vec::Constant(3, 1.0));
  AdamState st;
  st.lr = 0.05;

  std::map<std::string, Vec> zero{{"w", Vec::Zero(3)}};
  adam_step(params, zero, st);
  for (int i = 0; i < 3; ++i) CHECK(params.at("w").data(i) == 1.0);

  // First step with any nonzero gradient moves by almost exactly lr, sign-wise.
  std::map<std::string, Tensor> p2;
  p2["w"] = Tensor({2}, Vec::Zero(2));
  AdamState s2;
  s2.lr = 0.05;
  Vec g(2);
  g << 0.5, -2.0;
  adam_step(p2, {{"w", g}}, s2);
  CHECK(p2.at("w").data(0) == doctest::Approx(-0.05).epsilon(1e-6));
  CHECK(p2.at("w").data(1) == doctest::Approx(0.05).epsilon(1e-6));

  // Parameters without a gradient entry stay untouched.
  std::map<std::string, Tensor> p3;
  p3["w"] = Tensor({2}, Vec::Constant(2, 4.0));
  p3["frozen"] = Tensor({2}, Vec::Constant(2, 9.0));
  AdamState s3;
  adam_step(p3, {{"w", Vec::Constant(2, 1.0)}}, s3);
  CHECK(p3.at("frozen").data(0) == 9.0);
  CHECK(p3.at("w").data(0) != 4.0);

  std::map<std::string, Vec> wrong{{"w", Vec::Zero(5)}};
  CHECK_THROWS_AS(adam_step(p3, wrong, s3), Error);
}

TEST_CASE("adam drives a quadratic to its minimum") {
  Vec target(4);
  target << 1.0, -2.0, 0.5, 3.0;
  std::map<std::string, Tensor> params;
  params["x"] = Tensor({4}, Vec::Zero(4));
  AdamState st;
  st.lr = 0.1;
  double start_gap = (params.at("x").data - target).cwiseAbs().maxCoeff();
  for (int it = 0; it < 200; ++it) {
    std::map<std::string, Vec> grads{{"x", params.at("x").data - target}};
    adam_step(params, grads, st);
  }
  double end_gap = (params.at("x").data - target).cwiseAbs().maxCoeff();
  CHECK(end_gap < start_gap / 100.0);
}

TEST_CASE("gradients accumulate when a node feeds the loss twice") {
  // loss = sum(x) + sum(x) has gradient exactly 2 everywhere.
  Tensor x({3}, Vec::Constant(3, 0.7), true);
  Tape tape;
  int xi = tape.leaf(x);
  int doubled = tape.add(xi, xi);
  int flat = tape.reshape(doubled, {1, 3});
  int loss = tape.matmul(flat, tape.constant({3, 1}, Vec::Ones(3)));
  tape.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(tape.grad(xi)(i) == doctest::Approx(2.0).epsilon(1e-14));
}
