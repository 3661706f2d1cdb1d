#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "onix/nn/adam.hpp"
#include "onix/nn/gradcheck.hpp"
#include "onix/nn/graph.hpp"
#include "onix/nn/init.hpp"
#include "onix/nn/tensor.hpp"

using namespace onix;
using namespace onix::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Small composite net touching every op class: conv -> relu -> pool ->
/// upsample -> bilinear sample -> concat with dense path -> residual ->
/// softplus -> segment sum -> mse.
template <typename T>
T composite_loss(ParamStore<T>& store, bool record, std::map<std::string, Tensor<T>>* grads_out) {
  Graph<T> g(record);
  const int img = g.constant([] {
    Tensor<T> t = Tensor<T>::zeros({1, 8, 8});
    Rng r(5);
    for (auto& v : t.data) v = static_cast<T>(r.uniform(0, 1));
    return t;
  }());
  const int conv = g.conv2d(img, g.param(store, "k"), g.param(store, "kb"), 1, 1);
  const int act = g.relu(conv);
  const int pooled = g.avg_pool2(act);                  // [2,4,4]
  const int up = g.upsample_bilinear(pooled, 2);        // [2,8,8]
  std::vector<std::array<T, 2>> pts = {{T(1.3), T(2.7)}, {T(0.0), T(0.0)}, {T(6.9), T(5.2)},
                                       {T(-3.0), T(1.0)}, {T(3.5), T(3.5)}, {T(7.9), T(7.9)}};
  const int sampled = g.sample_bilinear(up, pts);       // [6,2]
  Rng r2(9);
  const int x = g.constant(random_tensor<T>({6, 3}, r2));
  const int densed = g.dense(x, g.param(store, "w1"), g.param(store, "b1"));  // [6,2]
  const int joined = g.concat_cols({sampled, densed});  // [6,4]
  const int h1 = g.dense(joined, g.param(store, "w2"), g.param(store, "b2"));  // [6,4]
  const int res = g.add(joined, h1);
  const int sp = g.softplus(res);
  const int scaled = g.colwise_scale(sp, g.param(store, "s"));
  const int seg = g.segment_weighted_sum(scaled, {0, 0, 1, 1, 2, 2},
                                         {T(0.5), T(1.5), T(0.25), T(2.0), T(1.0), T(0.75)}, 3);
  Rng r3(13);
  const int loss = g.squared_error_mean(seg, random_tensor<T>({3, 4}, r3));
  const T value = g.value(loss).data[0];
  if (record) {
    g.backward(loss);
    if (grads_out) *grads_out = snapshot_grads(store);
  }
  return value;
}

template <typename T>
ParamStore<T> composite_params(std::uint64_t seed) {
  Rng rng(seed);
  ParamStore<T> store;
  store.add("k", glorot_uniform<T>({2, 1, 3, 3}, 9, 18, rng));
  store.add("kb", Tensor<T>::zeros({2}));
  store.add("w1", glorot_uniform<T>({3, 2}, 3, 2, rng));
  store.add("b1", Tensor<T>::zeros({2}));
  store.add("w2", glorot_uniform<T>({4, 4}, 4, 4, rng));
  store.add("b2", Tensor<T>::zeros({4}));
  store.add("s", Tensor<T>::full({4}, T(0.8)));
  return store;
}

}  // namespace

TEST_CASE("dense with identity weights is the identity") {
  Graph<double> g;
  Rng rng(1);
  ParamStore<double> store;
  Tensor<double> eye = Tensor<double>::zeros({4, 4});
  for (int i = 0; i < 4; ++i) eye.at2(i, i) = 1.0;
  store.add("w", eye);
  store.add("b", Tensor<double>::zeros({4}));
  const Tensor<double> x = random_tensor<double>({5, 4}, rng);
  const int y = g.dense(g.constant(x), g.param(store, "w"), g.param(store, "b"));
  CHECK(g.value(y).data == x.data);
}

TEST_CASE("relu basics") {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::zeros({1, 2});
  x.data = {-1.0, 2.0};
  const int y = g.relu(g.constant(x));
  CHECK(g.value(y).data[0] == 0.0);
  CHECK(g.value(y).data[1] == 2.0);
}

TEST_CASE("conv2d output shape for stride 2 pad 1") {
  Graph<double> g;
  Rng rng(2);
  const int x = g.constant(random_tensor<double>({1, 64, 64}, rng));
  ParamStore<double> store;
  store.add("k", glorot_uniform<double>({4, 1, 3, 3}, 9, 36, rng));
  store.add("b", Tensor<double>::zeros({4}));
  const int y = g.conv2d(x, g.param(store, "k"), g.param(store, "b"), 2, 1);
  CHECK(g.value(y).shape == std::vector<std::int64_t>{4, 32, 32});
}

TEST_CASE("gradient of a linear map is the transposed weight times the seed") {
  Graph<double> g;
  Rng rng(3);
  ParamStore<double> store;
  store.add("w", random_tensor<double>({3, 2}, rng));
  const Tensor<double> x = random_tensor<double>({1, 3}, rng);
  const int xin = g.input(x);
  const int y = g.matmul(xin, g.param(store, "w"));
  const int loss = g.sum_all(y);  // seed gradient of ones
  g.backward(loss);
  const auto gx = g.grad_of(xin);
  for (int i = 0; i < 3; ++i) {
    const double expect = store.param("w").at2(i, 0) + store.param("w").at2(i, 1);
    CHECK(gx.data[static_cast<std::size_t>(i)] == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("gradient of mse(x, x) is zero") {
  Graph<double> g;
  Rng rng(4);
  const Tensor<double> x = random_tensor<double>({7, 2}, rng);
  const int xin = g.input(x);
  const int loss = g.squared_error_mean(xin, x);
  g.backward(loss);
  CHECK(g.value(loss).data[0] == 0.0);
  for (double v : g.grad_of(xin).data) CHECK(v == 0.0);
}

TEST_CASE("softplus is positive and its gradient is the logistic") {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::zeros({1, 5});
  x.data = {-40.0, -2.0, 0.0, 3.0, 50.0};
  const int xin = g.input(x);
  const int y = g.softplus(xin);
  for (double v : g.value(y).data) CHECK(v > 0.0);
  CHECK(g.value(y).data[4] == Catch::Approx(50.0));
  const int loss = g.sum_all(y);
  g.backward(loss);
  const auto gx = g.grad_of(xin);
  for (int i = 0; i < 5; ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-x.data[static_cast<std::size_t>(i)]));
    CHECK(gx.data[static_cast<std::size_t>(i)] == Catch::Approx(sig).margin(1e-12));
  }
}

TEST_CASE("composite graph matches central finite differences in 64-bit") {
  auto store = composite_params<double>(21);
  std::map<std::string, Tensor<double>> analytic;
  composite_loss<double>(store, true, &analytic);
  store.zero_grad();
  Rng rng(77);
  const auto rep = finite_difference_check<double>(
      store, analytic,
      [](ParamStore<double>& s) { return composite_loss<double>(s, false, nullptr); }, 100, 1e-5,
      rng);
  CHECK(rep.n_checked == 100);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("32-bit mode passes the same gradient check at reduced tolerance") {
  auto store = composite_params<float>(21);
  std::map<std::string, Tensor<float>> analytic;
  composite_loss<float>(store, true, &analytic);
  store.zero_grad();
  Rng rng(78);
  const auto rep = finite_difference_check<float>(
      store, analytic,
      [](ParamStore<float>& s) { return composite_loss<float>(s, false, nullptr); }, 100, 1e-2,
      rng);
  CHECK(rep.max_rel_err < 1e-2);
}

TEST_CASE("backward before forward is rejected") {
  Graph<double> g(false);
  const int x = g.constant(Tensor<double>::full({1}, 2.0));
  CHECK_THROWS_AS(g.backward(x), std::logic_error);
}

TEST_CASE("shape mismatches report both shapes") {
  Graph<double> g;
  const int a = g.constant(Tensor<double>::zeros({2, 3}));
  const int b = g.constant(Tensor<double>::zeros({4, 5}));
  try {
    g.matmul(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(4,5)") != std::string::npos);
  }
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
  auto store = composite_params<double>(31);
  const auto before = store.params;
  auto state = AdamState<double>::init(store);
  adam_step(store, state);
  for (const auto& [name, p] : store.params) CHECK(p.data == before.at(name).data);
}

TEST_CASE("adam per-step magnitude approaches lr under a constant gradient") {
  ParamStore<double> store;
  store.add("p", Tensor<double>::full({3}, 1.0));
  auto state = AdamState<double>::init(store);  // default lr 0.005
  CHECK(state.lr == 0.005);
  double prev = store.param("p").data[0];
  double step_mag = 0.0;
  for (int it = 0; it < 1000; ++it) {
    Tensor<double> g = Tensor<double>::zeros({3});
    g.data = {0.37, -2.0, 14.0};
    store.accumulate_grad("p", g);
    adam_step(store, state);
    step_mag = std::abs(store.param("p").data[0] - prev);
    prev = store.param("p").data[0];
  }
  CHECK(step_mag == Catch::Approx(state.lr).epsilon(0.05));
}

TEST_CASE("gradient accumulation is order independent to 1e-12") {
  Rng rng(55);
  std::vector<Tensor<double>> contributions;
  for (int c = 0; c < 64; ++c)
    contributions.push_back(random_tensor<double>({32}, rng, -1e6, 1e6));

  ParamStore<double> fwd;
  fwd.add("p", Tensor<double>::zeros({32}));
  for (const auto& c : contributions) fwd.accumulate_grad("p", c);

  ParamStore<double> rev;
  rev.add("p", Tensor<double>::zeros({32}));
  for (auto it = contributions.rbegin(); it != contributions.rend(); ++it)
    rev.accumulate_grad("p", *it);

  for (std::size_t i = 0; i < 32; ++i) {
    const double a = fwd.grad_at("p", i);
    const double b = rev.grad_at("p", i);
    CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)));
  }
}

TEST_CASE("ops are deterministic given identical inputs") {
  auto s1 = composite_params<double>(91);
  auto s2 = composite_params<double>(91);
  std::map<std::string, Tensor<double>> g1, g2;
  const double l1 = composite_loss<double>(s1, true, &g1);
  const double l2 = composite_loss<double>(s2, true, &g2);
  CHECK(l1 == l2);
  for (const auto& [name, g] : g1) CHECK(g.data == g2.at(name).data);
}
