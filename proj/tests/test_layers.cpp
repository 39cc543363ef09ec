#include <doctest.h>

#include <numeric>

#include "test_util.hpp"
#include "vseg/layers.hpp"
#include "vseg/training.hpp"

using namespace vseg;
using namespace vseg::testing;

namespace {

Tensor<double> as_tensor(Shape s, const std::vector<double>& v) { return Tensor<double>(std::move(s), v); }

double dot(const Tensor<double>& a, const std::vector<double>& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * r[i];
  return acc;
}

}  // namespace

TEST_CASE("conv forward matches direct summation for 2D and 3D") {
  Rng rng(11);
  std::uniform_int_distribution<std::size_t> maps(1, 3), side(3, 7), ker(1, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const bool vol = trial % 2 == 1;
    const std::size_t in_m = maps(rng), out_m = maps(rng), t = ker(rng);
    const Spatial in{vol ? side(rng) : 1, side(rng), side(rng)};
    const ConvShape cs = vol ? ConvShape::cubic(in_m, out_m, t) : ConvShape::planar(in_m, out_m, t);
    const auto x = random_values(in_m * in.size(), rng);
    const auto w = random_values(cs.weight_count(), rng);
    const auto b = random_values(out_m, rng);
    const auto y = conv_forward(as_tensor(map_shape(in_m, in, vol), x), ConvParams<double>{cs, w, b});
    const auto ref = conv_reference(x, in_m, in, w, b, out_m, cs.kernel);
    REQUIRE(y.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("conv kernel is not flipped") {
  // A one-hot kernel at offset (0, 1) picks x[r][c + 1].
  const ConvShape cs = ConvShape::planar(1, 1, 2);
  const std::vector<double> w{0, 1, 0, 0}, b{0};
  const auto x = as_tensor({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const auto y = conv_forward(x, ConvParams<double>{cs, w, b});
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y[0] == 2.0);
  CHECK(y[1] == 3.0);
}

TEST_CASE("conv rejects inputs smaller than the kernel and rank mismatches") {
  const ConvShape cs = ConvShape::planar(1, 1, 5);
  const std::vector<double> w(25, 0.0), b(1, 0.0);
  CHECK_THROWS_AS(conv_forward(Tensor<double>(Shape{1, 4, 9}), ConvParams<double>{cs, w, b}), ShapeError);
  CHECK_THROWS_AS(conv_forward(Tensor<double>(Shape{1, 5, 5, 5}), ConvParams<double>{cs, w, b}), ShapeError);
  CHECK_THROWS_AS(conv_forward(Tensor<double>(Shape{2, 5, 5}), ConvParams<double>{cs, w, b}), ShapeError);
}

TEST_CASE("conv gradients match central differences") {
  Rng rng(5);
  for (bool vol : {false, true}) {
    const ConvShape cs = vol ? ConvShape::cubic(2, 3, 2) : ConvShape::planar(2, 3, 3);
    const Spatial in = vol ? Spatial{4, 3, 5} : Spatial{1, 5, 6};
    auto x = random_values(2 * in.size(), rng);
    auto w = random_values(cs.weight_count(), rng);
    auto b = random_values(3, rng);
    const Shape xs = map_shape(2, in, vol);
    const auto probe = conv_forward(as_tensor(xs, x), ConvParams<double>{cs, w, b});
    const auto r = random_values(probe.size(), rng);
    auto loss = [&] { return dot(conv_forward(as_tensor(xs, x), ConvParams<double>{cs, w, b}), r); };
    const auto bw = conv_backward(as_tensor(xs, x), ConvParams<double>{cs, w, b}, as_tensor(probe.shape(), r));
    CHECK(max_rel_error(bw.grad_x.storage(), numeric_gradient(x, loss)) <= 1e-4);
    CHECK(max_rel_error(bw.grad_weights, numeric_gradient(w, loss)) <= 1e-4);
    CHECK(max_rel_error(bw.grad_bias, numeric_gradient(b, loss)) <= 1e-4);
  }
}

TEST_CASE("conv backward accumulates into existing gradients") {
  Rng rng(9);
  const ConvShape cs = ConvShape::planar(1, 2, 3);
  const auto x = random_values(25, rng), w = random_values(cs.weight_count(), rng), b = random_values(2, rng);
  const auto up = random_values(18, rng);
  const auto once = conv_backward(as_tensor({1, 5, 5}, x), ConvParams<double>{cs, w, b}, as_tensor({2, 3, 3}, up));
  std::vector<double> gw(cs.weight_count(), 0.0), gb(2, 0.0);
  for (int k = 0; k < 2; ++k) {
    conv_backward_accumulate(as_tensor({1, 5, 5}, x), ConvParams<double>{cs, w, b}, as_tensor({2, 3, 3}, up),
                             ConvGrads<double>{gw, gb}, false);
  }
  for (std::size_t i = 0; i < gw.size(); ++i) CHECK(gw[i] == doctest::Approx(2 * once.grad_weights[i]));
  for (std::size_t i = 0; i < gb.size(); ++i) CHECK(gb[i] == doctest::Approx(2 * once.grad_bias[i]));
}

TEST_CASE("max pool forward matches direct scan; strict mode rejects ragged inputs") {
  Rng rng(2);
  std::uniform_int_distribution<std::size_t> side(2, 9), win(1, 3);
  for (int trial = 0; trial < 40; ++trial) {
    const bool vol = trial % 2 == 0;
    const std::size_t p = win(rng);
    const Spatial in{vol ? side(rng) : 1, side(rng), side(rng)};
    if (in.h < p || in.w < p || (vol && in.d < p)) continue;
    const auto x = random_values(2 * in.size(), rng);
    const auto r = maxpool_forward(as_tensor(map_shape(2, in, vol), x), p, PoolEdge::Truncate);
    const auto ref = pool_reference(x, 2, in, p, vol ? p : 1);
    REQUIRE(r.output.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(r.output[i] == ref[i]);
  }
  CHECK_THROWS_AS(maxpool_forward(Tensor<double>(Shape{1, 5, 4}), 2, PoolEdge::Strict), ShapeError);
  CHECK_NOTHROW(maxpool_forward(Tensor<double>(Shape{1, 5, 4}), 2, PoolEdge::Truncate));
}

TEST_CASE("max pool routes gradient to the argmax, ties to the lowest index") {
  const auto x = as_tensor({1, 2, 2}, {3, 3, 1, 3});
  const auto r = maxpool_forward(x, 2);
  CHECK(r.argmax[0] == 0);
  const auto g = maxpool_backward(r.argmax, r.input_shape, as_tensor({1, 1, 1}, {2.5}));
  CHECK(g.storage() == std::vector<double>{2.5, 0, 0, 0});

  Rng rng(3);
  auto v = distinct_values(2 * 4 * 6 * 6, rng);
  const Shape s{2, 4, 6, 6};
  const auto probe = maxpool_forward(as_tensor(s, v), 2);
  const auto rr = random_values(probe.output.size(), rng);
  auto loss = [&] { return dot(maxpool_forward(as_tensor(s, v), 2).output, rr); };
  const auto gx = maxpool_backward(probe.argmax, probe.input_shape, as_tensor(probe.output.shape(), rr));
  CHECK(max_rel_error(gx.storage(), numeric_gradient(v, loss)) <= 1e-4);
}

TEST_CASE("fully connected forward and gradients") {
  Rng rng(4);
  auto x = random_values(7, rng), w = random_values(21, rng), b = random_values(3, rng);
  const auto y = full_forward(as_tensor({7}, x), FullParams<double>{7, 3, w, b});
  for (std::size_t o = 0; o < 3; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < 7; ++i) acc += w[o * 7 + i] * x[i];
    CHECK(y[o] == doctest::Approx(acc).epsilon(1e-12));
  }
  const auto r = random_values(3, rng);
  auto loss = [&] { return dot(full_forward(as_tensor({7}, x), FullParams<double>{7, 3, w, b}), r); };
  const auto bw = full_backward(as_tensor({7}, x), FullParams<double>{7, 3, w, b}, as_tensor({3}, r));
  CHECK(max_rel_error(bw.grad_x.storage(), numeric_gradient(x, loss)) <= 1e-4);
  CHECK(max_rel_error(bw.grad_weights, numeric_gradient(w, loss)) <= 1e-4);
  CHECK(max_rel_error(bw.grad_bias, numeric_gradient(b, loss)) <= 1e-4);
  CHECK_THROWS_AS(full_forward(as_tensor({6}, {0, 0, 0, 0, 0, 0}), FullParams<double>{7, 3, w, b}), ShapeError);
}

TEST_CASE("relu forward, subgradient at zero and gradient check") {
  const auto x = as_tensor({4}, {-1.0, 0.0, 2.0, -0.0});
  CHECK(relu_forward(x).storage() == std::vector<double>{0, 0, 2, 0});
  CHECK(relu_backward(x, as_tensor({4}, {1, 1, 1, 1})).storage() == std::vector<double>{0, 0, 1, 0});

  Rng rng(6);
  auto v = random_values(50, rng);
  for (auto& e : v) e += e >= 0 ? 0.01 : -0.01;
  const auto r = random_values(50, rng);
  auto loss = [&] { return dot(relu_forward(as_tensor({50}, v)), r); };
  const auto g = relu_backward(as_tensor({50}, v), as_tensor({50}, r));
  CHECK(max_rel_error(g.storage(), numeric_gradient(v, loss)) <= 1e-4);
}

TEST_CASE("softmax sums to one, survives large logits and its NLL gradient is p - y") {
  const std::vector<double> big{1000.0, 1001.0, 999.0};
  const auto p = softmax<double>(big);
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
  for (double e : p) CHECK(std::isfinite(e));

  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    auto z = random_values(6, rng, -3, 3);
    const std::size_t cls = static_cast<std::size_t>(trial) % 6;
    auto loss = [&] { return nll_loss<double>(softmax<double>(z), cls); };
    const auto g = softmax_nll_grad<double>(softmax<double>(z), cls);
    CHECK(max_rel_error(g, numeric_gradient(z, loss)) <= 1e-4);
  }
}

TEST_CASE("concat and split are inverse") {
  const auto a = as_tensor({2, 2}, {1, 2, 3, 4});
  const auto b = as_tensor({3}, {5, 6, 7});
  const auto c = concat<double>({&a, &b});
  CHECK(c.shape() == Shape{7});
  const auto parts = split(c, {a.shape(), b.shape()});
  CHECK(parts[0] == a);
  CHECK(parts[1] == b);
  CHECK_THROWS_AS(split(c, {Shape{2}}), ShapeError);
}
