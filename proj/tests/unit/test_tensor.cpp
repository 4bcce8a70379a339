#include <doctest.h>

#include <cmath>
#include <cstring>

#include "ctrkd/tape.hpp"
#include "test_support.hpp"

using namespace ctrkd;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor random_param(Shape shape, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Central-difference check of d loss / d param for every entry of `params`.
double max_fd_error(const std::vector<Tensor>& params,
                    const std::function<Tensor(Tape&)>& loss_fn, double h = 1e-5) {
  for (auto p : params) p.zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }
  double worst = 0.0;
  for (auto p : params) {
    auto v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      Tape t1(false);
      const double up = loss_fn(t1).item();
      v[i] = orig - h;
      Tape t2(false);
      const double down = loss_fn(t2).item();
      v[i] = orig;
      worst = std::max(worst, testing::relative_error(p.grad()[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape tape(false);
  const auto eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const auto m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(vals(tape.matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});
  const auto r = tape.matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r.item() == 11.0);
  CHECK_THROWS_AS(tape.matmul(m, Tensor::matrix(1, 2, {1, 2})), DimensionError);
}

TEST_CASE("matmul backward matches finite differences") {
  Rng rng(3);
  auto a = random_param({3, 4}, rng);
  auto b = random_param({4, 2}, rng);
  auto c = Tensor::matrix(3, 2, {0.3, -1.2, 0.7, 2.0, -0.4, 1.1});
  const double err = max_fd_error({a, b}, [&](Tape& t) { return t.sum(t.mul(t.matmul(a, b), c)); });
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise examples") {
  Tape tape(false);
  CHECK(tape.sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(tape.relu(Tensor::scalar(-3.0)).item() == 0.0);
  CHECK(tape.relu(Tensor::scalar(3.0)).item() == 3.0);
  CHECK(tape.sigmoid(Tensor::scalar(std::log(3.0))).item() == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(tape.add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
  // scalar with tensor
  CHECK(vals(tape.mul(Tensor::scalar(2.0), Tensor::vector({1, 2}))) == std::vector<double>{2, 4});
}

TEST_CASE("sigmoid stays finite for extreme logits") {
  Tape tape(false);
  const auto s = tape.sigmoid(Tensor::vector({-800.0, 800.0}));
  CHECK(s[0] >= 0.0);
  CHECK(s[1] == 1.0);
  CHECK(std::isfinite(s[0]));
}

TEST_CASE("elementwise backward matches finite differences") {
  Rng rng(5);
  auto a = random_param({6}, rng);
  auto b = random_param({6}, rng);
  auto k = random_param({}, rng);
  auto f = [&](Tape& t) {
    auto x = t.add(t.mul(a, b), t.sub(a, t.mul(k, b)));
    x = t.add(t.sigmoid(x), t.relu(t.square(x)));
    return t.sum(x);
  };
  CHECK(max_fd_error({a, b, k}, f) < 1e-6);
}

TEST_CASE("reduce_sum examples") {
  Tape tape(false);
  CHECK(tape.sum(Tensor::vector({1, 2, 3})).item() == 6.0);
  CHECK(tape.sum(Tensor(Shape{5}, 0.0)).item() == 0.0);
  CHECK(vals(tape.reduce_sum(Tensor::matrix(2, 2, {1, 2, 3, 4}), 1)) == std::vector<double>{3, 7});
  CHECK(vals(tape.reduce_sum(Tensor::matrix(2, 2, {1, 2, 3, 4}), 0)) == std::vector<double>{4, 6});
  CHECK_THROWS_AS(tape.reduce_sum(Tensor::matrix(2, 2, {1, 2, 3, 4}), 2), DimensionError);
}

TEST_CASE("reduce_sum backward broadcasts") {
  Rng rng(8);
  auto a = random_param({2, 3, 4}, rng);
  auto w = Tensor(Shape{2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(max_fd_error({a}, [&](Tape& t) { return t.sum(t.mul(t.reduce_sum(a, 1), w)); }) < 1e-6);
}

TEST_CASE("dropout") {
  Rng rng(11);
  Tape tape(false);
  const Tensor ones(Shape{100000}, 1.0);
  CHECK(vals(tape.dropout(ones, 0.0, true, rng)) == vals(ones));
  CHECK(vals(tape.dropout(ones, 0.5, false, rng)) == vals(ones));
  const auto d = tape.dropout(ones, 0.5, true, rng);
  double mean = 0.0;
  for (double v : d.values()) {
    CHECK((v == 0.0 || v == 2.0));
    mean += v;
  }
  mean /= 100000.0;
  CHECK(std::abs(mean - 1.0) < 0.02);
  CHECK_THROWS(tape.dropout(ones, 1.0, true, rng));
}

TEST_CASE("backward examples") {
  auto w = Tensor::parameter({3}, {0.1, 0.2, 0.3});
  {
    Tape tape;
    tape.backward(tape.sum(w));
  }
  CHECK(std::vector<double>(w.grad().begin(), w.grad().end()) == std::vector<double>{1, 1, 1});

  auto v = Tensor::parameter({2}, {1, 2});
  {
    Tape tape;
    tape.backward(tape.sum(tape.square(v)));
  }
  CHECK(v.grad()[0] == 2.0);
  CHECK(v.grad()[1] == 4.0);

  Tape tape;
  CHECK_THROWS_AS(tape.backward(tape.square(v)), DimensionError);
}

TEST_CASE("gradient accumulation doubles") {
  Rng rng(2);
  auto a = random_param({3, 3}, rng);
  auto b = random_param({3, 1}, rng);
  auto run = [&] {
    Tape tape;
    tape.backward(tape.sum(tape.sigmoid(tape.matmul(a, b))));
  };
  run();
  const std::vector<double> once(a.grad().begin(), a.grad().end());
  run();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(a.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("a tensor used twice sums both adjoints") {
  auto x = Tensor::parameter({}, {3.0});
  Tape tape;
  tape.backward(tape.add(tape.mul(x, x), x));  // x^2 + x
  CHECK(x.grad()[0] == 7.0);
}

TEST_CASE("composite primitives match finite differences") {
  Rng rng(21);
  auto table = random_param({5, 3}, rng);
  auto bias = random_param({3}, rng);
  auto cols = random_param({3}, rng);
  auto rows = random_param({4}, rng);
  auto mix = random_param({2, 6}, rng);
  auto maps = random_param({4, 2, 3}, rng);
  auto base = random_param({4, 3, 3}, rng);
  const std::vector<std::uint32_t> idx{0, 4, 4, 2};
  auto f = [&](Tape& t) {
    auto g = t.gather_rows(table, idx);                         // [4,3]
    auto x = t.scale_cols(t.scale_rows(t.add_bias(g, bias), rows), cols);
    auto cat = t.concat_cols(std::vector<Tensor>{x, t.transpose(t.transpose(x))});
    auto sm = t.softmax_rows(cat);
    auto z = t.pairwise_hadamard(maps, base);                   // [4,6,3]
    auto mixed = t.mix_maps(mix, z);                            // [4,2,3]
    auto pooled = t.reshape(t.reduce_sum(mixed, 2), Shape{8});
    auto probs = t.sigmoid(t.reshape(t.reduce_sum(x, 1), Shape{4}));
    auto ce = t.cross_entropy(probs, t.sigmoid(rows));
    return t.add(t.add(t.sum(t.mul(sm, sm)), t.mean(pooled)), ce);
  };
  CHECK(max_fd_error({table, bias, cols, rows, mix, maps, base}, f) < 1e-6);
}

TEST_CASE("non-recording tape keeps no history") {
  auto w = Tensor::parameter({2}, {1, 2});
  Tape tape(false);
  auto y = tape.sum(tape.square(w));
  CHECK(tape.num_ops() == 0);
  CHECK(y.item() == 5.0);
}

TEST_CASE("determinism: same seed, same ops, same bits") {
  auto run = [] {
    Rng rng(99);
    auto a = random_param({4, 4}, rng);
    auto b = random_param({4, 1}, rng);
    Tape tape;
    auto out = tape.dropout(tape.relu(tape.matmul(a, b)), 0.3, true, rng);
    tape.backward(tape.sum(out));
    std::vector<double> bits(out.values().begin(), out.values().end());
    bits.insert(bits.end(), a.grad().begin(), a.grad().end());
    return bits;
  };
  const auto x = run(), y = run();
  CHECK(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0);
}
