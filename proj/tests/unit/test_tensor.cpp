#include <sstream>

#include "aniformer/errors.hpp"
#include "aniformer/ops.hpp"
#include "aniformer/tensor.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace aniformer;
using T = Tensor<double>;

TEST_CASE("shape and value invariants") {
  CHECK_THROWS_AS(T({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(T({2, 0}, {}), DimensionError);
  T t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 6);
  CHECK(t.extent(-1) == 3);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("sum of squares backward") {
  T x({2}, {1, 2});
  x.set_requires_grad(true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
}

TEST_CASE("sum of softmax has zero gradient") {
  auto x = testing::random_tensor<double>({5}, 3);
  x.set_requires_grad(true);
  sum(softmax(x, 0)).backward();
  for (double g : x.grad()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("fan-out accumulates: d(x+x)/dx = 2 exactly") {
  auto x = testing::random_tensor<double>({3, 4}, 9);
  x.set_requires_grad(true);
  sum(add(x, x)).backward();
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("repeated backward is rejected unless accumulating") {
  T x({2}, {1, 2});
  x.set_requires_grad(true).set_name("x");
  auto loss = sum(square(x));
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), ContractError);  // record consumed

  CHECK_THROWS_AS(sum(square(x)).backward(), ContractError);  // grad already present
  sum(square(x)).backward(GradMode::kAccumulate);
  CHECK(x.grad()[1] == 8.0);
  x.zero_grad();
  sum(square(x)).backward();
  CHECK(x.grad()[1] == 4.0);
}

TEST_CASE("backward requires a single-element loss") {
  T x({2}, {1, 2});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(square(x).backward(), DimensionError);
}

TEST_CASE("computation record lists each op once in reverse topological order") {
  T x({3}, {1, 2, 3});
  x.set_requires_grad(true);
  auto h = tanh(x);
  auto loss = sum(add(h, relu(h)));
  const auto record = computation_record(loss);
  REQUIRE(record.size() == 4);
  CHECK(record.front() == "sum");
  CHECK(record.back() == "tanh");
}

TEST_CASE("no recording without grad-requiring inputs or under NoGradGuard") {
  T x({2}, {1, 2});
  CHECK(sum(x).is_leaf());
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    CHECK_FALSE(sum(x).requires_grad());
  }
  CHECK(sum(x).requires_grad());
}

TEST_CASE("anomaly mode names the offending op") {
  T x({2}, {1e308, 1e308});
  CHECK_NOTHROW(add(x, x));
  set_anomaly_detection(true);
  CHECK_THROWS_AS(add(x, x), NumericalError);
  set_anomaly_detection(false);
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    auto a = testing::random_tensor<double>({2, 4, 5}, 1);
    auto b = testing::random_tensor<double>({2, 5, 3}, 2);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto y = softmax(batch_matmul(a, b), -1);
    auto loss = sum(mul(y, y));
    loss.backward();
    std::vector<double> out(a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("debug dump lists shape then 17 significant digits") {
  T t({1, 2}, {0.1, -2.5});
  std::ostringstream os;
  dump_text(t, os);
  CHECK(os.str() == "shape 1 2\n0.10000000000000001\n-2.5\n");
}
