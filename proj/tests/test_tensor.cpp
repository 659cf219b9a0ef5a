#include <doctest.h>

#include "dtkt/tensor.hpp"

using namespace dtkt;

TEST_CASE("tensor construction validates shape") {
  num::TensorF t(num::Shape{2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(num::TensorF(num::Shape{0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(num::TensorF(num::Shape{}), std::invalid_argument);
  CHECK_THROWS_AS(num::TensorF(num::Shape{2, 2}, std::vector<float>{1.0f}), std::invalid_argument);
}

TEST_CASE("matmul with identity returns the operand") {
  num::TensorF eye(num::Shape{2, 2}, {1, 0, 0, 1});
  num::TensorF x(num::Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  const num::TensorF y = num::matmul(eye, x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("matmul rejects and names incompatible shapes") {
  num::TensorF a(num::Shape{2, 3});
  num::TensorF b(num::Shape{2, 3});
  try {
    (void)num::matmul(a, b);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("kernel variants agree with naive index evaluation") {
  // fixed small instance exercised against hand loops
  num::TensorF a(num::Shape{2, 3}, {1, -2, 3, 0.5f, 4, -1});
  num::TensorF b(num::Shape{3, 2}, {2, 1, 0, -1, 1, 3});
  const num::TensorF c = num::matmul(a, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      float acc = 0;
      for (std::size_t k = 0; k < 3; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(acc));
    }

  num::TensorF bt(num::Shape{2, 3}, {2, 0, 1, 1, -1, 3});  // b transposed
  const num::TensorF c2 = num::matmul_nt(a, bt);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(c2.at(i, j) == doctest::Approx(c.at(i, j)));

  num::TensorF x = num::TensorF::from_vec({1, 0, -1});
  const num::TensorF mv = num::matvec(a, x);
  CHECK(mv[0] == doctest::Approx(1 - 3));
  CHECK(mv[1] == doctest::Approx(0.5f + 1));

  num::TensorF w = num::TensorF::from_vec({2, -1});
  const num::TensorF vm = num::vecmat(w, a);
  CHECK(vm[0] == doctest::Approx(2 * 1 - 0.5f));
  CHECK(vm[1] == doctest::Approx(2 * -2 - 4));
  CHECK(vm[2] == doctest::Approx(2 * 3 + 1));

  const num::TensorF op = num::outer(w, x);
  CHECK(op.at(0, 0) == 2);
  CHECK(op.at(1, 2) == 1);
}

TEST_CASE("softmax of a zero row is uniform") {
  num::TensorF v = num::TensorF::from_vec({0, 0, 0});
  num::softmax_row_inplace(v.data(), 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(v[i] == doctest::Approx(1.0 / 3));
}

TEST_CASE("all_finite flags bad values") {
  num::TensorF t(num::Shape{2});
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<float>::infinity();
  CHECK(!t.all_finite());
}
