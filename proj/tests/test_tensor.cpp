#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "vlf/errors.hpp"
#include "vlf/rng.hpp"
#include "vlf/tensor.hpp"
#include "vlf/tensor_io.hpp"

#include <sstream>

using namespace vlf;

namespace {

// Independent oracle: naive triple-loop matrix product.
std::vector<double> naive_matmul(const std::vector<double>& a,
                                 const std::vector<double>& b, int m, int k,
                                 int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p)
        c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

Tensor random_matrix(Rng& rng, int m, int n, bool requires_grad = false) {
  std::vector<double> data(static_cast<std::size_t>(m) * n);
  for (auto& v : data) v = rng.normal();
  return Tensor::matrix(m, n, std::move(data), requires_grad);
}

}  // namespace

TEST_CASE("matmul identity and dot product") {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor b = Tensor::matrix(2, 2, {3, 4, 5, 6});
  const Tensor c = matmul(eye, b);
  CHECK(c.at(0, 0) == 3);
  CHECK(c.at(0, 1) == 4);
  CHECK(c.at(1, 0) == 5);
  CHECK(c.at(1, 1) == 6);

  const Tensor row = Tensor::matrix(1, 2, {1, 2});
  const Tensor col = Tensor::matrix(2, 1, {3, 4});
  CHECK(matmul(row, col).value() == 11);
}

TEST_CASE("matmul agrees with naive oracle up to 8x8x8") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_int(8));
    const int k = 1 + static_cast<int>(rng.uniform_int(8));
    const int n = 1 + static_cast<int>(rng.uniform_int(8));
    const Tensor a = random_matrix(rng, m, k);
    const Tensor b = random_matrix(rng, k, n);
    const Tensor c = matmul(a, b);
    const auto expect = naive_matmul({a.data().begin(), a.data().end()},
                                     {b.data().begin(), b.data().end()}, m, k,
                                     n);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(std::abs(c.at(i) - expect[i]) < 1e-12);
    }
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("[2x3]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("[2x2]"), ShapeError);
}

TEST_CASE("softmax_rows basics") {
  const Tensor z = softmax_rows(Tensor::matrix(1, 2, {0, 0}));
  CHECK(z.at(0, 0) == doctest::Approx(0.5));
  CHECK(z.at(0, 1) == doctest::Approx(0.5));

  const Tensor big = softmax_rows(Tensor::matrix(1, 2, {1000, 1000}));
  CHECK(big.at(0, 0) == doctest::Approx(0.5));
  CHECK(std::isfinite(big.at(0, 1)));

  const Tensor s = softmax_rows(Tensor::matrix(1, 2, {1, -1}));
  CHECK(s.at(0, 0) == doctest::Approx(0.8808).epsilon(1e-3));
  CHECK(s.at(0, 1) == doctest::Approx(0.1192).epsilon(1e-3));

  CHECK_THROWS_AS(
      softmax_rows(Tensor::matrix(1, 2, {std::nan(""), 0.0})), NumericError);
  CHECK_THROWS_AS(
      softmax_rows(Tensor::matrix(
          1, 2, {std::numeric_limits<double>::infinity(), 0.0})),
      NumericError);
}

TEST_CASE("softmax_rows rows sum to one and shift invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_int(6));
    const int n = 1 + static_cast<int>(rng.uniform_int(6));
    const Tensor x = random_matrix(rng, m, n);
    const Tensor y = softmax_rows(x);
    for (int i = 0; i < m; ++i) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        CHECK(y.at(i, j) >= 0.0);
        sum += y.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    // Per-row constant shift leaves the output unchanged.
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (int i = 0; i < m; ++i) {
      const double c = rng.uniform(-5.0, 5.0);
      for (int j = 0; j < n; ++j) shifted[i * n + j] += c;
    }
    const Tensor y2 = softmax_rows(Tensor::matrix(m, n, shifted));
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(std::abs(y.at(i) - y2.at(i)) < 1e-12);
    }
  }
}

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  Tensor loss = sum_all(hadamard(x, x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of matmul sum matches ones * B^T") {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4}, true);
  Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
  backward(sum_all(matmul(a, b)));
  // dA = ones * B^T: row-independent, dA[i][p] = sum_j B[p][j]
  CHECK(a.grad()[0] == doctest::Approx(11.0));
  CHECK(a.grad()[1] == doctest::Approx(15.0));
  CHECK(a.grad()[2] == doctest::Approx(11.0));
  CHECK(a.grad()[3] == doctest::Approx(15.0));
}

TEST_CASE("constant tensors get no gradient") {
  Tensor x = Tensor::matrix(1, 2, {1, 2}, false);
  Tensor y = Tensor::matrix(1, 2, {3, 4}, true);
  backward(sum_all(add(x, y)));
  CHECK(!x.has_grad());
  CHECK(y.has_grad());
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::matrix(1, 2, {1, 2}, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);
}

TEST_CASE("fan-out accumulates additively") {
  Tensor x = Tensor::matrix(1, 3, {1, 2, 3}, true);
  backward(add(sum_all(x), sum_all(x)));
  auto g2 = std::vector<double>(x.grad().begin(), x.grad().end());

  Tensor x1 = Tensor::matrix(1, 3, {1, 2, 3}, true);
  backward(sum_all(x1));
  for (std::size_t i = 0; i < g2.size(); ++i) {
    CHECK(g2[i] == doctest::Approx(2.0 * x1.grad()[i]));
  }
}

TEST_CASE("topological order puts parents before children") {
  Tensor x = Tensor::matrix(1, 2, {1, 2}, true);
  Tensor y = vtanh(scale(x, 0.5));
  Tensor loss = sum_all(y);
  const auto order = topo_order(loss);
  CHECK(order.size() == 4);
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (const auto& p : order[i]->parents) {
      bool parent_before = false;
      for (std::size_t j = 0; j < i; ++j) {
        if (order[j] == p.get()) parent_before = true;
      }
      CHECK(parent_before);
    }
  }
}

TEST_CASE("grad_check on polynomial, softmax and misc ops") {
  const Tensor x = Tensor::matrix(1, 3, {1, 2, 3});
  const double e1 = grad_check(
      [](const Tensor& t) { return sum_all(hadamard(t, t)); }, x, 1e-5);
  CHECK(e1 < 1e-7);

  const double e2 = grad_check(
      [](const Tensor& t) {
        return sum_all(slice_cols(softmax_rows(t), 0, 1));
      },
      Tensor::matrix(2, 3, {0.3, -0.2, 1.1, 0.5, 0.9, -1.4}), 1e-5);
  CHECK(e2 < 1e-6);
}

TEST_CASE("grad_check covers every differentiable op on random inputs") {
  Rng rng(11);
  auto check = [&](const std::function<Tensor(const Tensor&)>& f,
                   const Tensor& x) {
    CHECK(grad_check(f, x, 1e-5) < 1e-5);
  };
  const Tensor x = random_matrix(rng, 3, 4);
  const Tensor other = random_matrix(rng, 4, 2);
  const Tensor same = random_matrix(rng, 3, 4);
  const Tensor bias = random_matrix(rng, 1, 4);

  check([&](const Tensor& t) { return sum_all(matmul(t, other)); }, x);
  check([&](const Tensor& t) { return sum_all(hadamard(vtanh(t), same)); }, x);
  check([&](const Tensor& t) { return sum_all(transpose(t)); }, x);
  check([&](const Tensor& t) { return sum_all(add_row_bias(t, bias)); }, x);
  check([&](const Tensor& t) { return sum_all(hadamard(mean_rows(t), bias)); },
        x);
  check([&](const Tensor& t) {
    return sum_all(hadamard(softmax_rows(t), same));
  }, x);
  check([&](const Tensor& t) {
    return sum_all(concat_cols({slice_rows(t, 1, 2), slice_rows(t, 0, 2)}));
  }, x);
  check([&](const Tensor& t) {
    return sum_all(hadamard(concat_rows({t, t}), concat_rows({same, same})));
  }, x);
  check([&](const Tensor& t) {
    return cross_entropy(matmul(t, other), {1, 0, 1});
  }, x);
  check([&](const Tensor& t) {
    return sum_all(hadamard(reshape(t, {4, 3}), reshape(same, {4, 3})));
  }, x);

  const Tensor map = Tensor::from_data(
      {4, 4, 2},
      [&] {
        std::vector<double> v(32);
        for (auto& e : v) e = rng.normal();
        return v;
      }());
  check([&](const Tensor& t) {
    return sum_all(hadamard(extract_patches(t, 2), extract_patches(t, 2)));
  }, map);

  const Tensor table = random_matrix(rng, 5, 3);
  check([&](const Tensor& t) {
    return sum_all(hadamard(embed_rows(t, {1, 4, 1}),
                            embed_rows(t, {1, 4, 1})));
  }, table);
}

TEST_CASE("grad_check rejects bad eps and nondeterministic functions") {
  const Tensor x = Tensor::matrix(1, 2, {1, 2});
  CHECK_THROWS_AS(grad_check([](const Tensor& t) { return sum_all(t); }, x, 0.0),
                  ContractError);
  CHECK_THROWS_AS(
      grad_check([](const Tensor& t) { return sum_all(t); }, x, 0.5),
      ContractError);
  int calls = 0;
  CHECK_THROWS_AS(grad_check(
                      [&calls](const Tensor& t) {
                        return scale(sum_all(t), 1.0 + 0.1 * calls++);
                      },
                      x, 1e-5),
                  DeterminismError);
}

TEST_CASE("cross entropy values") {
  // Uniform logits over V classes -> ln V.
  const Tensor logits = Tensor::matrix(2, 4, std::vector<double>(8, 0.25));
  CHECK(cross_entropy(logits, {0, 3}).value() ==
        doctest::Approx(std::log(4.0)));

  // Strong one-hot logits matching the target -> ~0.
  const Tensor hot = Tensor::matrix(1, 3, {50, 0, 0});
  CHECK(cross_entropy(hot, {0}).value() == doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(
      masked_cross_entropy(hot, {0}, std::vector<std::uint8_t>{0}),
      ContractError);
}

TEST_CASE("slice and concat round trips") {
  Rng rng(5);
  const Tensor x = random_matrix(rng, 4, 6);
  const Tensor back =
      concat_cols({slice_cols(x, 0, 2), slice_cols(x, 2, 4)});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.at(i) == x.at(i));
  const Tensor back2 =
      concat_rows({slice_rows(x, 0, 1), slice_rows(x, 1, 3)});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back2.at(i) == x.at(i));
}

TEST_CASE("extract_patches row-major order") {
  // 2x2x1 map [[a,b],[c,d]] flattens to tokens [a],[b],[c],[d] at patch 1.
  const Tensor map = Tensor::from_data({2, 2, 1}, {1, 2, 3, 4});
  const Tensor t = extract_patches(map, 1);
  CHECK(t.rows() == 4);
  CHECK(t.cols() == 1);
  for (int i = 0; i < 4; ++i) CHECK(t.at(i, 0) == i + 1);

  // Full-map patch keeps (dy, dx, channel) order.
  const Tensor whole = extract_patches(map, 2);
  CHECK(whole.rows() == 1);
  CHECK(whole.cols() == 4);
  for (int i = 0; i < 4; ++i) CHECK(whole.at(0, i) == i + 1);
}

TEST_CASE("tensor serialization round trip") {
  Rng rng(99);
  const Tensor t = random_matrix(rng, 3, 5);
  std::stringstream buf;
  write_tensor(buf, t);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "VLFT");
  // header: magic + rank + 2 dims, then payload
  CHECK(bytes.size() == 4 + 4 + 8 + 15 * 8);

  std::stringstream in(bytes);
  const Tensor u = read_tensor(in);
  CHECK(u.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(u.at(i) == t.at(i));

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor(bad), DataError);
}

TEST_CASE("shape invariants") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), ShapeError);
  CHECK_THROWS_AS(reshape(Tensor::matrix(2, 2, {1, 2, 3, 4}), {3, 2}),
                  ShapeError);
  CHECK_THROWS_AS(extract_patches(Tensor::matrix(2, 2, {1, 2, 3, 4}), 1),
                  ShapeError);
}
