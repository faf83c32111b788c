#include "helpers.hpp"

#include "gkd/autodiff.hpp"
#include "gkd/gradcheck.hpp"
#include "gkd/gradsuite.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

using namespace gkd;
using namespace gkd::ad;
using gkd::testing::random_matrix;

namespace {

using UnaryOp = std::function<Tensor(const Tensor&)>;

// Scalar readout with non-uniform weights so that gradients are not trivially symmetric.
Tensor readout(const Tensor& y, const Matrix& w) {
  return reduce_sum(elementwise_mul(y, Tensor::constant(w)));
}

double check_unary(const UnaryOp& op, Index r, Index c, std::uint64_t seed, double offset = 0.0) {
  Rng rng(seed);
  Tensor x = Tensor::parameter(random_matrix(r, c, rng).array() + offset);
  Matrix probe = op(Tensor::constant(x.value())).value();
  const Matrix w = random_matrix(probe.rows(), probe.cols(), rng);
  const auto res = grad_check([&] { return readout(op(x), w); }, {x});
  REQUIRE(res.finite);
  return res.max_rel_error;
}

double check_binary(const std::function<Tensor(const Tensor&, const Tensor&)>& op, Index ar, Index ac, Index br,
                    Index bc, std::uint64_t seed) {
  Rng rng(seed);
  Tensor a = Tensor::parameter(random_matrix(ar, ac, rng));
  Tensor b = Tensor::parameter(random_matrix(br, bc, rng));
  Matrix probe = op(Tensor::constant(a.value()), Tensor::constant(b.value())).value();
  const Matrix w = random_matrix(probe.rows(), probe.cols(), rng);
  const auto res = grad_check([&] { return readout(op(a, b), w); }, {a, b});
  REQUIRE(res.finite);
  return res.max_rel_error;
}

}  // namespace

TEST_CASE("forward values of small examples") {
  CHECK(row_softmax(Tensor::constant(Matrix::Zero(1, 2))).value().isApprox(Matrix::Constant(1, 2, 0.5)));

  Matrix rows(3, 1);
  rows << 1, 2, 3;
  const Matrix s = scatter_sum(Tensor::constant(rows), {0, 0, 1}, 2).value();
  CHECK(s(0, 0) == 3);
  CHECK(s(1, 0) == 3);

  Matrix v(1, 2);
  v << 3, 4;
  const Matrix n = row_l2_normalize(Tensor::constant(v)).value();
  CHECK(n(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  Matrix seg(4, 1);
  seg << 1, 3, 5, 7;
  const Matrix m = segment_mean(Tensor::constant(seg), {0, 0, 2, 2}, 3).value();
  CHECK(m(0, 0) == 2);
  CHECK(m(1, 0) == 0);
  CHECK(m(2, 0) == 6);

  CHECK(softplus(Tensor::scalar(0)).item() == doctest::Approx(std::log(2.0)));
  CHECK(std::isfinite(softplus(Tensor::scalar(800)).item()));
  CHECK(softplus(Tensor::scalar(-800)).item() >= 0);
}

TEST_CASE("softmax is stable for large inputs") {
  Matrix big(2, 3);
  big << 1e4, -1e4, 0, 5e3, 5e3, -1e4;
  const Matrix p = row_softmax(Tensor::constant(big)).value();
  const Matrix lp = row_log_softmax(Tensor::constant(big)).value();
  CHECK(p.allFinite());
  CHECK(lp.allFinite());
  CHECK(p(0, 0) == doctest::Approx(1.0));
  CHECK(p(1, 0) == doctest::Approx(0.5));
  CHECK(lp(1, 1) == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::parameter(random_matrix(3, 4, 1));
  backward(reduce_sum(x));
  CHECK(x.grad() == Matrix::Ones(3, 4));

  Tensor y = Tensor::parameter(random_matrix(2, 3, 2));
  backward(mse(y, y.detach()));
  CHECK(y.grad().cwiseAbs().maxCoeff() == 0.0);

  Tensor z = Tensor::parameter(random_matrix(3, 5, 3));
  backward(reduce_sum(row_softmax(z)));
  CHECK(z.grad().cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("backward rejects bad losses") {
  Tensor x = Tensor::parameter(random_matrix(2, 2, 4));
  CHECK_THROWS_AS(backward(x), ShapeError);
  CHECK_THROWS(backward(reduce_sum(Tensor::constant(Matrix::Ones(2, 2)))));
  CHECK_THROWS(backward(Tensor()));
  Tensor loss = reduce_sum(x);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), std::logic_error);
}

TEST_CASE("grads accumulate until zeroed") {
  Tensor x = Tensor::parameter(Matrix::Ones(1, 2));
  backward(reduce_sum(x));
  backward(reduce_sum(mul_scalar(x, 2)));
  CHECK(x.grad() == Matrix::Constant(1, 2, 3));
  x.zero_grad();
  CHECK(x.grad() == Matrix::Zero(1, 2));
}

TEST_CASE("shared subexpressions are differentiated once per use") {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 3.0));
  Tensor y = elementwise_mul(x, x);
  backward(reduce_sum(add(y, y)));  // 2 x^2
  CHECK(x.grad()(0, 0) == doctest::Approx(12.0));
}

TEST_CASE("shape and index errors name the op") {
  const Tensor a = Tensor::constant(Matrix::Ones(2, 3));
  const Tensor b = Tensor::constant(Matrix::Ones(2, 3));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_WITH_AS(add(a, Tensor::constant(Matrix::Ones(3, 3))), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_WITH_AS(gather_rows(a, {0, 2}), doctest::Contains("gather_rows"), std::out_of_range);
  CHECK_THROWS_WITH_AS(scatter_sum(a, {0, 5}, 2), doctest::Contains("scatter_sum"), std::out_of_range);
  CHECK_THROWS_WITH_AS(segment_mean(a, {0}, 1), doctest::Contains("segment_mean"), ShapeError);
  CHECK_THROWS(elementwise_mul(a, Tensor::constant(Matrix::Ones(3, 2))));
}

TEST_CASE("constants do not record a tape") {
  const Tensor a = Tensor::constant(Matrix::Ones(2, 2));
  const Tensor b = relu(matmul(a, a));
  CHECK_FALSE(b.requires_grad());
  Tensor p = Tensor::parameter(Matrix::Ones(2, 2));
  const Tensor c = matmul(a, p);
  CHECK(c.requires_grad());
  CHECK(c.op() == "matmul");
  CHECK_FALSE(c.detach().requires_grad());
}

TEST_CASE("batch norm on a single row stays finite") {
  Tensor x = Tensor::parameter(random_matrix(1, 3, 5));
  Tensor g = Tensor::parameter(Matrix::Ones(1, 3));
  Tensor b = Tensor::parameter(Matrix::Zero(1, 3));
  BatchStats stats;
  const Tensor y = batch_norm_rows(x, g, b, 1e-5, &stats);
  CHECK(y.value().allFinite());
  CHECK(y.value().cwiseAbs().maxCoeff() == 0.0);
  CHECK(stats.variance.cwiseAbs().maxCoeff() == 0.0);
  backward(reduce_sum(elementwise_mul(y, Tensor::constant(random_matrix(1, 3, 6)))));
  CHECK(x.grad().allFinite());
}

TEST_CASE("grad_check on a sum of squares") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor x = Tensor::parameter(random_matrix(4, 3, seed));
    const auto res = grad_check([&] { return reduce_sum(elementwise_mul(x, x)); }, {x});
    CHECK(res.finite);
    CHECK(res.max_rel_error < 1e-8);
  }
}

TEST_CASE("grad_check flags a wrong backward rule") {
  Tensor x = Tensor::parameter(random_matrix(3, 2, 9));
  const auto res = grad_check([&] { return reduce_sum(gradsuite::sabotaged_square(x)); }, {x});
  CHECK(res.max_rel_error > 1e-2);
  CHECK_FALSE(res.passed(1e-4));
}

TEST_CASE("grad_check reports non-finite gradients with a coordinate") {
  Tensor x = Tensor::parameter(Matrix::Ones(2, 2));
  auto poisoned = [](const Tensor& a) {
    return Tensor::record(a.value(), {a}, "poisoned", [](const Matrix& g, const std::vector<Tensor>& in) {
      Matrix d = g;
      d(1, 0) = std::nan("");
      in[0].accumulate_grad(d);
    });
  };
  const auto res = grad_check([&] { return reduce_sum(poisoned(x)); }, {x});
  CHECK_FALSE(res.finite);
  CHECK(res.row == 1);
  CHECK(res.col == 0);
  CHECK(res.message.find("non-finite") != std::string::npos);
  CHECK_FALSE(res.passed(1e-4));
}

TEST_CASE("every op passes a gradient check over 20 random instances") {
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double e) { worst[name] = std::max(worst[name], e); };
  const IndexList idx{2, 0, 1, 2, 4};
  const IndexList seg{0, 0, 1, 1, 1};

  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::uint64_t seed = 1000 + s;
    note("matmul", check_binary([](auto& a, auto& b) { return matmul(a, b); }, 3, 4, 4, 2, seed));
    note("add", check_binary([](auto& a, auto& b) { return add(a, b); }, 3, 4, 3, 4, seed));
    note("add-bias", check_binary([](auto& a, auto& b) { return add(a, b); }, 3, 4, 1, 4, seed));
    note("sub", check_binary([](auto& a, auto& b) { return sub(a, b); }, 3, 4, 1, 4, seed));
    note("elementwise_mul", check_binary([](auto& a, auto& b) { return elementwise_mul(a, b); }, 3, 2, 3, 2, seed));
    note("concat_cols", check_binary([](auto& a, auto& b) { return concat_cols(a, b); }, 3, 2, 3, 4, seed));
    note("mse", check_binary([](auto& a, auto& b) { return mse(a, b); }, 3, 2, 3, 2, seed));
    note("scale", check_binary([](auto& a, auto& b) { return scale(a, b); }, 3, 2, 1, 1, seed));
    note("mul_scalar", check_unary([](auto& a) { return mul_scalar(a, -1.7); }, 3, 3, seed));
    note("add_scalar", check_unary([](auto& a) { return add_scalar(a, 0.3); }, 3, 3, seed));
    note("relu", check_unary([](auto& a) { return relu(a); }, 4, 3, seed));
    note("exp", check_unary([](auto& a) { return exp(a); }, 3, 3, seed));
    note("log", check_unary([](auto& a) { return log(exp(a)); }, 3, 3, seed));
    note("log-direct", check_unary([](auto& a) { return log(add_scalar(elementwise_mul(a, a), 0.5)); }, 3, 3, seed));
    note("softplus", check_unary([](auto& a) { return softplus(mul_scalar(a, 3)); }, 3, 3, seed));
    note("pow_int", check_unary([](auto& a) { return pow_int(a, 3); }, 3, 3, seed));
    note("row_softmax", check_unary([](auto& a) { return row_softmax(a); }, 3, 4, seed));
    note("row_log_softmax", check_unary([](auto& a) { return row_log_softmax(a); }, 3, 4, seed));
    note("row_l2_normalize", check_unary([](auto& a) { return row_l2_normalize(a); }, 3, 4, seed));
    note("row_sum", check_unary([](auto& a) { return row_sum(a); }, 3, 4, seed));
    note("row_mean", check_unary([](auto& a) { return row_mean(a); }, 3, 4, seed));
    note("transpose", check_unary([](auto& a) { return transpose(a); }, 3, 4, seed));
    note("gather_rows", check_unary([&](auto& a) { return gather_rows(a, idx); }, 5, 2, seed));
    note("scatter_sum", check_unary([&](auto& a) { return scatter_sum(a, idx, 6); }, 5, 2, seed));
    note("segment_mean", check_unary([&](auto& a) { return segment_mean(a, seg, 3); }, 5, 2, seed));
    note("scale_rows", check_unary([](auto& a) { return scale_rows(a, Vector::LinSpaced(4, -1, 2)); }, 4, 2, seed));
    note("reduce_mean", check_unary([](auto& a) { return reduce_mean(a); }, 3, 4, seed));
    note("reduce_sum", check_unary([](auto& a) { return reduce_sum(a); }, 3, 4, seed));

    Rng rng(seed);
    Tensor x = Tensor::parameter(random_matrix(6, 3, rng));
    Tensor g = Tensor::parameter(random_matrix(1, 3, rng).array() + 1.0);
    Tensor b = Tensor::parameter(random_matrix(1, 3, rng));
    const Matrix w = random_matrix(6, 3, rng);
    const auto bn = grad_check([&] { return readout(batch_norm_rows(x, g, b), w); }, {x, g, b});
    REQUIRE(bn.finite);
    note("batch_norm_rows", bn.max_rel_error);
  }
  for (const auto& [name, err] : worst) {
    INFO(name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("forward values are deterministic") {
  auto run = [] {
    Rng rng(12);
    Tensor x = Tensor::parameter(random_matrix(5, 4, rng));
    Tensor w = Tensor::parameter(random_matrix(4, 3, rng));
    return row_log_softmax(relu(matmul(x, w))).value();
  };
  const Matrix a = run();
  const Matrix b = run();
  CHECK(a == b);
}
