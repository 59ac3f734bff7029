#include <doctest.h>

#include "gradcheck.hpp"
#include "refcomp/params.hpp"
#include "support.hpp"

using namespace refcomp;
using namespace refcomp::testing;
using nn::Mat;
using nn::Var;

namespace {

void check_op(std::vector<Mat> inputs, Eigen::Index out_rows, Eigen::Index out_cols,
              const std::function<Var(const std::vector<Var>&)>& build, std::uint64_t seed = 1) {
  Rng rng(seed);
  const Mat probe = random_mat(out_rows, out_cols, rng);
  CHECK(max_gradient_error(inputs, probe, build) < 1e-6);
}

}  // namespace

TEST_CASE("elementary op gradients") {
  Rng rng(1);
  const Mat a = random_mat(3, 4, rng), b = random_mat(3, 4, rng), c = random_mat(4, 2, rng);
  const Mat row = random_mat(1, 4, rng);
  check_op({a, c}, 3, 2, [](auto& v) { return nn::matmul(v[0], v[1]); });
  check_op({a, b}, 3, 3, [](auto& v) { return nn::matmul_nt(v[0], v[1]); });
  check_op({a, b}, 3, 4, [](auto& v) { return nn::add(v[0], v[1]); });
  check_op({a, b}, 3, 4, [](auto& v) { return nn::sub(v[0], v[1]); });
  check_op({a, b}, 3, 4, [](auto& v) { return nn::mul(v[0], v[1]); });
  check_op({a}, 3, 4, [](auto& v) { return nn::scale(v[0], -1.7); });
  check_op({a, row}, 3, 4, [](auto& v) { return nn::add_row(v[0], v[1]); });
  check_op({a}, 3, 4, [](auto& v) { return nn::silu(v[0]); });
  check_op({a}, 3, 4, [](auto& v) { return nn::softmax_rows(v[0]); });
  check_op({a, row, random_mat(1, 4, rng)}, 3, 4, [](auto& v) { return nn::layer_norm(v[0], v[1], v[2]); });
  check_op({a, b}, 6, 4, [](auto& v) { return nn::concat_rows(std::vector<Var>{v[0], v[1]}); });
  check_op({a, b}, 3, 8, [](auto& v) { return nn::concat_cols(std::vector<Var>{v[0], v[1]}); });
  check_op({a}, 3, 2, [](auto& v) { return nn::slice_cols(v[0], 1, 2); });
  check_op({a}, 4, 4, [](auto& v) {
    const std::vector<int> rows{2, 0, 2, 1};
    return nn::gather_rows(v[0], rows);
  });
  check_op({a}, 2, 6, [](auto& v) {
    const std::vector<int> idx{11, 0, 3, 3, 7, 5, 1, 2, 4, 6, 8, 9};
    return nn::rearrange(v[0], 2, 6, idx);
  });
  check_op({a, b}, 1, 1, [](auto& v) { return nn::mse(v[0], v[1]); });
  check_op({a}, 1, 1, [](auto& v) { return nn::sum(v[0]); });
}

TEST_CASE("forward values") {
  nn::Graph g(false);
  Mat a(1, 3);
  a << 1.0, 2.0, 3.0;
  const Mat p = nn::softmax_rows(g.constant(a)).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p(0, 0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(nn::silu(g.constant(a)).value()(0, 1) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
  Mat b = a.array() + 0.5;
  CHECK(nn::mse(g.constant(a), g.constant(b)).value()(0, 0) == doctest::Approx(0.25));
}

TEST_CASE("gradient accumulates across repeated parameter use") {
  nn::Graph g(true);
  Mat w(1, 1);
  w << 3.0;
  Var p1 = g.param(0, w), p2 = g.param(0, w);
  CHECK(p1.id == p2.id);
  g.backward(nn::sum(nn::mul(p1, p2)));
  const auto grads = g.param_grads();
  REQUIRE(grads.size() == 1);
  CHECK((*grads[0].second)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("frozen parameters get no gradient") {
  nn::Graph g(true);
  Mat w = Mat::Ones(2, 2);
  Var p = g.param(4, w, false);
  g.backward(nn::sum(nn::mul(p, g.leaf(w))));
  CHECK(g.param_grads().empty());
}

TEST_CASE("adam takes a bounded first step and skips frozen parameters") {
  nn::ParameterStore store;
  Rng rng(2);
  const int a = store.add("a", random_mat(2, 2, rng));
  const int b = store.add("b", random_mat(2, 2, rng));
  store.set_trainable(b, false);
  const Mat a0 = store.value(a), b0 = store.value(b);
  nn::Adam opt(store, nn::AdamConfig{0.01});
  std::vector<Mat> grads{Mat::Constant(2, 2, 5.0), Mat::Constant(2, 2, 5.0)};
  opt.step(store, grads);
  // The bias-corrected first step moves each entry by lr in the gradient sign.
  CHECK(((a0 - store.value(a)).array() - 0.01).abs().maxCoeff() < 1e-8);
  CHECK(store.value(b) == b0);

  nn::ParameterStore zero_lr = store;
  nn::Adam still(zero_lr, nn::AdamConfig{0.0});
  const Mat before = zero_lr.value(a);
  still.step(zero_lr, grads);
  CHECK(zero_lr.value(a) == before);
}

TEST_CASE("parameter store names are unique") {
  nn::ParameterStore store;
  store.add("w", Mat::Zero(1, 1));
  CHECK_THROWS(store.add("w", Mat::Zero(1, 1)));
  CHECK(store.find("w") == 0);
  CHECK(store.scalar_count() == 1);
}
