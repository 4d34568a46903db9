#include <cmath>

#include "cdvg/core/ops.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cdvg;
using testing::max_rel_error;
using testing::numeric_gradient;
using testing::random_tensor;

namespace {

// Checks d f / d p for every parameter p via central differences.
void check_gradients(const std::function<Var()>& f, const std::vector<Var>& params,
                     double tol = 2e-2) {
  Var out = f();
  auto grads = grad(out, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto numeric = numeric_gradient(
        [&] {
          NoGradGuard guard;
          return static_cast<double>(f().item());
        },
        params[i].value(), 1e-3);
    INFO("parameter " << i);
    CHECK(max_rel_error(grads[i].value(), numeric) < tol);
  }
}

}  // namespace

TEST_CASE("elementwise and reduction ops backpropagate correctly") {
  Rng rng(1);
  Var a = Var::parameter(random_tensor(rng, {3, 4}));
  Var b = Var::parameter(random_tensor(rng, {3, 4}));
  Var bias = Var::parameter(random_tensor(rng, {4}));
  check_gradients(
      [&] {
        Var x = add_row_bias(mul(sub(a, b), add_scalar(a, 0.5f)), bias);
        return mean(add(leaky_relu(x, 0.1f), scale(square(b), 0.3f)));
      },
      {a, b, bias});
}

TEST_CASE("matmul gradients for every transpose combination") {
  Rng rng(2);
  for (int variant = 0; variant < 4; ++variant) {
    const bool ta = (variant & 1) != 0;
    const bool tb = (variant & 2) != 0;
    Var a = Var::parameter(random_tensor(rng, ta ? Shape{5, 3} : Shape{3, 5}));
    Var b = Var::parameter(random_tensor(rng, tb ? Shape{4, 5} : Shape{5, 4}));
    Var w = Var(random_tensor(rng, {3, 4}));
    check_gradients([&] { return sum(mul(matmul(a, b, ta, tb), w)); }, {a, b});
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  Rng rng(3);
  ConvGeometry geom{2, 3, 7, 6, 4, 2, 1};
  Tensor x = random_tensor(rng, {2, 3, 7, 6});
  Tensor y = random_tensor(rng, {geom.col_rows(), geom.col_cols()});
  Tensor ax = im2col(Var(x), geom).value();
  Tensor aty = col2im(Var(y), geom).value();
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < ax.numel(); ++i) lhs += static_cast<double>(ax[i]) * y[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += static_cast<double>(x[i]) * aty[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("convolution built from im2col and matmul has correct gradients") {
  Rng rng(4);
  ConvGeometry geom{2, 2, 5, 5, 3, 2, 1};
  Var x = Var::parameter(random_tensor(rng, {2, 2, 5, 5}));
  Var weight = Var::parameter(random_tensor(rng, {3, geom.col_rows()}));
  Var bias = Var::parameter(random_tensor(rng, {3}));
  Var probe(random_tensor(rng, {2, 3, geom.out_height(), geom.out_width()}));
  check_gradients(
      [&] {
        Var cols = im2col(x, geom);
        Var out = cn_to_nc(matmul(weight, cols),
                           {2, 3, geom.out_height(), geom.out_width()});
        return sum(mul(add_channel_bias(out, bias), probe));
      },
      {x, weight, bias});
}

TEST_CASE("normalization layers have correct gradients") {
  Rng rng(5);
  Var x = Var::parameter(random_tensor(rng, {2, 3, 4, 4}));
  Var gamma = Var::parameter(random_tensor(rng, {3}, 0.5, 1.5));
  Var beta = Var::parameter(random_tensor(rng, {3}));
  Var probe(random_tensor(rng, {2, 3, 4, 4}));
  check_gradients([&] { return sum(mul(instance_norm(x, gamma, beta), probe)); },
                  {x, gamma, beta});
  check_gradients(
      [&] { return sum(mul(batch_norm(x, gamma, beta, nullptr, nullptr), probe)); },
      {x, gamma, beta});

  Var flat = Var::parameter(random_tensor(rng, {6, 3}));
  Var probe2(random_tensor(rng, {6, 3}));
  check_gradients(
      [&] { return sum(mul(batch_norm(flat, gamma, beta, nullptr, nullptr), probe2)); },
      {flat, gamma, beta});
}

TEST_CASE("channel concat/slice, pooling and unary ops backpropagate") {
  Rng rng(6);
  Var a = Var::parameter(random_tensor(rng, {2, 2, 3, 3}));
  Var b = Var::parameter(random_tensor(rng, {2, 1, 3, 3}));
  Var probe(random_tensor(rng, {2, 2}));
  check_gradients(
      [&] {
        Var cat = concat_channels(tanh(a), b);
        Var mid = slice_channels(cat, 1, 3);
        return sum(mul(global_avg_pool(mid), probe));
      },
      {a, b});
  Var p = Var::parameter(random_tensor(rng, {4, 3}, 0.5, 2.0));
  check_gradients([&] { return sum(add(sqrt(p), abs(add_scalar(p, -1.2f)))); }, {p});
}

TEST_CASE("cross entropy op gradient") {
  Rng rng(7);
  Var logits = Var::parameter(random_tensor(rng, {4, 5}, -2.0, 2.0));
  const std::vector<int> labels{0, 3, 4, 1};
  check_gradients([&] { return cross_entropy(logits, labels); }, {logits}, 1e-3);
}

TEST_CASE("gradients of gradients: penalty on input gradient of a leaky conv net") {
  // penalty(W) = || d/dx sum(leaky(conv(x; W)) * probe) ||^2, the shape of the
  // gradient penalty. Its W-gradient needs a second backward pass.
  Rng rng(8);
  ConvGeometry geom{2, 2, 5, 5, 3, 2, 1};
  Tensor x_value = random_tensor(rng, {2, 2, 5, 5});
  Var weight = Var::parameter(random_tensor(rng, {3, geom.col_rows()}));
  Var w2 = Var::parameter(random_tensor(rng, {1, 3 * geom.out_height() * geom.out_width()}));

  auto penalty = [&](bool create_graph) {
    Var x = Var::parameter(x_value);
    Var h = leaky_relu(cn_to_nc(matmul(weight, im2col(x, geom)),
                                {2, 3, geom.out_height(), geom.out_width()}),
                       0.2f);
    Var score = matmul(reshape(h, {2, 3 * geom.out_height() * geom.out_width()}), w2, false, true);
    Var gx = grad(sum(score), {x}, create_graph)[0];
    return sum(square(gx));
  };

  Var p = penalty(true);
  auto grads = grad(p, {weight, w2});
  for (std::size_t i = 0; i < 2; ++i) {
    const Var& param = i == 0 ? weight : w2;
    auto numeric = numeric_gradient(
        [&] { return static_cast<double>(penalty(false).item()); }, param.value(), 1e-3);
    INFO("parameter " << i);
    CHECK(max_rel_error(grads[i].value(), numeric) < 2e-2);
  }
}

TEST_CASE("first-order ops refuse create_graph") {
  Var x = Var::parameter(Tensor(Shape{3}, 0.3f));
  Var y = sum(tanh(x));
  CHECK_THROWS_AS(grad(y, {x}, true), std::logic_error);
}

TEST_CASE("no-grad guard and detach cut the graph") {
  Var x = Var::parameter(Tensor(Shape{2}, 1.0f));
  {
    NoGradGuard guard;
    CHECK_FALSE(scale(x, 2.0f).requires_grad());
  }
  CHECK(scale(x, 2.0f).requires_grad());
  CHECK_FALSE(x.detach().requires_grad());
}

TEST_CASE("backward accumulates into leaves across calls") {
  Var x = Var::parameter(Tensor(Shape{2}, 1.0f));
  backward(sum(scale(x, 3.0f)));
  backward(sum(scale(x, 3.0f)));
  CHECK(x.grad()[0] == doctest::Approx(6.0f));
  x.zero_grad();
  CHECK(x.grad()[1] == 0.0f);
}

TEST_CASE("a value reached through two paths sums its gradients") {
  Var x = Var::parameter(Tensor(Shape{1}, 2.0f));
  Var y = add(mul(x, x), x);  // dy/dx = 2x + 1
  CHECK(grad(y, {x})[0].item() == doctest::Approx(5.0f));
}
