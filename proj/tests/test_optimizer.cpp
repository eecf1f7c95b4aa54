#include <cmath>

#include "doctest.h"
#include "relmap/optimizer.hpp"

using namespace relmap;

namespace {

ParamRef weight_ref(Tensor& value, Tensor& grad, const char* name = "w") {
  ParamRef p;
  p.name = name;
  p.kind = ParamKind::kWeight;
  p.value = &value;
  p.grad = &grad;
  return p;
}

}  // namespace

TEST_CASE("first step follows the bias-corrected closed form") {
  // at t=1, m_hat = g and v_hat = g^2, so the update is lr*g/(|g|+eps)
  AdamConfig cfg;
  Adam adam(cfg);
  Tensor value({3}, {1.0, -0.5, 2.0});
  Tensor grad({3}, {0.3, -0.7, 1.2});
  std::vector<ParamRef> params = {weight_ref(value, grad)};
  adam.step(params);
  const double expected[3] = {
      1.0 - cfg.lr_weights * 0.3 / (0.3 + cfg.eps),
      -0.5 - cfg.lr_weights * (-0.7) / (0.7 + cfg.eps),
      2.0 - cfg.lr_weights * 1.2 / (1.2 + cfg.eps)};
  for (int i = 0; i < 3; ++i)
    CHECK(value[i] == doctest::Approx(expected[i]).epsilon(1e-14));
}

TEST_CASE("second step matches a hand-rolled reference") {
  AdamConfig cfg;
  Adam adam(cfg);
  Tensor value({1}, {0.5});
  Tensor g1({1}, {0.4});
  std::vector<ParamRef> params = {weight_ref(value, g1)};
  adam.step(params);
  g1[0] = -0.2;
  adam.step(params);

  // independent recomputation
  double m = 0, v = 0, x = 0.5;
  int t = 0;
  for (double g : {0.4, -0.2}) {
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ++t;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= cfg.lr_weights * mh / (std::sqrt(vh) + cfg.eps);
  }
  CHECK(value[0] == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("zero gradient skips the entry entirely") {
  Adam adam({});
  Tensor value({4}, {1.0, 2.0, 3.0, 4.0});
  Tensor grad({4}, {0.5, 0.0, -0.5, 0.0});
  std::vector<ParamRef> params = {weight_ref(value, grad)};
  adam.step(params);
  CHECK(value[1] == 2.0);  // untouched bitwise
  CHECK(value[3] == 4.0);
  CHECK(value[0] != 1.0);
  CHECK(value[2] != 3.0);
  // moments of the skipped entries stay zero
  CHECK(adam.slots()[0].m[1] == 0.0);
  CHECK(adam.slots()[0].v[1] == 0.0);
  CHECK(adam.slots()[0].t[1] == 0.0);
  CHECK(adam.slots()[0].t[0] == 1.0);
}

TEST_CASE("per-entry step counts keep bias correction fresh") {
  // An entry masked for many steps then unmasked must behave like a
  // first step, not a heavily decayed one.
  Adam adam({});
  Tensor value({2}, {1.0, 1.0});
  Tensor grad({2}, {0.3, 0.0});
  std::vector<ParamRef> params = {weight_ref(value, grad)};
  for (int i = 0; i < 50; ++i) adam.step(params);
  grad[0] = 0.0;
  grad[1] = 0.3;
  const double before = value[1];
  adam.step(params);
  // same closed form as a genuine first step
  AdamConfig cfg;
  CHECK(value[1] ==
        doctest::Approx(before - cfg.lr_weights * 0.3 / (0.3 + cfg.eps))
            .epsilon(1e-14));
}

TEST_CASE("map entries are clipped into the unit interval") {
  AdamConfig cfg;
  cfg.lr_maps = 10.0;  // force a step past the boundary
  Adam adam(cfg);
  Tensor value({2}, {0.05, 0.95});
  Tensor grad({2}, {1.0, -1.0});
  ParamRef p = weight_ref(value, grad, "map");
  p.kind = ParamKind::kMapRaw;
  std::vector<ParamRef> params = {p};
  adam.step(params);
  CHECK(value[0] == 0.0);
  CHECK(value[1] == 1.0);
}

TEST_CASE("separate learning rates per group") {
  AdamConfig cfg;
  cfg.lr_weights = 0.01;
  cfg.lr_maps = 0.1;
  Adam adam(cfg);
  Tensor w({1}, {0.5}), gw({1}, {1.0});
  Tensor m({1}, {0.5}), gm({1}, {1.0});
  ParamRef pm = weight_ref(m, gm, "map");
  pm.kind = ParamKind::kMapRaw;
  std::vector<ParamRef> params = {weight_ref(w, gw), pm};
  adam.step(params);
  CHECK(0.5 - w[0] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(0.5 - m[0] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("beta updates never decrease and respect the floor") {
  AdamConfig cfg;
  cfg.lr_beta = 5.0;
  Adam adam(cfg);
  double beta = 80.0;
  double grad_pos = 1.0;  // gradient descent would shrink beta
  ParamRef p;
  p.name = "beta";
  p.kind = ParamKind::kBeta;
  p.scalar = &beta;
  p.scalar_grad = &grad_pos;
  std::vector<ParamRef> params = {p};
  adam.step(params);
  CHECK(beta == 80.0);  // clamped: beta only tightens

  double grad_neg = -1.0;
  p.scalar_grad = &grad_neg;
  params[0] = p;
  adam.step(params);
  CHECK(beta > 80.0);
}

TEST_CASE("non-finite gradients abort with the parameter name") {
  Adam adam({});
  Tensor value({2}, {1.0, 1.0});
  Tensor grad({2}, {0.1, std::numeric_limits<double>::quiet_NaN()});
  std::vector<ParamRef> params = {weight_ref(value, grad, "layer0.weights")};
  CHECK_THROWS_WITH_AS(adam.step(params),
                       doctest::Contains("layer0.weights"), StateError);
}

TEST_CASE("changing the parameter list size is an error") {
  Adam adam({});
  Tensor value({1}, {1.0}), grad({1}, {0.1});
  std::vector<ParamRef> params = {weight_ref(value, grad)};
  adam.step(params);
  params.push_back(weight_ref(value, grad));
  CHECK_THROWS_AS(adam.step(params), StateError);
}
