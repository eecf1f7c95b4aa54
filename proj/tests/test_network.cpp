#include <cmath>

#include "doctest.h"
#include "relmap/network.hpp"
#include "relmap/optimizer.hpp"

using namespace relmap;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

void set_all_raw(MaskedNetwork& net, double value) {
  for (MaskedLinear& lin : net.linears()) {
    for (double& v : lin.live->raw.data()) v = value;
  }
  for (MaskedBatchNorm& bn : net.bns()) {
    for (double& v : bn.live_scale->raw.data()) v = value;
    for (double& v : bn.live_shift->raw.data()) v = value;
  }
}

double train_loss(MaskedNetwork& net, const Tensor& x,
                  const std::vector<int>& y) {
  Tensor logits = net.forward(x, net.completed_tasks(), Mode::kTrain);
  return softmax_xent(logits, y).loss;
}

// Unmasked reference MLP with the same architecture: linear (no bias),
// batch norm (biased variance), ReLU, linear head. Written from the
// textbook formulas, independent of the library's layer code.
struct PlainMlp {
  std::vector<Tensor> w;              // out x in per layer
  std::vector<Tensor> scale, shift;   // per hidden layer
  std::vector<Tensor> gw, gscale, gshift;
  double eps = 1e-5;

  std::vector<Tensor> in, xhat, inv_std, post;  // caches

  double step(const Tensor& x, const std::vector<int>& y) {
    const std::size_t L = w.size();
    const std::size_t b = x.rows();
    in.assign(L, Tensor());
    xhat.assign(L - 1, Tensor());
    inv_std.assign(L - 1, Tensor());
    post.assign(L - 1, Tensor());
    Tensor h = x;
    for (std::size_t l = 0; l < L; ++l) {
      in[l] = h;
      const std::size_t n = w[l].rows();
      Tensor pre = Tensor::matrix(b, n);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < w[l].cols(); ++k)
            s += h.at(i, k) * w[l].at(j, k);
          pre.at(i, j) = s;
        }
      if (l + 1 == L) {
        h = std::move(pre);
        break;
      }
      Tensor xh = Tensor::matrix(b, n), is = Tensor::vector(n);
      Tensor out = Tensor::matrix(b, n);
      for (std::size_t j = 0; j < n; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < b; ++i) m += pre.at(i, j);
        m /= static_cast<double>(b);
        double v = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
          const double d = pre.at(i, j) - m;
          v += d * d;
        }
        v /= static_cast<double>(b);
        is[j] = 1.0 / std::sqrt(v + eps);
        for (std::size_t i = 0; i < b; ++i) {
          xh.at(i, j) = (pre.at(i, j) - m) * is[j];
          out.at(i, j) = scale[l][j] * xh.at(i, j) + shift[l][j];
        }
      }
      xhat[l] = std::move(xh);
      inv_std[l] = std::move(is);
      post[l] = out;
      for (double& v : out.data()) v = std::max(0.0, v);
      h = std::move(out);
    }
    LossGrad lg = softmax_xent(h, y);

    // backward
    gw.assign(L, Tensor());
    gscale.assign(L - 1, Tensor());
    gshift.assign(L - 1, Tensor());
    Tensor d = lg.grad;
    for (std::size_t l = L; l-- > 0;) {
      if (l + 1 < L) {
        for (std::size_t i = 0; i < d.size(); ++i)
          if (post[l][i] <= 0.0) d[i] = 0.0;
        const std::size_t n = w[l].rows();
        gscale[l] = Tensor::vector(n);
        gshift[l] = Tensor::vector(n);
        Tensor dpre = Tensor::matrix(b, n);
        for (std::size_t j = 0; j < n; ++j) {
          double sd_ = 0.0, sdx = 0.0;
          for (std::size_t i = 0; i < b; ++i) {
            sd_ += d.at(i, j);
            sdx += d.at(i, j) * xhat[l].at(i, j);
          }
          gshift[l][j] = sd_;
          gscale[l][j] = sdx;
          for (std::size_t i = 0; i < b; ++i) {
            dpre.at(i, j) = inv_std[l][j] / static_cast<double>(b) *
                            (static_cast<double>(b) * d.at(i, j) * scale[l][j] -
                             sd_ * scale[l][j] -
                             xhat[l].at(i, j) * sdx * scale[l][j]);
          }
        }
        d = std::move(dpre);
      }
      gw[l] = Tensor::matrix(w[l].rows(), w[l].cols());
      for (std::size_t j = 0; j < w[l].rows(); ++j)
        for (std::size_t k = 0; k < w[l].cols(); ++k) {
          double s = 0.0;
          for (std::size_t i = 0; i < b; ++i)
            s += d.at(i, j) * in[l].at(i, k);
          gw[l].at(j, k) = s;
        }
      if (l > 0) {
        Tensor dn = Tensor::matrix(b, w[l].cols());
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t k = 0; k < w[l].cols(); ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < w[l].rows(); ++j)
              s += d.at(i, j) * w[l].at(j, k);
            dn.at(i, k) = s;
          }
        d = std::move(dn);
      }
    }
    return lg.loss;
  }
};

}  // namespace

TEST_CASE("eval forward under an all-zero mask yields zero logits") {
  Rng rng(1);
  MaskedNetwork net = MaskedNetwork::mlp({6, 5, 4}, rng);
  net.start_task(rng);
  set_all_raw(net, 0.2);  // binarizes to 0 everywhere
  Tensor x = random_matrix(3, 6, rng);
  Tensor logits = net.forward(x, 0, Mode::kEval);
  for (double v : logits.data()) CHECK(v == 0.0);
}

TEST_CASE("eval forward is deterministic and does not touch state") {
  Rng rng(2);
  MaskedNetwork net = MaskedNetwork::mlp({6, 5, 4}, rng);
  net.start_task(rng);
  Tensor x = random_matrix(4, 6, rng);
  Tensor a = net.forward(x, 0, Mode::kEval);
  Tensor before = net.bns()[0].run_mean[0];
  Tensor b = net.forward(x, 0, Mode::kEval);
  CHECK(a == b);
  CHECK(net.bns()[0].run_mean[0] == before);
}

TEST_CASE("train forward requires the in-progress task") {
  Rng rng(3);
  MaskedNetwork net = MaskedNetwork::mlp({6, 5, 4}, rng);
  Tensor x = random_matrix(2, 6, rng);
  CHECK_THROWS_AS(net.forward(x, 0, Mode::kTrain), StateError);
  net.start_task(rng);
  CHECK_THROWS_AS(net.forward(x, 1, Mode::kTrain), StateError);
  CHECK_THROWS_AS(net.forward(x, 3, Mode::kEval), InputError);
  CHECK_THROWS_AS(net.backward(x), StateError);  // no train forward yet
}

TEST_CASE("weight and map gradients match finite differences") {
  Rng rng(4);
  MaskedNetwork net = MaskedNetwork::mlp({5, 4, 4, 3}, rng);
  net.start_task(rng);
  Tensor x = random_matrix(6, 5, rng);
  std::vector<int> y = {0, 2, 1, 2, 0, 1};

  Tensor logits = net.forward(x, 0, Mode::kTrain);
  net.backward(softmax_xent(logits, y).grad);

  const double h = 1e-5;
  auto fd_check = [&](double* p, double analytic) {
    const double saved = *p;
    *p = saved + h;
    const double lp = train_loss(net, x, y);
    *p = saved - h;
    const double lm = train_loss(net, x, y);
    *p = saved;
    const double fd = (lp - lm) / (2 * h);
    if (std::fabs(fd) < 1e-10 && std::fabs(analytic) < 1e-10) {
      CHECK(std::fabs(fd - analytic) < 1e-8);
    } else {
      CHECK(analytic == doctest::Approx(fd).epsilon(1e-4));
    }
  };

  for (std::size_t l = 0; l < net.linears().size(); ++l) {
    MaskedLinear& lin = net.linears()[l];
    Rng pick(100 + l);
    for (int rep = 0; rep < 10; ++rep) {
      const std::size_t k = pick.below(lin.weights.size());
      fd_check(&lin.weights[k], lin.grad_weights[k]);
      fd_check(&lin.live->raw[k], lin.grad_raw[k]);
    }
  }
  for (std::size_t l = 0; l < net.bns().size(); ++l) {
    MaskedBatchNorm& bn = net.bns()[l];
    Rng pick(200 + l);
    for (int rep = 0; rep < 5; ++rep) {
      const std::size_t k = pick.below(bn.scale.size());
      fd_check(&bn.scale[k], bn.grad_scale[k]);
      fd_check(&bn.shift[k], bn.grad_shift[k]);
      fd_check(&bn.live_scale->raw[k], bn.grad_raw_scale[k]);
      fd_check(&bn.live_shift->raw[k], bn.grad_raw_shift[k]);
    }
  }
}

TEST_CASE("beta gradient matches finite differences") {
  Rng rng(5);
  MaskedNetwork net = MaskedNetwork::mlp({5, 4, 3}, rng);
  // moderate beta keeps the gates soft enough for a measurable effect
  net.start_task(rng, {.mean = 0.5, .sd = 0.15, .beta = 80.0});
  Tensor x = random_matrix(4, 5, rng);
  std::vector<int> y = {0, 1, 2, 1};
  Tensor logits = net.forward(x, 0, Mode::kTrain);
  net.backward(softmax_xent(logits, y).grad);

  const double h = 1e-4;
  for (std::size_t l = 0; l < net.linears().size(); ++l) {
    MaskedLinear& lin = net.linears()[l];
    const double saved = lin.live->beta;
    lin.live->beta = saved + h;
    const double lp = train_loss(net, x, y);
    lin.live->beta = saved - h;
    const double lm = train_loss(net, x, y);
    lin.live->beta = saved;
    const double fd = (lp - lm) / (2 * h);
    CHECK(lin.grad_beta == doctest::Approx(fd).epsilon(1e-3));
  }
}

TEST_CASE("frozen entries receive exactly zero weight gradient") {
  Rng rng(6);
  MaskedNetwork net = MaskedNetwork::mlp({5, 4, 3}, rng);
  net.start_task(rng);
  // freeze everything by hand
  for (MaskedLinear& lin : net.linears()) {
    lin.frozen.mask = Tensor(lin.weights.shape(), 1.0);
  }
  for (MaskedBatchNorm& bn : net.bns()) {
    bn.frozen_scale.mask = Tensor(bn.scale.shape(), 1.0);
    bn.frozen_shift.mask = Tensor(bn.shift.shape(), 1.0);
  }
  Tensor x = random_matrix(4, 5, rng);
  std::vector<int> y = {0, 1, 2, 1};
  Tensor logits = net.forward(x, 0, Mode::kTrain);
  net.backward(softmax_xent(logits, y).grad);
  for (MaskedLinear& lin : net.linears()) {
    for (double g : lin.grad_weights.data()) CHECK(g == 0.0);
  }
  for (MaskedBatchNorm& bn : net.bns()) {
    for (double g : bn.grad_scale.data()) CHECK(g == 0.0);
    for (double g : bn.grad_shift.data()) CHECK(g == 0.0);
  }
}

TEST_CASE("pruned raw entries receive exactly zero map gradient") {
  Rng rng(7);
  MaskedNetwork net = MaskedNetwork::mlp({5, 4, 3}, rng);
  net.start_task(rng);
  net.prune_live(0.5);  // prunes a large fraction
  Tensor x = random_matrix(4, 5, rng);
  std::vector<int> y = {0, 1, 2, 1};
  Tensor logits = net.forward(x, 0, Mode::kTrain);
  net.backward(softmax_xent(logits, y).grad);
  for (MaskedLinear& lin : net.linears()) {
    for (std::size_t k = 0; k < lin.weights.size(); ++k) {
      if (lin.live->raw[k] == 0.0) CHECK(lin.grad_raw[k] == 0.0);
    }
  }
}

TEST_CASE("completed tasks are bit-frozen under later training") {
  Rng rng(8);
  MaskedNetwork net = MaskedNetwork::mlp({6, 5, 5, 3}, rng);
  Tensor x0 = random_matrix(8, 6, rng);
  std::vector<int> y0 = {0, 1, 2, 0, 1, 2, 0, 1};

  net.start_task(rng);
  Adam adam({});
  auto params = net.live_params();
  for (int i = 0; i < 20; ++i) {
    Tensor logits = net.forward(x0, 0, Mode::kTrain);
    net.backward(softmax_xent(logits, y0).grad);
    adam.step(params);
  }
  net.prune_live(0.05);
  net.finish_task();

  Tensor probe = random_matrix(5, 6, rng);
  const Tensor before = net.forward(probe, 0, Mode::kEval);
  const Tensor rm0 = net.bns()[0].run_mean[0];
  const Tensor rv0 = net.bns()[0].run_var[0];

  // train a second task hard on different data
  net.start_task(rng);
  Adam adam2({});
  auto params2 = net.live_params();
  Tensor x1 = random_matrix(8, 6, rng);
  std::vector<int> y1 = {2, 2, 1, 1, 0, 0, 2, 1};
  for (int i = 0; i < 50; ++i) {
    Tensor logits = net.forward(x1, 1, Mode::kTrain);
    net.backward(softmax_xent(logits, y1).grad);
    adam2.step(params2);
  }
  net.prune_live(0.05);
  net.finish_task();

  const Tensor after = net.forward(probe, 0, Mode::kEval);
  CHECK(before == after);  // strict bitwise equality
  CHECK(net.bns()[0].run_mean[0] == rm0);
  CHECK(net.bns()[0].run_var[0] == rv0);
}

TEST_CASE("training dynamics with unit gates match a plain MLP") {
  Rng rng(9);
  MaskedNetwork net = MaskedNetwork::mlp({8, 6, 6, 4}, rng);
  net.start_task(rng);
  set_all_raw(net, 1.0);  // gates saturate to exactly 1.0 at beta 80

  PlainMlp ref;
  for (const MaskedLinear& lin : net.linears()) ref.w.push_back(lin.weights);
  for (const MaskedBatchNorm& bn : net.bns()) {
    ref.scale.push_back(bn.scale);
    ref.shift.push_back(bn.shift);
  }
  ref.gw.resize(ref.w.size());
  ref.gscale.resize(ref.scale.size());
  ref.gshift.resize(ref.shift.size());

  AdamConfig cfg;
  cfg.lr_maps = 0.0;  // maps must not move
  Adam adam(cfg), adam_ref(cfg);
  auto params = net.live_params();
  std::vector<ParamRef> ref_params;
  for (std::size_t l = 0; l < ref.w.size(); ++l) {
    ref_params.push_back({"w", ParamKind::kWeight, &ref.w[l], &ref.gw[l],
                          nullptr, nullptr, nullptr});
  }
  for (std::size_t l = 0; l < ref.scale.size(); ++l) {
    ref_params.push_back({"s", ParamKind::kWeight, &ref.scale[l],
                          &ref.gscale[l], nullptr, nullptr, nullptr});
    ref_params.push_back({"b", ParamKind::kWeight, &ref.shift[l],
                          &ref.gshift[l], nullptr, nullptr, nullptr});
  }

  Rng data_rng(77);
  for (int step = 0; step < 10; ++step) {
    Tensor x = random_matrix(6, 8, data_rng);
    std::vector<int> y;
    for (int i = 0; i < 6; ++i) y.push_back(static_cast<int>(data_rng.below(4)));

    Tensor logits = net.forward(x, 0, Mode::kTrain);
    LossGrad lg = softmax_xent(logits, y);
    net.backward(lg.grad);
    adam.step(params);

    const double ref_loss = ref.step(x, y);
    adam_ref.step(ref_params);

    CHECK(lg.loss == doctest::Approx(ref_loss).epsilon(1e-12));
  }
}

TEST_CASE("task_logit_max prefers the confident mask and breaks ties low") {
  Rng rng(10);
  MaskedNetwork net = MaskedNetwork::mlp({6, 5, 3}, rng);

  // task 0: everything on; task 1: everything off (zero logits)
  net.start_task(rng);
  set_all_raw(net, 1.0);
  net.finish_task();
  net.start_task(rng);
  set_all_raw(net, 0.1);
  net.finish_task();

  Tensor x = random_matrix(4, 6, rng);
  auto inf = net.task_logit_max(x);
  for (std::size_t i = 0; i < 4; ++i) {
    // uniform softmax under the zero mask gives confidence 1/3; the
    // real mask essentially always beats that on random data
    if (inf.confidence[i] > 1.0 / 3.0 + 1e-9) CHECK(inf.task[i] == 0);
  }

  // two identical zero masks: exact tie, lowest id wins
  Rng rng2(11);
  MaskedNetwork tie = MaskedNetwork::mlp({6, 5, 3}, rng2);
  for (int t = 0; t < 2; ++t) {
    tie.start_task(rng2);
    set_all_raw(tie, 0.1);
    tie.finish_task();
  }
  auto tied = tie.task_logit_max(x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(tied.task[i] == 0);
}

TEST_CASE("accounting: weight counts, frozen counts, sparsity") {
  Rng rng(12);
  MaskedNetwork net = MaskedNetwork::mlp({6, 5, 3}, rng);
  CHECK(net.weight_count() == 6 * 5 + 5 * 3 + 5 + 5);
  CHECK_THROWS_AS(net.model_sparsity(), InputError);

  net.start_task(rng);
  set_all_raw(net, 1.0);
  net.finish_task();
  CHECK(net.frozen_count() == net.weight_count());
  CHECK(net.model_sparsity() == 0.0);
  CHECK(net.footprint().mask_bytes_per_task ==
        (net.weight_count() + 7) / 8);

  net.start_task(rng);
  set_all_raw(net, 0.1);
  net.finish_task();
  CHECK(net.model_sparsity() == 0.0);  // task 0 uses everything
}

TEST_CASE("standard architecture matches the published footprint") {
  Rng rng(13);
  MaskedNetwork net = MaskedNetwork::standard_mlp(rng);
  CHECK(net.weight_count() == 100000);
  net.start_task(rng);
  net.finish_task();
  CHECK(net.footprint().mask_bytes_per_task == 12500);
}
