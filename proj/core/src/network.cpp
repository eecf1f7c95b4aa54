#include "relmap/network.hpp"

#include <cmath>
#include <sstream>

namespace relmap {

namespace {

Tensor elementwise_gate(const Tensor& values, const Tensor& g) {
  Tensor out = values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= g[i];
  return out;
}

}  // namespace

MaskedNetwork MaskedNetwork::mlp(const std::vector<std::size_t>& dims,
                                 Rng& rng) {
  if (dims.size() < 2) {
    throw ConfigError("mlp: need at least input and output dims");
  }
  MaskedNetwork net;
  net.dims_ = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    MaskedLinear lin;
    lin.weights = Tensor::matrix(dims[l + 1], dims[l]);
    const double sd = std::sqrt(2.0 / static_cast<double>(dims[l]));
    for (std::size_t i = 0; i < lin.weights.size(); ++i) {
      lin.weights[i] = rng.normal(0.0, sd);
    }
    net.linears_.push_back(std::move(lin));
    if (l + 2 < dims.size()) {
      MaskedBatchNorm bn;
      bn.scale = Tensor::vector(dims[l + 1], 1.0);
      bn.shift = Tensor::vector(dims[l + 1], 0.0);
      net.bns_.push_back(std::move(bn));
    }
  }
  return net;
}

void MaskedNetwork::start_task(Rng& rng, const MapInit& init) {
  if (has_live()) {
    throw StateError("start_task: a task is already in progress");
  }
  for (MaskedLinear& lin : linears_) {
    lin.live = init_map(lin.weights.shape(), rng, init);
  }
  for (MaskedBatchNorm& bn : bns_) {
    bn.live_scale = init_map(bn.scale.shape(), rng, init);
    bn.live_shift = init_map(bn.shift.shape(), rng, init);
    bn.run_mean.push_back(Tensor(bn.scale.shape(), 0.0));
    bn.run_var.push_back(Tensor(bn.scale.shape(), 1.0));
  }
}

void MaskedNetwork::prune_live(double mu) {
  if (!has_live()) throw StateError("prune_live: no task in progress");
  for (MaskedLinear& lin : linears_) prune(*lin.live, mu);
  for (MaskedBatchNorm& bn : bns_) {
    prune(*bn.live_scale, mu);
    prune(*bn.live_shift, mu);
  }
}

void MaskedNetwork::finish_task() {
  if (!has_live()) throw StateError("finish_task: no task in progress");
  for (MaskedLinear& lin : linears_) {
    Tensor bin = binarize(*lin.live);
    update_frozen(lin.frozen, bin);
    lin.final_masks.push_back(std::move(bin));
    lin.live.reset();
  }
  for (MaskedBatchNorm& bn : bns_) {
    Tensor bs = binarize(*bn.live_scale);
    Tensor bb = binarize(*bn.live_shift);
    update_frozen(bn.frozen_scale, bs);
    update_frozen(bn.frozen_shift, bb);
    bn.scale_masks.push_back(std::move(bs));
    bn.shift_masks.push_back(std::move(bb));
    bn.live_scale.reset();
    bn.live_shift.reset();
  }
  ++completed_;
}

void MaskedNetwork::check_task(std::size_t task, Mode mode) const {
  if (mode == Mode::kTrain) {
    if (!has_live() || task != completed_) {
      std::ostringstream os;
      os << "forward(train): task " << task << " is not the in-progress task";
      throw StateError(os.str());
    }
  } else if (task >= task_count()) {
    std::ostringstream os;
    os << "unknown task id " << task << " (have " << task_count() << ")";
    throw InputError(os.str());
  }
}

Tensor MaskedNetwork::layer_mask(const MaskedLinear& lin, std::size_t task,
                                 Mode mode) const {
  if (mode == Mode::kTrain) return gate(*lin.live);
  if (task < completed_) return lin.final_masks[task];
  return binarize(*lin.live);
}

Tensor MaskedNetwork::forward(const Tensor& x, std::size_t task, Mode mode) {
  check_task(task, mode);
  const bool train = mode == Mode::kTrain;
  const std::size_t batch = x.rows();
  if (x.cols() != dims_.front()) {
    throw DimensionError("forward: input " + x.shape_str() + " vs expected " +
                         std::to_string(dims_.front()) + " features");
  }
  if (train) {
    act_cache_.assign(linears_.size(), Tensor());
    preact_cache_.assign(bns_.size(), Tensor());
  }
  Tensor h = x;
  for (std::size_t l = 0; l < linears_.size(); ++l) {
    MaskedLinear& lin = linears_[l];
    Tensor g = layer_mask(lin, task, mode);
    Tensor wg = elementwise_gate(lin.weights, g);
    if (train) {
      lin.in_cache = h;
      lin.gate_cache = std::move(g);
      act_cache_[l] = lin.in_cache;
    }
    Tensor pre = matmul_nt(h, wg);
    if (l + 1 == linears_.size()) {
      h = std::move(pre);
      break;
    }
    MaskedBatchNorm& bn = bns_[l];
    const std::size_t n = bn.scale.size();
    Tensor gs(bn.scale.shape()), gb(bn.shift.shape());
    if (train) {
      Tensor g_scale = gate(*bn.live_scale);
      Tensor g_shift = gate(*bn.live_shift);
      for (std::size_t j = 0; j < n; ++j) {
        gs[j] = bn.scale[j] * g_scale[j];
        gb[j] = bn.shift[j] * g_shift[j];
      }
      // batch statistics, biased variance
      Tensor mean = Tensor::vector(n), var = Tensor::vector(n);
      for (std::size_t j = 0; j < n; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < batch; ++i) m += pre.at(i, j);
        m /= static_cast<double>(batch);
        double v = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
          const double d = pre.at(i, j) - m;
          v += d * d;
        }
        v /= static_cast<double>(batch);
        mean[j] = m;
        var[j] = v;
      }
      Tensor& rm = bn.run_mean[task];
      Tensor& rv = bn.run_var[task];
      for (std::size_t j = 0; j < n; ++j) {
        rm[j] = (1.0 - bn.momentum) * rm[j] + bn.momentum * mean[j];
        rv[j] = (1.0 - bn.momentum) * rv[j] + bn.momentum * var[j];
      }
      Tensor inv_std = Tensor::vector(n);
      for (std::size_t j = 0; j < n; ++j) {
        inv_std[j] = 1.0 / std::sqrt(var[j] + bn.eps);
      }
      Tensor xhat = Tensor::matrix(batch, n);
      Tensor y = Tensor::matrix(batch, n);
      for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double xh = (pre.at(i, j) - mean[j]) * inv_std[j];
          xhat.at(i, j) = xh;
          y.at(i, j) = gs[j] * xh + gb[j];
        }
      }
      bn.xhat_cache = std::move(xhat);
      bn.inv_std_cache = std::move(inv_std);
      bn.gated_scale_cache = gs;
      preact_cache_[l] = y;
      // ReLU
      Tensor a = std::move(y);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::max(0.0, a[i]);
      h = std::move(a);
    } else {
      const Tensor& ms = task < completed_ ? bn.scale_masks[task]
                                           : binarize(*bn.live_scale);
      const Tensor& mb = task < completed_ ? bn.shift_masks[task]
                                           : binarize(*bn.live_shift);
      const Tensor& rm = bn.run_mean[task];
      const Tensor& rv = bn.run_var[task];
      Tensor y = Tensor::matrix(batch, n);
      for (std::size_t j = 0; j < n; ++j) {
        const double sj = bn.scale[j] * ms[j];
        const double bj = bn.shift[j] * mb[j];
        const double is = 1.0 / std::sqrt(rv[j] + bn.eps);
        for (std::size_t i = 0; i < batch; ++i) {
          y.at(i, j) = sj * (pre.at(i, j) - rm[j]) * is + bj;
        }
      }
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i]);
      h = std::move(y);
    }
  }
  have_forward_ = train;
  return h;
}

void MaskedNetwork::backward(const Tensor& logit_grad) {
  if (!have_forward_) {
    throw StateError("backward: no preceding train-mode forward");
  }
  Tensor d = logit_grad;
  const std::size_t batch = d.rows();
  for (std::size_t li = linears_.size(); li-- > 0;) {
    MaskedLinear& lin = linears_[li];
    if (li + 1 < linears_.size()) {
      // ReLU backward
      const Tensor& y = preact_cache_[li];
      check_same_shape(d, y, "backward/relu");
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (y[i] <= 0.0) d[i] = 0.0;
      }
      // BN backward (batch statistics)
      MaskedBatchNorm& bn = bns_[li];
      const std::size_t n = bn.scale.size();
      const Tensor& xhat = bn.xhat_cache;
      Tensor dgs = Tensor::vector(n), dgb = Tensor::vector(n);
      Tensor dpre = Tensor::matrix(batch, n);
      for (std::size_t j = 0; j < n; ++j) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
          sum_d += d.at(i, j);
          sum_dx += d.at(i, j) * xhat.at(i, j);
        }
        dgb[j] = sum_d;
        dgs[j] = sum_dx;
        const double gsj = bn.gated_scale_cache[j];
        const double sum_dxhat = sum_d * gsj;
        const double sum_dxhat_xhat = sum_dx * gsj;
        const double scale = bn.inv_std_cache[j] / static_cast<double>(batch);
        for (std::size_t i = 0; i < batch; ++i) {
          const double dxhat = d.at(i, j) * gsj;
          dpre.at(i, j) =
              scale * (static_cast<double>(batch) * dxhat - sum_dxhat -
                       xhat.at(i, j) * sum_dxhat_xhat);
        }
      }
      auto vector_param_grads = [](const Tensor& upstream, const Tensor& value,
                                   const RelevanceMap& map,
                                   const FrozenIndicator& frozen, Tensor& g_val,
                                   Tensor& g_raw, double& g_beta) {
        const std::size_t n = value.size();
        g_val = Tensor(value.shape());
        g_raw = Tensor(value.shape());
        g_beta = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double gk = pseudo_round(map.raw[k], map.beta);
          double gv = upstream[k] * gk;
          if (!frozen.mask.empty() && frozen.mask[k] != 0.0) gv = 0.0;
          g_val[k] = gv;
          double gr = upstream[k] * value[k] * map.beta * gk * (1.0 - gk);
          if (map.pruned && map.raw[k] == 0.0) gr = 0.0;
          g_raw[k] = gr;
          g_beta += upstream[k] * value[k] * (map.raw[k] - 0.5) * gk * (1.0 - gk);
        }
      };
      vector_param_grads(dgs, bn.scale, *bn.live_scale, bn.frozen_scale,
                         bn.grad_scale, bn.grad_raw_scale, bn.grad_beta_scale);
      vector_param_grads(dgb, bn.shift, *bn.live_shift, bn.frozen_shift,
                         bn.grad_shift, bn.grad_raw_shift, bn.grad_beta_shift);
      d = std::move(dpre);
    }
    // Linear backward
    const Tensor& input = act_cache_[li];
    Tensor dwg = matmul_tn(d, input);  // out x in
    const RelevanceMap& map = *lin.live;
    lin.grad_weights = Tensor(lin.weights.shape());
    lin.grad_raw = Tensor(lin.weights.shape());
    lin.grad_beta = 0.0;
    for (std::size_t k = 0; k < dwg.size(); ++k) {
      const double gk = lin.gate_cache[k];
      double gv = dwg[k] * gk;
      if (!lin.frozen.mask.empty() && lin.frozen.mask[k] != 0.0) gv = 0.0;
      lin.grad_weights[k] = gv;
      double gr = dwg[k] * lin.weights[k] * map.beta * gk * (1.0 - gk);
      if (map.pruned && map.raw[k] == 0.0) gr = 0.0;
      lin.grad_raw[k] = gr;
      lin.grad_beta +=
          dwg[k] * lin.weights[k] * (map.raw[k] - 0.5) * gk * (1.0 - gk);
    }
    if (li > 0) {
      Tensor wg = elementwise_gate(lin.weights, lin.gate_cache);
      d = matmul(d, wg);  // b x in
    }
  }
  have_forward_ = false;
}

std::vector<ParamRef> MaskedNetwork::live_params(bool learn_beta) {
  if (!has_live()) throw StateError("live_params: no task in progress");
  std::vector<ParamRef> params;
  for (std::size_t l = 0; l < linears_.size(); ++l) {
    MaskedLinear& lin = linears_[l];
    const std::string base = "linear" + std::to_string(l);
    params.push_back({base + ".weights", ParamKind::kWeight, &lin.weights,
                      &lin.grad_weights, nullptr, nullptr, nullptr});
    params.push_back({base + ".map", ParamKind::kMapRaw, &lin.live->raw,
                      &lin.grad_raw, &*lin.live, nullptr, nullptr});
    if (learn_beta) {
      params.push_back({base + ".beta", ParamKind::kBeta, nullptr, nullptr,
                        nullptr, &lin.live->beta, &lin.grad_beta});
    }
  }
  for (std::size_t l = 0; l < bns_.size(); ++l) {
    MaskedBatchNorm& bn = bns_[l];
    const std::string base = "bn" + std::to_string(l);
    params.push_back({base + ".scale", ParamKind::kWeight, &bn.scale,
                      &bn.grad_scale, nullptr, nullptr, nullptr});
    params.push_back({base + ".scale_map", ParamKind::kMapRaw,
                      &bn.live_scale->raw, &bn.grad_raw_scale, &*bn.live_scale,
                      nullptr, nullptr});
    params.push_back({base + ".shift", ParamKind::kWeight, &bn.shift,
                      &bn.grad_shift, nullptr, nullptr, nullptr});
    params.push_back({base + ".shift_map", ParamKind::kMapRaw,
                      &bn.live_shift->raw, &bn.grad_raw_shift, &*bn.live_shift,
                      nullptr, nullptr});
    if (learn_beta) {
      params.push_back({base + ".scale_beta", ParamKind::kBeta, nullptr,
                        nullptr, nullptr, &bn.live_scale->beta,
                        &bn.grad_beta_scale});
      params.push_back({base + ".shift_beta", ParamKind::kBeta, nullptr,
                        nullptr, nullptr, &bn.live_shift->beta,
                        &bn.grad_beta_shift});
    }
  }
  return params;
}

MaskedNetwork::TaskInference MaskedNetwork::task_logit_max(const Tensor& x) {
  const std::size_t tasks = task_count();
  if (tasks == 0) throw StateError("task_logit_max: no registered tasks");
  const std::size_t batch = x.rows();
  const std::size_t classes = dims_.back();
  TaskInference out;
  out.task.assign(batch, 0);
  out.logits = Tensor::matrix(batch, classes);
  out.confidence.assign(batch, -1.0);
  for (std::size_t k = 0; k < tasks; ++k) {
    Tensor logits = forward(x, k, Mode::kEval);
    Tensor probs = softmax(logits);
    for (std::size_t i = 0; i < batch; ++i) {
      double mx = 0.0;
      for (std::size_t j = 0; j < classes; ++j) {
        mx = std::max(mx, probs.at(i, j));
      }
      if (mx > out.confidence[i]) {
        out.confidence[i] = mx;
        out.task[i] = k;
        for (std::size_t j = 0; j < classes; ++j) {
          out.logits.at(i, j) = logits.at(i, j);
        }
      }
    }
  }
  return out;
}

std::size_t MaskedNetwork::weight_count() const {
  std::size_t n = 0;
  for (const MaskedLinear& lin : linears_) n += lin.weights.size();
  for (const MaskedBatchNorm& bn : bns_) n += bn.scale.size() + bn.shift.size();
  return n;
}

std::size_t MaskedNetwork::frozen_count() const {
  std::size_t n = 0;
  for (const MaskedLinear& lin : linears_) n += lin.frozen.popcount();
  for (const MaskedBatchNorm& bn : bns_) {
    n += bn.frozen_scale.popcount() + bn.frozen_shift.popcount();
  }
  return n;
}

double MaskedNetwork::model_sparsity() const {
  if (completed_ == 0) throw InputError("model_sparsity: no completed tasks");
  std::size_t unused = 0;
  auto count_unused = [&](const std::vector<Tensor>& masks) {
    const std::size_t n = masks.front().size();
    for (std::size_t i = 0; i < n; ++i) {
      bool used = false;
      for (const Tensor& m : masks) {
        if (m[i] != 0.0) {
          used = true;
          break;
        }
      }
      if (!used) ++unused;
    }
  };
  for (const MaskedLinear& lin : linears_) count_unused(lin.final_masks);
  for (const MaskedBatchNorm& bn : bns_) {
    count_unused(bn.scale_masks);
    count_unused(bn.shift_masks);
  }
  return static_cast<double>(unused) / static_cast<double>(weight_count());
}

MemoryFootprint MaskedNetwork::footprint() const {
  MemoryFootprint fp;
  fp.weight_count = weight_count();
  fp.task_count = completed_;
  fp.weight_bytes = fp.weight_count * sizeof(double);
  fp.mask_bytes_per_task = (fp.weight_count + 7) / 8;
  fp.mask_bytes_total = fp.mask_bytes_per_task * fp.task_count;
  if (completed_ > 0) {
    fp.removable_weights = static_cast<std::size_t>(std::llround(
        model_sparsity() * static_cast<double>(fp.weight_count)));
  }
  return fp;
}

}  // namespace relmap
