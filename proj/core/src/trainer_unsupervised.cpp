#include "relmap/trainer_unsupervised.hpp"

#include <cmath>
#include <cstring>
#include <deque>
#include <sstream>

namespace relmap {

double novelty_stat(MaskedNetwork& net, const Tensor& x) {
  const std::size_t current = net.task_count() - 1;
  Tensor probs = softmax(net.forward(x, current, Mode::kEval));
  const std::size_t b = probs.rows(), c = probs.cols();
  double sum = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = 0.0;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, probs.at(i, j));
    sum += -std::log(mx);
  }
  return sum / static_cast<double>(b);
}

FilterResult filter_batch(MaskedNetwork& net, const Batch& batch, double tau) {
  const std::size_t completed = net.completed_tasks();
  const std::size_t n = batch.x.rows(), d = batch.x.cols();
  FilterResult out;
  out.claimed.assign(completed, 0);
  if (completed == 0) {
    out.x = batch.x;
    out.y = batch.y;
    out.task_of = batch.task_of;
    return out;
  }
  // max softmax probability of each sample under each completed mask
  std::vector<std::vector<double>> conf(completed);
  for (std::size_t k = 0; k < completed; ++k) {
    Tensor probs = softmax(net.forward(batch.x, k, Mode::kEval));
    conf[k].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = 0.0;
      for (std::size_t j = 0; j < probs.cols(); ++j) {
        mx = std::max(mx, probs.at(i, j));
      }
      conf[k][i] = mx;
    }
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < completed; ++k) {
      if (conf[k][i] > conf[best][i]) best = k;
    }
    if (conf[best][i] > tau) {
      ++out.claimed[best];
    } else {
      keep.push_back(i);
    }
  }
  out.x = Tensor::matrix(keep.size(), d);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    std::memcpy(&out.x.data()[r * d], &batch.x.data()[keep[r] * d],
                d * sizeof(double));
    out.y.push_back(batch.y[keep[r]]);
    out.task_of.push_back(batch.task_of[keep[r]]);
  }
  return out;
}

double gaussian_regularize(MaskedNetwork& net, Rng& rng, Adam& adam,
                           std::vector<ParamRef>& params,
                           const std::vector<std::size_t>& batch_shape,
                           double coeff) {
  if (coeff == 0.0) return 0.0;
  Tensor xg(batch_shape);
  for (std::size_t i = 0; i < xg.size(); ++i) xg[i] = rng.normal();
  // The train-mode forward deliberately mixes noise statistics into the
  // live task's BN running stats. That keeps eval-mode confidence honest
  // on foreign data: with pristine stats the live mask stays confident on
  // the next task's samples and the novelty statistic never rises.
  Tensor logits = net.forward(xg, net.task_count() - 1, Mode::kTrain);
  LossGrad lg = l2_to_zero(logits);
  // per-sample mean, so the push matches the scale of the mean xent loss
  const double scale = coeff / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < lg.grad.size(); ++i) lg.grad[i] *= scale;
  net.backward(lg.grad);
  adam.step(params);
  return scale * lg.loss;
}

UnsupervisedReport run_unsupervised(MaskedNetwork& net,
                                    const TaskStream& stream,
                                    const UnsupervisedConfig& config,
                                    RunRecord* record) {
  config.train.validate();
  const FlatStream flat = stream.flat_stream(config.epochs_per_task);

  UnsupervisedReport report;
  report.boundaries = flat.boundaries;

  Rng rng(config.train.seed * 0x100000001b3ull + 0x5EED);
  if (!net.has_live()) net.start_task(rng, config.train.map_init);
  report.tasks_created = 1;

  Adam adam({config.train.lr_weights, config.train.lr_maps,
             config.train.lr_maps});
  auto params = net.live_params(config.train.learn_beta);

  // Batches optimize two detector windows after they arrive, so a batch
  // only ever trains a task the detector still believes in by the time
  // the switch would have fired. A fuzzy ramp spreads the switch over
  // that many extra batches, so the grace stretches by the ramp. On
  // detection the lagged batches fall to the fresh map; any stragglers
  // from the finished task are claimed by its frozen mask through the
  // tau filter at optimize time.
  const std::size_t lag = 2 * config.detector.window + config.ramp;
  std::deque<Batch> pending;

  // A fresh map's novelty keeps moving in steps until the lagged
  // optimizer catches up, so the dwell must outlast the lag plus one
  // window of evidence from the caught-up map.
  DetectorConfig dcfg = config.detector;
  dcfg.dwell = std::max(dcfg.dwell, lag + dcfg.window);
  TaskSwitchDetector detector(dcfg);

  auto optimize_batch = [&](const Batch& b) {
    const FilterResult f = filter_batch(net, b, config.tau);
    if (f.y.empty()) return;
    Tensor logits = net.forward(f.x, net.task_count() - 1, Mode::kTrain);
    LossGrad lg = softmax_xent(logits, f.y);
    net.backward(lg.grad);
    add_sparsity_loss(net, config.train.sparsity, config.train.sparsity_coeff);
    adam.step(params);
    gaussian_regularize(net, rng, adam, params, f.x.shape(),
                        config.gaussian_coeff);
  };

  for (std::size_t bi = 0; bi < flat.refs.size(); ++bi) {
    Batch batch = stream.materialize(flat.refs[bi]);
    // Novelty reads the raw batch: the tau filter would strip exactly the
    // unfamiliar samples an over-confident frozen mask mistakes for its
    // own, muting the post-switch rise. Filtering applies at optimize
    // time only.
    if (detector.push(novelty_stat(net, batch.x))) {
      const double p = detector.last_p();
      net.prune_live(config.train.mu);
      net.finish_task();
      report.detections.push_back(bi);
      if (report.detections.size() > config.max_detections) {
        std::ostringstream os;
        os << "runaway detection: " << report.detections.size()
           << " task switches exceed the configured maximum "
           << config.max_detections;
        throw StateError(os.str());
      }
      net.start_task(rng, config.train.map_init);
      ++report.tasks_created;
      adam = Adam({config.train.lr_weights, config.train.lr_maps,
                   config.train.lr_maps});
      params = net.live_params(config.train.learn_beta);
      if (record != nullptr) {
        record->append({{"event", "detection"},
                        {"batch", bi},
                        {"p_value", p},
                        {"est_tasks", report.tasks_created}});
      }
    }
    pending.push_back(std::move(batch));
    if (pending.size() > lag) {
      optimize_batch(pending.front());
      pending.pop_front();
    }
  }
  for (const Batch& b : pending) optimize_batch(b);
  net.prune_live(config.train.mu);
  net.finish_task();

  for (std::size_t t = 0; t < stream.task_count(); ++t) {
    const std::size_t mask = std::min(t, net.completed_tasks() - 1);
    const double acc = evaluate(net, mask, stream.test_set(t));
    report.task_accuracy.push_back(acc);
    if (record != nullptr) {
      record->append({{"event", "task_done"},
                      {"task", t},
                      {"mask", mask},
                      {"accuracy", acc},
                      {"sparsity", net.model_sparsity()},
                      {"frozen", net.frozen_count()}});
      record->append({{"event", "eval"},
                      {"after_task", stream.task_count() - 1},
                      {"task", t},
                      {"accuracy", acc}});
    }
  }
  double sum = 0.0;
  for (double a : report.task_accuracy) sum += a;
  report.mean_accuracy = sum / static_cast<double>(report.task_accuracy.size());
  return report;
}

std::vector<std::size_t> infer_task(MaskedNetwork& net, const Tensor& x) {
  return net.task_logit_max(x).task;
}

}  // namespace relmap
