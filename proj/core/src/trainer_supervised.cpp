#include "relmap/trainer_supervised.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

namespace relmap {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch == 0) throw ConfigError("batch size must be positive");
  if (lr_weights <= 0.0 || lr_maps <= 0.0) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(mu > 0.0 && mu < 1.0)) {
    std::ostringstream os;
    os << "mu must lie in (0,1), got " << mu;
    throw ConfigError(os.str());
  }
  if (map_init.beta <= 0.0) throw ConfigError("beta must be positive");
  if (sparsity_coeff < 0.0) throw ConfigError("sparsity coeff must be >= 0");
  if (patience == 0) throw ConfigError("patience must be positive");
}

std::pair<std::size_t, std::size_t> TrainConfig::prune_window() const {
  const double scale = static_cast<double>(epochs) /
                       static_cast<double>(full_scale_epochs);
  std::size_t lo = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(20.0 * scale)));
  std::size_t hi = static_cast<std::size_t>(
      std::max<long long>(static_cast<long long>(lo) + 1,
                          std::llround(80.0 * scale)));
  lo = std::min(lo, epochs);
  hi = std::min(hi, epochs);
  return {lo, hi};
}

double add_sparsity_loss(MaskedNetwork& net, SparsityKind kind, double coeff) {
  if (kind == SparsityKind::kNone || coeff == 0.0) return 0.0;
  double penalty = 0.0;
  auto accumulate = [&](RelevanceMap& map, Tensor& grad_raw) {
    if (grad_raw.size() != map.raw.size()) grad_raw = Tensor(map.raw.shape());
    for (std::size_t k = 0; k < map.raw.size(); ++k) {
      const double g = pseudo_round(map.raw[k], map.beta);
      penalty += coeff * g;
      if (map.pruned && map.raw[k] == 0.0) continue;
      grad_raw[k] += coeff * map.beta * g * (1.0 - g);
    }
  };
  for (MaskedLinear& lin : net.linears()) {
    accumulate(*lin.live, lin.grad_raw);
  }
  for (MaskedBatchNorm& bn : net.bns()) {
    accumulate(*bn.live_scale, bn.grad_raw_scale);
    accumulate(*bn.live_shift, bn.grad_raw_shift);
  }
  return penalty;
}

namespace {

constexpr std::size_t kEvalChunk = 1024;

}  // namespace

double evaluate(MaskedNetwork& net, std::size_t task,
                const LabeledDataset& test) {
  const std::size_t n = test.size();
  if (n == 0) throw InputError("evaluate: empty dataset");
  const std::size_t d = test.images.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; i += kEvalChunk) {
    const std::size_t m = std::min(kEvalChunk, n - i);
    Tensor x = Tensor::matrix(m, d);
    std::copy_n(&test.images.data()[i * d], m * d, x.data().begin());
    Tensor logits = net.forward(x, task, Mode::kEval);
    for (std::size_t r = 0; r < m; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      }
      if (static_cast<int>(best) == test.labels[i + r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double eval_loss(MaskedNetwork& net, std::size_t task,
                 const LabeledDataset& data) {
  const std::size_t n = data.size();
  if (n == 0) throw InputError("eval_loss: empty dataset");
  const std::size_t d = data.images.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < n; i += kEvalChunk) {
    const std::size_t m = std::min(kEvalChunk, n - i);
    Tensor x = Tensor::matrix(m, d);
    std::copy_n(&data.images.data()[i * d], m * d, x.data().begin());
    Tensor logits = net.forward(x, task, Mode::kEval);
    const LossGrad lg = softmax_xent(
        logits, std::span<const int>(data.labels.data() + i, m));
    total += lg.loss * static_cast<double>(m);
  }
  return total / static_cast<double>(n);
}

TaskReport train_task(MaskedNetwork& net, const TaskStream& stream,
                      std::size_t task, const TrainConfig& config,
                      RunRecord* record) {
  config.validate();
  if (net.completed_tasks() != task) {
    std::ostringstream os;
    os << "train_task: task " << task << " out of order (completed "
       << net.completed_tasks() << ")";
    throw StateError(os.str());
  }
  Rng rng(config.seed * 0x100000001b3ull + task + 1);
  if (!net.has_live()) net.start_task(rng, config.map_init);

  Adam adam({config.lr_weights, config.lr_maps, config.lr_maps});
  auto params = net.live_params(config.learn_beta);
  const LabeledDataset val = stream.val_set(task);

  const auto [win_lo, win_hi] = config.prune_window();
  TaskReport report;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  bool pruned = false;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t batch_count = 0;
    for (const BatchRef& ref : stream.epoch_refs(task, epoch - 1)) {
      const Batch b = stream.materialize(ref);
      Tensor logits = net.forward(b.x, task, Mode::kTrain);
      LossGrad lg = softmax_xent(logits, b.y);
      net.backward(lg.grad);
      const double penalty =
          add_sparsity_loss(net, config.sparsity, config.sparsity_coeff);
      adam.step(params);
      loss_sum += lg.loss + penalty;
      ++batch_count;
    }
    const double train_loss = loss_sum / static_cast<double>(batch_count);
    const double val_loss = eval_loss(net, task, val);
    report.epoch_train_loss.push_back(train_loss);
    report.epoch_val_loss.push_back(val_loss);
    if (record != nullptr) {
      record->append({{"event", "epoch"},
                      {"task", task},
                      {"epoch", epoch},
                      {"train_loss", train_loss},
                      {"val_loss", val_loss}});
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      stale = 0;
    } else {
      ++stale;
    }
    if (!pruned) {
      const bool triggered = epoch >= win_lo && stale >= config.patience;
      const bool forced = epoch >= win_hi;
      if (triggered || forced) {
        if (!triggered && win_hi >= config.epochs) {
          std::cerr << "warning: task " << task
                    << " never converged; pruning at epoch " << epoch << "\n";
        }
        net.prune_live(config.mu);
        pruned = true;
        report.prune_epoch = epoch;
        report.converged = triggered;
        if (record != nullptr) {
          record->append({{"event", "prune"},
                          {"task", task},
                          {"epoch", epoch},
                          {"converged", triggered}});
        }
      }
    }
  }
  if (!pruned) {
    std::cerr << "warning: task " << task
              << " reached the epoch budget unpruned; pruning now\n";
    net.prune_live(config.mu);
    report.prune_epoch = config.epochs;
  }
  net.finish_task();
  report.accuracy = evaluate(net, task, stream.test_set(task));
  if (record != nullptr) {
    record->append({{"event", "task_done"},
                    {"task", task},
                    {"accuracy", report.accuracy},
                    {"sparsity", net.model_sparsity()},
                    {"frozen", net.frozen_count()},
                    {"prune_epoch", report.prune_epoch}});
  }
  return report;
}

RunSummary run_supervised(MaskedNetwork& net, const TaskStream& stream,
                          const TrainConfig& config, RunRecord* record) {
  RunSummary summary;
  for (std::size_t task = 0; task < stream.task_count(); ++task) {
    train_task(net, stream, task, config, record);
    for (std::size_t prev = 0; prev <= task; ++prev) {
      const double acc = evaluate(net, prev, stream.test_set(prev));
      if (record != nullptr) {
        record->append({{"event", "eval"},
                        {"after_task", task},
                        {"task", prev},
                        {"accuracy", acc}});
      }
      if (task + 1 == stream.task_count()) {
        summary.task_accuracy.push_back(acc);
      }
    }
  }
  double sum = 0.0;
  for (double a : summary.task_accuracy) sum += a;
  summary.mean_accuracy = sum / static_cast<double>(summary.task_accuracy.size());
  return summary;
}

}  // namespace relmap
