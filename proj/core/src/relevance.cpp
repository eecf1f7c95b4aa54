#include "relmap/relevance.hpp"

#include <cmath>
#include <sstream>

namespace relmap {

double pseudo_round(double x, double beta) {
  return 1.0 / (1.0 + std::exp(-beta * (x - 0.5)));
}

double pseudo_round_deriv(double x, double beta) {
  const double g = pseudo_round(x, beta);
  return beta * g * (1.0 - g);
}

RelevanceMap init_map(const std::vector<std::size_t>& shape, Rng& rng,
                      const MapInit& init) {
  RelevanceMap map;
  map.raw = Tensor(shape);
  map.beta = init.beta;
  for (std::size_t i = 0; i < map.raw.size(); ++i) {
    double v = rng.normal(init.mean, init.sd);
    map.raw[i] = std::min(1.0, std::max(0.0, v));
  }
  return map;
}

Tensor gate(const RelevanceMap& map) {
  Tensor g = map.raw;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = pseudo_round(map.raw[i], map.beta);
  }
  return g;
}

Tensor binarize(const RelevanceMap& map) {
  Tensor g = map.raw;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = pseudo_round(map.raw[i], map.beta) >= 0.5 ? 1.0 : 0.0;
  }
  return g;
}

void prune(RelevanceMap& map, double mu) {
  if (!(mu > 0.0 && mu < 1.0)) {
    std::ostringstream os;
    os << "prune: mu must lie in (0,1), got " << mu;
    throw ConfigError(os.str());
  }
  for (std::size_t i = 0; i < map.raw.size(); ++i) {
    if (map.raw[i] <= mu) map.raw[i] = 0.0;
  }
  map.pruned = true;
}

void clip_raw(RelevanceMap& map) {
  for (std::size_t i = 0; i < map.raw.size(); ++i) {
    map.raw[i] = std::min(1.0, std::max(0.0, map.raw[i]));
  }
}

std::size_t FrozenIndicator::popcount() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0) ++n;
  }
  return n;
}

void update_frozen(FrozenIndicator& frozen, const Tensor& binary_gate) {
  if (frozen.mask.empty()) {
    frozen.mask = Tensor(binary_gate.shape());
  }
  check_same_shape(frozen.mask, binary_gate, "update_frozen");
  for (std::size_t i = 0; i < frozen.mask.size(); ++i) {
    if (binary_gate[i] != 0.0) frozen.mask[i] = 1.0;
  }
}

double sparsity(const std::vector<Tensor>& task_masks,
                std::size_t weight_count) {
  if (task_masks.empty()) {
    throw InputError("sparsity: empty task mask list");
  }
  for (const Tensor& m : task_masks) {
    check_same_shape(task_masks.front(), m, "sparsity");
  }
  std::size_t unused = 0;
  const std::size_t n = task_masks.front().size();
  for (std::size_t i = 0; i < n; ++i) {
    bool used = false;
    for (const Tensor& m : task_masks) {
      if (m[i] != 0.0) {
        used = true;
        break;
      }
    }
    if (!used) ++unused;
  }
  return static_cast<double>(unused) / static_cast<double>(weight_count);
}

MemoryFootprint memory_footprint(const std::vector<Tensor>& task_masks,
                                 std::size_t weight_count) {
  MemoryFootprint fp;
  fp.weight_count = weight_count;
  fp.task_count = task_masks.size();
  fp.weight_bytes = weight_count * sizeof(double);
  fp.mask_bytes_per_task = (weight_count + 7) / 8;
  fp.mask_bytes_total = fp.mask_bytes_per_task * fp.task_count;
  if (!task_masks.empty()) {
    fp.removable_weights = static_cast<std::size_t>(
        std::llround(sparsity(task_masks, weight_count) *
                     static_cast<double>(weight_count)));
  }
  return fp;
}

}  // namespace relmap
