#include "relmap/optimizer.hpp"

#include <cmath>
#include <sstream>

#include "relmap/relevance.hpp"

namespace relmap {

void Adam::step(std::span<ParamRef> params) {
  if (slots_.empty()) {
    slots_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].value != nullptr) {
        slots_[i].m = Tensor(params[i].value->shape());
        slots_[i].v = Tensor(params[i].value->shape());
        slots_[i].t = Tensor(params[i].value->shape());
      }
    }
  }
  if (slots_.size() != params.size()) {
    throw StateError("Adam::step: parameter list changed size");
  }
  ++step_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamRef& p = params[i];
    Slot& s = slots_[i];
    const double lr = p.kind == ParamKind::kWeight  ? config_.lr_weights
                      : p.kind == ParamKind::kMapRaw ? config_.lr_maps
                                                     : config_.lr_beta;
    if (p.kind == ParamKind::kBeta) {
      const double g = *p.scalar_grad;
      if (!std::isfinite(g)) {
        std::ostringstream os;
        os << "non-finite gradient in " << p.name << " at step " << step_;
        throw StateError(os.str());
      }
      if (g == 0.0) continue;
      s.scalar_m = config_.beta1 * s.scalar_m + (1.0 - config_.beta1) * g;
      s.scalar_v = config_.beta2 * s.scalar_v + (1.0 - config_.beta2) * g * g;
      s.scalar_t += 1.0;
      const double mh = s.scalar_m / (1.0 - std::pow(config_.beta1, s.scalar_t));
      const double vh = s.scalar_v / (1.0 - std::pow(config_.beta2, s.scalar_t));
      const double updated = *p.scalar - lr * mh / (std::sqrt(vh) + config_.eps);
      // beta only tightens
      *p.scalar = std::max({*p.scalar, updated, kBetaMin});
      continue;
    }
    Tensor& value = *p.value;
    const Tensor& grad = *p.grad;
    check_same_shape(value, grad, "Adam::step");
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      if (!std::isfinite(g)) {
        std::ostringstream os;
        os << "non-finite gradient in " << p.name << "[" << k << "] at step "
           << step_;
        throw StateError(os.str());
      }
      if (g == 0.0) continue;  // masked or genuinely flat: leave moments alone
      s.m[k] = config_.beta1 * s.m[k] + (1.0 - config_.beta1) * g;
      s.v[k] = config_.beta2 * s.v[k] + (1.0 - config_.beta2) * g * g;
      s.t[k] += 1.0;
      const double mh = s.m[k] / (1.0 - std::pow(config_.beta1, s.t[k]));
      const double vh = s.v[k] / (1.0 - std::pow(config_.beta2, s.t[k]));
      value[k] -= lr * mh / (std::sqrt(vh) + config_.eps);
      if (p.kind == ParamKind::kMapRaw) {
        value[k] = std::min(1.0, std::max(0.0, value[k]));
      }
    }
  }
}

}  // namespace relmap
