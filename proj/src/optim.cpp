#include "vimd/optim.hpp"

#include <cmath>

namespace vimd {

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    p->ensure_grad();
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void AdamW::step(float lr) {
  ++step_;
  const float bc1 = 1.0f - std::pow(cfg_.beta1, float(step_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, float(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    if (p.grad_storage()->size() != size_t(p.size()))
      throw ContractError("adamw: grad/param size mismatch for parameter " + std::to_string(i));
    ArrMap pv(p.data(), p.size());
    CArrMap g(p.grad_data(), p.size());
    ArrMap m(m_[i].data(), p.size());
    ArrMap v(v_[i].data(), p.size());

    if (cfg_.weight_decay != 0.0f) pv *= (1.0f - lr * cfg_.weight_decay);
    m = cfg_.beta1 * m + (1.0f - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0f - cfg_.beta2) * g.square();
    pv -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg_.eps);
  }
}

void AdamW::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

float cosine_lr(int epoch, int total_epochs, float lr_init) {
  if (total_epochs <= 0 || epoch < 0 || epoch >= total_epochs)
    throw DomainError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(total_epochs) + ")");
  return lr_init * 0.5f * (1.0f + std::cos(float(M_PI) * float(epoch) / float(total_epochs)));
}

}  // namespace vimd
