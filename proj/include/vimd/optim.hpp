#pragma once

#include "vimd/tensor.hpp"

namespace vimd {

struct AdamWConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.05f;
};

// Decoupled-weight-decay Adam with bias-corrected moments. Only parameters
// handed to the constructor are ever touched; frozen modules simply stay
// out of the list.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Tensor*> params, AdamWConfig cfg);

  // One update from the gradients currently in each param's grad buffer.
  void step(float lr);
  void zero_grad();

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t t) { step_ = t; }

  // Moment buffers, aligned with the param order (for checkpointing).
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  AdamWConfig cfg_;
  int64_t step_ = 0;
};

// Single-cycle cosine annealing, no warmup, no restarts:
// lr(epoch) = lr_init * (1 + cos(pi * epoch / total)) / 2.
float cosine_lr(int epoch, int total_epochs, float lr_init);

}  // namespace vimd
