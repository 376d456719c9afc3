#pragma once

#include "vimd/network.hpp"

namespace vimd {

// Weights and switches of the combined objective
//   total = ce + alpha * (ld + beta * hsd)
// ld is the tempered-KL logit loss, hsd the per-layer hidden-state loss.
struct DistillConfig {
  float alpha = 1.0f;
  float beta = 20.0f;
  float delta_temp = 4.0f;
  bool use_ld = true;
  bool use_hsd = true;
  // KL argument order: default is student-first, KL(p_s || p_t); the flag
  // switches to the conventional teacher-first direction.
  bool kl_teacher_first = false;
  // Classical temperature^2 gradient rescaling (off by default).
  bool kl_temp_sq = false;

  void validate() const {
    if (delta_temp <= 0.0f) throw DomainError("distill: temperature must be positive");
    if (alpha < 0.0f || beta < 0.0f) throw DomainError("distill: alpha and beta must be >= 0");
  }
};

// Scalar graph nodes of one sample's objective; the composition identities
//   l_mkd == l_ld + beta * l_hsd  and  l_total == l_ce + alpha * l_mkd
// hold exactly as composed.
struct DistillLosses {
  Tensor l_ce, l_ld, l_hsd, l_mkd, l_total;
};

// -log softmax(logits)[label].
Tensor loss_ce(const Tensor& logits, int label);

// Tempered KL between student and teacher logits; the teacher side never
// receives gradient.
Tensor loss_ld(const Tensor& student_logits, const Tensor& teacher_logits,
               const DistillConfig& cfg);

// Sum over layers 1..N of the mean-squared difference between student and
// teacher hidden states (the embedding output H_0 is excluded). Teacher
// states are detached.
Tensor loss_hsd(const HiddenStates& student, const HiddenStates& teacher);

// Assembles all five scalars for one sample, honoring the use_* switches
// (disabled terms contribute exact zeros).
DistillLosses assemble_losses(const Tensor& student_logits, const HiddenStates& student_states,
                              const Tensor& teacher_logits, const HiddenStates& teacher_states,
                              int label, const DistillConfig& cfg);

}  // namespace vimd
