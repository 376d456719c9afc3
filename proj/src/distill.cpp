#include "vimd/distill.hpp"

namespace vimd {

Tensor loss_ce(const Tensor& logits, int label) { return cross_entropy(logits, label); }

Tensor loss_ld(const Tensor& student_logits, const Tensor& teacher_logits,
               const DistillConfig& cfg) {
  cfg.validate();
  return kl_tempered(student_logits, teacher_logits.detached(), cfg.delta_temp,
                     cfg.kl_teacher_first, cfg.kl_temp_sq);
}

Tensor loss_hsd(const HiddenStates& student, const HiddenStates& teacher) {
  if (student.count() != teacher.count())
    throw ContractError("loss_hsd: layer counts differ, student " +
                        std::to_string(student.count()) + " vs teacher " +
                        std::to_string(teacher.count()));
  if (student.count() < 1) throw ContractError("loss_hsd: empty hidden states");
  for (int i = 0; i < student.count(); ++i)
    if (student.layers[size_t(i)].shape() != teacher.layers[size_t(i)].shape())
      throw ContractError("loss_hsd: layer " + std::to_string(i) + " shape mismatch " +
                          shape_str(student.layers[size_t(i)].shape()) + " vs " +
                          shape_str(teacher.layers[size_t(i)].shape()));

  // Sum starts at layer 1: the embedding output carries no encoder knowledge.
  Tensor acc;
  for (int i = 1; i < student.count(); ++i) {
    Tensor term = mse(student.layers[size_t(i)], teacher.layers[size_t(i)].detached());
    acc = (i == 1) ? term : add(acc, term);
  }
  if (!acc.defined()) return Tensor::scalar(0.0f);  // zero-layer network
  return acc;
}

DistillLosses assemble_losses(const Tensor& student_logits, const HiddenStates& student_states,
                              const Tensor& teacher_logits, const HiddenStates& teacher_states,
                              int label, const DistillConfig& cfg) {
  cfg.validate();
  DistillLosses out;
  out.l_ce = loss_ce(student_logits, label);
  out.l_ld = cfg.use_ld ? loss_ld(student_logits, teacher_logits, cfg) : Tensor::scalar(0.0f);
  out.l_hsd = cfg.use_hsd ? loss_hsd(student_states, teacher_states) : Tensor::scalar(0.0f);
  out.l_mkd = add(out.l_ld, scale(out.l_hsd, cfg.beta));
  out.l_total = add(out.l_ce, scale(out.l_mkd, cfg.alpha));
  return out;
}

}  // namespace vimd
