#pragma once

#include "vimd/checkpoint.hpp"
#include "vimd/dataset.hpp"
#include "vimd/distill.hpp"
#include "vimd/optim.hpp"
#include "vimd/sr.hpp"

namespace vimd {

struct TrainConfig {
  int epochs = 200;
  float lr_init = 1e-6f;
  int batch_size = 16;
  AdamWConfig adamw;  // beta1 0.9, beta2 0.999, eps 1e-8, weight decay 0.05
  uint64_t seed = 0;
  float val_fraction = 0.1f;  // stratified, seed-determined
  bool hflip_augment = false;
  std::string out_dir = "run";

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  float lr = 0;
  float l_ce = 0, l_ld = 0, l_hsd = 0, l_mkd = 0, l_total = 0;
  float train_acc = 0, val_acc = 0;
};

struct TrainResult {
  std::string best_ckpt, last_ckpt, csv_path;
  float best_val_acc = 0;
  std::vector<EpochStats> log;
};

// Teacher: plain cross-entropy on full-resolution images. Persists
// best.ckpt (weights only, by validation accuracy) and last.ckpt (weights +
// optimizer, resumable) under tc.out_dir, plus metrics.csv.
TrainResult train_teacher(const LoadedDataset& hr_train, const VimConfig& cfg,
                          const TrainConfig& tc, const std::string& resume_from = "");

struct StudentOptions {
  DistillConfig distill;
  SrGenerator::Mode sr_mode = SrGenerator::Mode::bicubic;
  int sr_channels = 32;
  int sr_blocks = 4;
  // L2 pre-training of the residual upsampler on (LR, HR) pairs before the
  // classifier trains (it then freezes unless sr_finetune is set).
  int sr_pretrain_epochs = 0;
  float sr_pretrain_lr = 1e-3f;
  bool sr_finetune = false;
  // Residual mode: start from an already pre-trained generator checkpoint
  // instead of pre-training in-run (shared front end across ablation arms).
  std::string sr_init_ckpt;
};

// L2-pretrains a residual x4 generator on (LR, HR) pairs and saves it as a
// standalone checkpoint (kind "sr"). Returns the final per-pixel loss.
float pretrain_sr_to(const std::string& out_ckpt, const LoadedDataset& lr_ds,
                     const LoadedDataset& hr_ds, int epochs, float lr_rate, int batch_size,
                     uint64_t seed, int channels = 32, int blocks = 4);

// Student: upsampler + classifier trained on LR images under the combined
// objective, supervised by a frozen teacher fed the paired HR images. The
// LR and HR datasets must mirror each other file-for-file. The student's
// classifier config is taken from the teacher checkpoint (the objective's
// hidden-state terms require identical structure).
TrainResult train_student(const LoadedDataset& lr_train, const LoadedDataset& hr_train,
                          const std::string& teacher_ckpt_path, const TrainConfig& tc,
                          const StudentOptions& opts, const std::string& resume_from = "");

struct StudentPipeline {
  SrGenerator sr;
  VimNet vim;
};

VimNet load_teacher(const std::string& ckpt_path);
StudentPipeline load_student(const std::string& ckpt_path);

// One sample's objective: the teacher consumes the HR image without
// gradients; the student consumes SR(LR).
DistillLosses student_sample_losses(const SrGenerator& sr, const VimNet& student,
                                    const VimNet& teacher, const Tensor& lr_img,
                                    const Tensor& hr_img, int label, const DistillConfig& cfg);

// Top-1 accuracy. The teacher variant consumes the dataset directly; the
// student variant runs LR images through the full pipeline.
float evaluate_top1(const VimNet& net, const LoadedDataset& ds);
float evaluate_top1(const StudentPipeline& pipe, const LoadedDataset& lr_ds);

// Seed-determined stratified split into (train indices, val indices).
std::pair<std::vector<int>, std::vector<int>> stratified_split(const std::vector<int>& labels,
                                                               int num_classes,
                                                               float val_fraction, uint64_t seed);

void write_metrics_csv(const std::string& path, const std::vector<EpochStats>& log);

}  // namespace vimd
