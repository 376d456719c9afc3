#include "vimd/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace vimd {

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (batch_size < 1) throw ContractError("train: batch size must be >= 1");
  if (!(lr_init > 0.0f)) throw ContractError("train: learning rate must be positive");
  if (val_fraction < 0.0f || val_fraction >= 1.0f)
    throw ContractError("train: val fraction must be in [0, 1)");
}

std::pair<std::vector<int>, std::vector<int>> stratified_split(const std::vector<int>& labels,
                                                               int num_classes,
                                                               float val_fraction, uint64_t seed) {
  std::vector<std::vector<int>> per_class(static_cast<size_t>(num_classes), std::vector<int>{});
  for (size_t i = 0; i < labels.size(); ++i) per_class[size_t(labels[i])].push_back(int(i));

  std::vector<int> train_idx, val_idx;
  for (int c = 0; c < num_classes; ++c) {
    auto& idxs = per_class[size_t(c)];
    Rng rng(mix_seed(seed, hash_str("valsplit") + uint64_t(c)));
    rng.shuffle(idxs);
    int n_val = int(std::floor(val_fraction * float(idxs.size())));
    for (size_t k = 0; k < idxs.size(); ++k)
      (int(k) < n_val ? val_idx : train_idx).push_back(idxs[k]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  return {train_idx, val_idx};
}

void write_metrics_csv(const std::string& path, const std::vector<EpochStats>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics csv: " + path);
  out << "epoch,lr,l_ce,l_ld,l_hsd,l_mkd,l_total,train_acc,val_acc\n";
  char line[256];
  for (const auto& r : log) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch,
                  double(r.lr), double(r.l_ce), double(r.l_ld), double(r.l_hsd), double(r.l_mkd),
                  double(r.l_total), double(r.train_acc), double(r.val_acc));
    out << line;
  }
}

namespace {

Tensor hflip_image(const Tensor& img) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at({ci, y, x}) = img.at({ci, y, w - 1 - x});
  return out;
}

bool flip_coin(uint64_t seed, int epoch, int sample_index) {
  Rng rng(mix_seed(seed, hash_str("hflip") + uint64_t(epoch) * 1000003ull +
                             uint64_t(sample_index)));
  return rng.uniform() < 0.5f;
}

std::vector<int> epoch_order(const std::vector<int>& train_idx, uint64_t seed, int epoch) {
  std::vector<int> order = train_idx;
  Rng rng(mix_seed(seed, hash_str("shuffle") + uint64_t(epoch)));
  rng.shuffle(order);
  return order;
}

// Result of one sample's forward/backward inside a batch.
struct SampleOut {
  std::vector<float> grads;  // flat, aligned with the param list
  float ce = 0, ld = 0, hsd = 0, mkd = 0, total = 0;
  bool correct = false;
  std::exception_ptr error;
};

// Runs fn(sample_index, slot) across each batch in parallel, then reduces
// gradients in slot order: results are bit-identical for any worker count.
struct BatchRunner {
  std::vector<Tensor*> params;
  std::vector<SampleOut> slots;

  explicit BatchRunner(std::vector<Tensor*> ps) : params(std::move(ps)) {}

  template <typename SampleFn>
  EpochStats run_epoch(const std::vector<int>& order, int batch_size, AdamW& opt, float lr,
                       const SampleFn& fn) {
    EpochStats st;
    int correct = 0;
    int64_t count = 0;
    for (size_t start = 0; start < order.size(); start += size_t(batch_size)) {
      const int b = int(std::min(order.size() - start, size_t(batch_size)));
      slots.assign(size_t(b), {});
      parallel_for(b, [&](int i) {
        SampleOut& out = slots[size_t(i)];
        try {
          fn(order[start + size_t(i)], out);
        } catch (...) {
          out.error = std::current_exception();
        }
      });
      for (int i = 0; i < b; ++i)
        if (slots[size_t(i)].error) std::rethrow_exception(slots[size_t(i)].error);
      for (int i = 0; i < b; ++i)
        if (!std::isfinite(slots[size_t(i)].total))
          throw ContractError("training loss became non-finite at step " +
                              std::to_string(opt.step_count() + 1));

      // ordered reduction into param grads, then mean over the batch
      const float inv_b = 1.0f / float(b);
      int64_t ofs = 0;
      for (Tensor* p : params) {
        ArrMap g(p->grad_data(), p->size());
        for (int i = 0; i < b; ++i)
          g += CArrMap(slots[size_t(i)].grads.data() + ofs, p->size());
        g *= inv_b;
        ofs += p->size();
      }
      opt.step(lr);
      opt.zero_grad();

      for (int i = 0; i < b; ++i) {
        const SampleOut& s = slots[size_t(i)];
        st.l_ce += s.ce;
        st.l_ld += s.ld;
        st.l_hsd += s.hsd;
        st.l_mkd += s.mkd;
        st.l_total += s.total;
        correct += s.correct ? 1 : 0;
        ++count;
      }
    }
    if (count > 0) {
      st.l_ce /= float(count);
      st.l_ld /= float(count);
      st.l_hsd /= float(count);
      st.l_mkd /= float(count);
      st.l_total /= float(count);
      st.train_acc = float(correct) / float(count);
    }
    st.lr = lr;
    return st;
  }
};

nlohmann::json base_meta(const char* kind, const VimConfig& cfg, uint64_t seed) {
  return nlohmann::json{{"kind", kind},
                        {"vim", vim_config_to_json(cfg)},
                        {"seed", seed},
                        {"tool_version", version_string()}};
}

void save_resume_ckpt(const std::string& path, nlohmann::json meta,
                      const std::vector<NamedParam>& model_params, AdamW& opt,
                      const std::vector<NamedParam>& opt_owner_names) {
  std::vector<NamedParam> all = model_params;
  auto& m = opt.first_moments();
  auto& v = opt.second_moments();
  for (size_t i = 0; i < opt_owner_names.size(); ++i) {
    all.push_back({"opt.m." + opt_owner_names[i].name, &m[i]});
    all.push_back({"opt.v." + opt_owner_names[i].name, &v[i]});
  }
  save_checkpoint(path, meta, all);
}

// Restores model + optimizer state; returns the epoch to resume from.
int load_resume_ckpt(const std::string& path, const std::vector<NamedParam>& model_params,
                     AdamW& opt, const std::vector<NamedParam>& opt_owner_names,
                     const char* want_kind) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != want_kind)
    throw ContractError("resume checkpoint kind '" + ck.meta.value("kind", std::string()) +
                        "' does not match '" + want_kind + "'");
  std::vector<NamedParam> all = model_params;
  auto& m = opt.first_moments();
  auto& v = opt.second_moments();
  for (size_t i = 0; i < opt_owner_names.size(); ++i) {
    all.push_back({"opt.m." + opt_owner_names[i].name, &m[i]});
    all.push_back({"opt.v." + opt_owner_names[i].name, &v[i]});
  }
  load_into(ck, all);
  opt.set_step_count(ck.meta.at("train").at("step").get<int64_t>());
  return ck.meta.at("train").at("epoch").get<int>() + 1;
}

}  // namespace

float evaluate_top1(const VimNet& net, const LoadedDataset& ds) {
  if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
  std::vector<char> hit(ds.size(), 0);
  parallel_for(int(ds.size()), [&](int i) {
    auto out = net.forward(ds.images[size_t(i)]);
    hit[size_t(i)] = predict(out.logits) == ds.labels[size_t(i)] ? 1 : 0;
  });
  int correct = 0;
  for (char h : hit) correct += h;
  return float(correct) / float(ds.size());
}

float evaluate_top1(const StudentPipeline& pipe, const LoadedDataset& lr_ds) {
  if (lr_ds.size() == 0) throw ContractError("evaluate: empty dataset");
  std::vector<char> hit(lr_ds.size(), 0);
  parallel_for(int(lr_ds.size()), [&](int i) {
    Tensor sr_img = pipe.sr.generate(lr_ds.images[size_t(i)]);
    auto out = pipe.vim.forward(sr_img);
    hit[size_t(i)] = predict(out.logits) == lr_ds.labels[size_t(i)] ? 1 : 0;
  });
  int correct = 0;
  for (char h : hit) correct += h;
  return float(correct) / float(lr_ds.size());
}

// ---------------------------------------------------------------------------
// teacher

TrainResult train_teacher(const LoadedDataset& hr_train, const VimConfig& cfg,
                          const TrainConfig& tc, const std::string& resume_from) {
  cfg.validate();
  tc.validate();
  if (hr_train.size() == 0) throw ContractError("train_teacher: empty dataset");
  if (hr_train.num_classes() != cfg.num_classes)
    throw ContractError("train_teacher: dataset has " + std::to_string(hr_train.num_classes()) +
                        " classes, config expects " + std::to_string(cfg.num_classes));

  VimNet net(cfg);
  net.init(mix_seed(tc.seed, hash_str("teacher-init")));
  auto model_params = net.named_params();
  std::vector<Tensor*> ptrs;
  for (auto& p : model_params) ptrs.push_back(p.tensor);
  AdamW opt(ptrs, tc.adamw);

  int start_epoch = 0;
  if (!resume_from.empty())
    start_epoch = load_resume_ckpt(resume_from, model_params, opt, model_params, "teacher");

  auto [train_idx, val_idx] = stratified_split(hr_train.labels, cfg.num_classes,
                                               tc.val_fraction, tc.seed);
  fs::create_directories(tc.out_dir);

  TrainResult res;
  res.best_ckpt = tc.out_dir + "/best.ckpt";
  res.last_ckpt = tc.out_dir + "/last.ckpt";
  res.csv_path = tc.out_dir + "/metrics.csv";
  res.best_val_acc = -1.0f;

  BatchRunner runner(ptrs);
  LoadedDataset val_view;
  val_view.class_names = hr_train.class_names;
  for (int i : val_idx) {
    val_view.images.push_back(hr_train.images[size_t(i)]);
    val_view.labels.push_back(hr_train.labels[size_t(i)]);
  }

  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const float lr = cosine_lr(epoch, tc.epochs, tc.lr_init);
    auto order = epoch_order(train_idx, tc.seed, epoch);

    EpochStats st = runner.run_epoch(order, tc.batch_size, opt, lr, [&](int idx, SampleOut& out) {
      Tensor img = hr_train.images[size_t(idx)];
      if (tc.hflip_augment && flip_coin(tc.seed, epoch, idx)) img = hflip_image(img);
      Tape tape;
      Tape::Recording rec(tape);
      auto fwd = net.forward(img);
      Tensor loss = cross_entropy(fwd.logits, hr_train.labels[size_t(idx)]);
      tape.backward(loss);
      tape.harvest(runner.params, out.grads);
      out.ce = out.total = loss.value();
      out.correct = predict(fwd.logits) == hr_train.labels[size_t(idx)];
    });
    st.epoch = epoch;
    st.val_acc = val_view.size() ? evaluate_top1(net, val_view) : st.train_acc;
    res.log.push_back(st);

    nlohmann::json meta = base_meta("teacher", cfg, tc.seed);
    meta["train"] = {{"epoch", epoch},
                     {"step", opt.step_count()},
                     {"best_val_acc", res.best_val_acc}};
    save_resume_ckpt(res.last_ckpt, meta, model_params, opt, model_params);
    if (st.val_acc > res.best_val_acc) {
      res.best_val_acc = st.val_acc;
      meta["train"]["best_val_acc"] = res.best_val_acc;
      save_checkpoint(res.best_ckpt, meta, model_params);
    }
    write_metrics_csv(res.csv_path, res.log);
  }
  return res;
}

VimNet load_teacher(const std::string& ckpt_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.meta.value("kind", "") != "teacher")
    throw ContractError("not a teacher checkpoint: " + ckpt_path);
  VimNet net(vim_config_from_json(ck.meta.at("vim")));
  net.init(0);
  load_into(ck, net.named_params(), {"opt."});
  return net;
}

// ---------------------------------------------------------------------------
// student

DistillLosses student_sample_losses(const SrGenerator& sr, const VimNet& student,
                                    const VimNet& teacher, const Tensor& lr_img,
                                    const Tensor& hr_img, int label, const DistillConfig& cfg) {
  Tensor teacher_logits;
  HiddenStates teacher_states;
  {
    Tape::NoGrad ng;
    auto t_out = teacher.forward(hr_img);
    teacher_logits = t_out.logits;
    teacher_states = t_out.states;
  }
  Tensor x_s = sr.generate(lr_img);
  auto s_out = student.forward(x_s);
  return assemble_losses(s_out.logits, s_out.states, teacher_logits, teacher_states, label, cfg);
}

namespace {

float pretrain_sr_epochs(SrGenerator& sr, const LoadedDataset& lr_ds, const LoadedDataset& hr_ds,
                         const std::vector<int>& train_idx, int epochs, float lr_rate,
                         int batch_size, uint64_t seed) {
  sr.frozen = false;
  auto named = sr.named_params();
  std::vector<Tensor*> ptrs;
  for (auto& p : named) ptrs.push_back(p.tensor);
  AdamW opt(ptrs, AdamWConfig{0.9f, 0.999f, 1e-8f, 0.0f});

  float last = 0.0f;
  BatchRunner runner(ptrs);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    auto order = epoch_order(train_idx, mix_seed(seed, hash_str("sr-pre")), epoch);
    EpochStats st =
        runner.run_epoch(order, batch_size, opt, lr_rate, [&](int idx, SampleOut& out) {
          Tape tape;
          Tape::Recording rec(tape);
          Tensor got = sr.generate(lr_ds.images[size_t(idx)]);
          Tensor loss = mse(got, hr_ds.images[size_t(idx)]);
          tape.backward(loss);
          tape.harvest(runner.params, out.grads);
          out.total = loss.value();
        });
    last = st.l_total;
  }
  sr.frozen = true;
  return last;
}

void load_sr(SrGenerator& sr, const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "sr")
    throw ContractError("not a generator checkpoint: " + path);
  load_into(ck, sr.named_params());
}

}  // namespace

float pretrain_sr_to(const std::string& out_ckpt, const LoadedDataset& lr_ds,
                     const LoadedDataset& hr_ds, int epochs, float lr_rate, int batch_size,
                     uint64_t seed, int channels, int blocks) {
  if (lr_ds.size() == 0 || lr_ds.size() != hr_ds.size())
    throw ContractError("pretrain_sr: LR/HR datasets must be nonempty and aligned");
  SrGenerator sr(SrGenerator::Mode::residual, channels, blocks);
  sr.init(mix_seed(seed, hash_str("sr-init")));
  std::vector<int> all(lr_ds.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  float loss = pretrain_sr_epochs(sr, lr_ds, hr_ds, all, epochs, lr_rate, batch_size, seed);
  nlohmann::json meta{{"kind", "sr"},
                      {"channels", channels},
                      {"blocks", blocks},
                      {"seed", seed},
                      {"tool_version", version_string()}};
  save_checkpoint(out_ckpt, meta, sr.named_params());
  return loss;
}

TrainResult train_student(const LoadedDataset& lr_train, const LoadedDataset& hr_train,
                          const std::string& teacher_ckpt_path, const TrainConfig& tc,
                          const StudentOptions& opts, const std::string& resume_from) {
  tc.validate();
  opts.distill.validate();
  if (lr_train.size() == 0 || lr_train.size() != hr_train.size())
    throw ContractError("train_student: LR/HR datasets must be nonempty and aligned");
  for (size_t i = 0; i < lr_train.size(); ++i)
    if (lr_train.rel_paths[i] != hr_train.rel_paths[i] ||
        lr_train.labels[i] != hr_train.labels[i])
      throw ContractError("train_student: LR/HR datasets diverge at '" + hr_train.rel_paths[i] +
                          "'");

  Checkpoint teacher_ck = load_checkpoint(teacher_ckpt_path);
  if (teacher_ck.meta.value("kind", "") != "teacher")
    throw ContractError("train_student: not a teacher checkpoint: " + teacher_ckpt_path);
  const VimConfig cfg = vim_config_from_json(teacher_ck.meta.at("vim"));

  // Fail-fast contract checks before any heavy work.
  if (hr_train.num_classes() != cfg.num_classes)
    throw ContractError("train_student: dataset classes " +
                        std::to_string(hr_train.num_classes()) + " != teacher head " +
                        std::to_string(cfg.num_classes));
  const int lr_side = lr_train.images[0].dim(1);
  if (lr_side * SrGenerator::kScale != cfg.input_side)
    throw ContractError("train_student: LR side " + std::to_string(lr_side) + " x" +
                        std::to_string(SrGenerator::kScale) + " != classifier input " +
                        std::to_string(cfg.input_side));
  if (hr_train.images[0].dim(1) != cfg.input_side)
    throw ContractError("train_student: HR side " + std::to_string(hr_train.images[0].dim(1)) +
                        " != classifier input " + std::to_string(cfg.input_side));

  VimNet teacher(cfg);
  teacher.init(0);
  load_into(teacher_ck, teacher.named_params(), {"opt."});

  VimNet student(cfg);
  student.init(mix_seed(tc.seed, hash_str("student-init")));
  SrGenerator sr(opts.sr_mode, opts.sr_channels, opts.sr_blocks);
  sr.init(mix_seed(tc.seed, hash_str("sr-init")));

  auto [train_idx, val_idx] = stratified_split(hr_train.labels, cfg.num_classes,
                                               tc.val_fraction, tc.seed);

  if (opts.sr_mode == SrGenerator::Mode::residual) {
    if (!opts.sr_init_ckpt.empty())
      load_sr(sr, opts.sr_init_ckpt);
    else if (opts.sr_pretrain_epochs > 0)
      pretrain_sr_epochs(sr, lr_train, hr_train, train_idx, opts.sr_pretrain_epochs,
                         opts.sr_pretrain_lr, tc.batch_size, tc.seed);
  }
  sr.frozen = !opts.sr_finetune;

  // Everything persisted with the student (classifier + upsampler), and the
  // subset that actually trains.
  std::vector<NamedParam> model_params = student.named_params();
  for (auto& p : sr.named_params()) model_params.push_back(p);
  std::vector<NamedParam> trainable_named = student.named_params();
  if (opts.sr_finetune)
    for (auto& p : sr.named_params()) trainable_named.push_back(p);
  std::vector<Tensor*> trainable;
  for (auto& p : trainable_named) trainable.push_back(p.tensor);
  AdamW opt(trainable, tc.adamw);

  int start_epoch = 0;
  if (!resume_from.empty())
    start_epoch = load_resume_ckpt(resume_from, model_params, opt, trainable_named, "student");

  // Frozen-module caches (teacher always frozen, upsampler usually): valid
  // whenever inputs are constant per sample, i.e. without augmentation.
  const bool cache_ok = !tc.hflip_augment;
  std::vector<Tensor> sr_cache;
  std::vector<Tensor> t_logits_cache;
  std::vector<HiddenStates> t_states_cache;
  if (cache_ok) {
    sr_cache.resize(lr_train.size());
    t_logits_cache.resize(lr_train.size());
    t_states_cache.resize(lr_train.size());
    parallel_for(int(lr_train.size()), [&](int i) {
      if (sr.frozen) sr_cache[size_t(i)] = sr.generate(lr_train.images[size_t(i)]);
      Tape::NoGrad ng;
      auto t_out = teacher.forward(hr_train.images[size_t(i)]);
      t_logits_cache[size_t(i)] = t_out.logits;
      t_states_cache[size_t(i)] = t_out.states;
    });
  }

  fs::create_directories(tc.out_dir);
  TrainResult res;
  res.best_ckpt = tc.out_dir + "/best.ckpt";
  res.last_ckpt = tc.out_dir + "/last.ckpt";
  res.csv_path = tc.out_dir + "/metrics.csv";
  res.best_val_acc = -1.0f;

  LoadedDataset val_view;
  val_view.class_names = lr_train.class_names;
  for (int i : val_idx) {
    val_view.images.push_back(lr_train.images[size_t(i)]);
    val_view.labels.push_back(lr_train.labels[size_t(i)]);
  }

  nlohmann::json sr_meta = {{"mode", opts.sr_mode == SrGenerator::Mode::bicubic ? "bicubic"
                                                                                : "residual"},
                            {"channels", opts.sr_channels},
                            {"blocks", opts.sr_blocks},
                            {"finetune", opts.sr_finetune}};

  BatchRunner runner(trainable);
  StudentPipeline eval_pipe{sr, student};  // shares parameter storage

  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const float lr = cosine_lr(epoch, tc.epochs, tc.lr_init);
    auto order = epoch_order(train_idx, tc.seed, epoch);

    EpochStats st = runner.run_epoch(order, tc.batch_size, opt, lr, [&](int idx, SampleOut& out) {
      const int label = lr_train.labels[size_t(idx)];
      Tensor lr_img = lr_train.images[size_t(idx)];
      Tensor hr_img = hr_train.images[size_t(idx)];
      if (tc.hflip_augment && flip_coin(tc.seed, epoch, idx)) {
        lr_img = hflip_image(lr_img);
        hr_img = hflip_image(hr_img);
      }

      Tensor t_logits;
      const HiddenStates* t_states = nullptr;
      HiddenStates t_states_local;
      if (cache_ok) {
        t_logits = t_logits_cache[size_t(idx)];
        t_states = &t_states_cache[size_t(idx)];
      } else {
        Tape::NoGrad ng;
        auto t_out = teacher.forward(hr_img);
        t_logits = t_out.logits;
        t_states_local = std::move(t_out.states);
        t_states = &t_states_local;
      }

      Tape tape;
      Tape::Recording rec(tape);
      Tensor x_s = (cache_ok && sr.frozen) ? sr_cache[size_t(idx)] : sr.generate(lr_img);
      auto s_out = student.forward(x_s);
      DistillLosses losses =
          assemble_losses(s_out.logits, s_out.states, t_logits, *t_states, label, opts.distill);
      tape.backward(losses.l_total);
      tape.harvest(runner.params, out.grads);
      out.ce = losses.l_ce.value();
      out.ld = losses.l_ld.value();
      out.hsd = losses.l_hsd.value();
      out.mkd = losses.l_mkd.value();
      out.total = losses.l_total.value();
      out.correct = predict(s_out.logits) == label;
    });
    st.epoch = epoch;
    st.val_acc = val_view.size() ? evaluate_top1(eval_pipe, val_view) : st.train_acc;
    res.log.push_back(st);

    nlohmann::json meta = base_meta("student", cfg, tc.seed);
    meta["sr"] = sr_meta;
    meta["distill"] = {{"alpha", opts.distill.alpha},
                       {"beta", opts.distill.beta},
                       {"delta_temp", opts.distill.delta_temp},
                       {"use_ld", opts.distill.use_ld},
                       {"use_hsd", opts.distill.use_hsd}};
    meta["train"] = {{"epoch", epoch},
                     {"step", opt.step_count()},
                     {"best_val_acc", res.best_val_acc}};
    save_resume_ckpt(res.last_ckpt, meta, model_params, opt, trainable_named);
    if (st.val_acc > res.best_val_acc) {
      res.best_val_acc = st.val_acc;
      meta["train"]["best_val_acc"] = res.best_val_acc;
      save_checkpoint(res.best_ckpt, meta, model_params);
    }
    write_metrics_csv(res.csv_path, res.log);
  }
  return res;
}

StudentPipeline load_student(const std::string& ckpt_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.meta.value("kind", "") != "student")
    throw ContractError("not a student checkpoint: " + ckpt_path);
  StudentPipeline pipe;
  pipe.vim = VimNet(vim_config_from_json(ck.meta.at("vim")));
  pipe.vim.init(0);
  const auto& srj = ck.meta.at("sr");
  const std::string mode = srj.at("mode").get<std::string>();
  pipe.sr = SrGenerator(mode == "bicubic" ? SrGenerator::Mode::bicubic
                                          : SrGenerator::Mode::residual,
                        srj.at("channels").get<int>(), srj.at("blocks").get<int>());
  pipe.sr.init(0);
  std::vector<NamedParam> dst = pipe.vim.named_params();
  for (auto& p : pipe.sr.named_params()) dst.push_back(p);
  load_into(ck, dst, {"opt."});
  pipe.sr.frozen = true;
  return pipe;
}

}  // namespace vimd
