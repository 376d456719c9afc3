// vimd: low-resolution fine-grained classification toolkit.
//
// Subcommands: make-toy-data, synth-lr, train-teacher, train-student, eval,
// audit, gradcheck, sweep-beta. Exit codes: 0 success, 1 usage/config error,
// 2 contract/validation error, 3 gate failure.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "vimd/dataset.hpp"
#include "vimd/gradsuite.hpp"
#include "vimd/image_io.hpp"
#include "vimd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vimd;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void write_manifest(const std::string& out_dir, const std::string& command, const json& config,
                    uint64_t seed, double elapsed_s, const std::vector<std::string>& outputs) {
  fs::create_directories(out_dir);
  json m{{"command", command},
         {"config", config},
         {"seed", seed},
         {"tool_version", version_string()},
         {"elapsed_seconds", elapsed_s},
         {"outputs", outputs}};
  std::ofstream f(out_dir + "/manifest.json");
  f << m.dump(2) << "\n";
}

// Named architecture/training profiles; CLI flags override fields.
struct Profile {
  VimConfig vim;
  TrainConfig train;
};

Profile profile_by_name(const std::string& name) {
  Profile p;
  if (name == "full" || name == "vim-tiny") {
    // D=192, N=24, J=16 at 224^2; published training recipe
    p.train.epochs = 200;
    p.train.lr_init = 1e-6f;
    return p;
  }
  if (name == "toy") {
    p.vim.embed_dim = 64;
    p.vim.layers = 4;
    p.vim.patch = 8;
    p.vim.input_side = 64;
    p.vim.num_classes = 4;
    p.train.epochs = 30;
    p.train.lr_init = 3e-4f;
    return p;
  }
  throw UsageError("unknown profile '" + name + "' (use full|toy)");
}

struct VimFlags {
  std::string profile = "toy";
  int embed_dim = -1, layers = -1, patch = -1, input_side = -1, classes = -1;
  int state_dim = -1, expand = -1, conv_width = -1;
  bool no_final_norm = false, literal_gate = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--profile", profile, "base profile: toy|full")->capture_default_str();
    cmd->add_option("--embed-dim", embed_dim, "token width D");
    cmd->add_option("--layers", layers, "encoder depth N");
    cmd->add_option("--patch", patch, "patch size J");
    cmd->add_option("--input-side", input_side, "classifier input resolution");
    cmd->add_option("--classes", classes, "number of classes");
    cmd->add_option("--state-dim", state_dim, "SSM state size S");
    cmd->add_option("--expand", expand, "inner expansion factor");
    cmd->add_option("--conv-width", conv_width, "depthwise conv width");
    cmd->add_flag("--no-final-norm", no_final_norm, "skip the class-token norm before the head");
    cmd->add_flag("--literal-gate", literal_gate, "gate with silu(H) directly (needs expand=1)");
  }

  Profile resolve() const {
    Profile p = profile_by_name(profile);
    if (embed_dim > 0) p.vim.embed_dim = embed_dim;
    if (layers >= 0) p.vim.layers = layers;
    if (patch > 0) p.vim.patch = patch;
    if (input_side > 0) p.vim.input_side = input_side;
    if (classes > 0) p.vim.num_classes = classes;
    if (state_dim > 0) p.vim.state_dim = state_dim;
    if (expand > 0) p.vim.expand = expand;
    if (conv_width > 0) p.vim.conv_width = conv_width;
    if (no_final_norm) p.vim.final_norm = false;
    if (literal_gate) p.vim.literal_gate = true;
    return p;
  }
};

struct TrainFlags {
  int epochs = -1;
  double lr = -1;
  int batch_size = -1;
  uint64_t seed = 0;
  double val_fraction = -1;
  bool hflip = false;
  double weight_decay = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--lr", lr, "initial learning rate (cosine-annealed)");
    cmd->add_option("--batch-size", batch_size, "samples per optimizer step");
    cmd->add_option("--seed", seed, "run seed")->capture_default_str();
    cmd->add_option("--val-fraction", val_fraction, "stratified validation share");
    cmd->add_flag("--hflip", hflip, "random horizontal flip augmentation");
    cmd->add_option("--weight-decay", weight_decay, "AdamW decoupled decay");
  }

  void apply(TrainConfig& tc) const {
    if (epochs > 0) tc.epochs = epochs;
    if (lr > 0) tc.lr_init = float(lr);
    if (batch_size > 0) tc.batch_size = batch_size;
    tc.seed = seed;
    if (val_fraction >= 0) tc.val_fraction = float(val_fraction);
    tc.hflip_augment = hflip;
    if (weight_decay >= 0) tc.adamw.weight_decay = float(weight_decay);
  }
};

struct DistillFlags {
  double alpha = -1, beta = -1, delta = -1;
  bool no_ld = false, no_hsd = false, kl_teacher_first = false, kl_temp_sq = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--alpha", alpha, "combined-loss weight (default 1)");
    cmd->add_option("--beta", beta, "hidden-state loss weight (default 20)");
    cmd->add_option("--delta", delta, "logit-loss temperature (default 4)");
    cmd->add_flag("--no-ld", no_ld, "disable the logit distillation term");
    cmd->add_flag("--no-hsd", no_hsd, "disable the hidden-state distillation term");
    cmd->add_flag("--kl-teacher-first", kl_teacher_first, "conventional KL argument order");
    cmd->add_flag("--kl-temp-sq", kl_temp_sq, "classical temperature^2 loss rescale");
  }

  DistillConfig resolve() const {
    DistillConfig d;
    if (alpha >= 0) d.alpha = float(alpha);
    if (beta >= 0) d.beta = float(beta);
    if (delta > 0) d.delta_temp = float(delta);
    d.use_ld = !no_ld;
    d.use_hsd = !no_hsd;
    d.kl_teacher_first = kl_teacher_first;
    d.kl_temp_sq = kl_temp_sq;
    d.validate();
    return d;
  }
};

struct SrFlags {
  std::string mode = "bicubic";
  int channels = 32, blocks = 4, pretrain_epochs = 0;
  bool finetune = false;
  std::string init_ckpt;

  void attach(CLI::App* cmd) {
    cmd->add_option("--sr-mode", mode, "bicubic|residual")->capture_default_str();
    cmd->add_option("--sr-channels", channels, "residual generator width");
    cmd->add_option("--sr-blocks", blocks, "residual blocks");
    cmd->add_option("--sr-pretrain-epochs", pretrain_epochs,
                    "L2 pre-training epochs before freezing");
    cmd->add_flag("--sr-finetune", finetune, "train the upsampler jointly");
    cmd->add_option("--sr-init", init_ckpt, "pre-trained generator checkpoint to start from");
  }

  void apply(StudentOptions& so) const {
    if (mode == "bicubic")
      so.sr_mode = SrGenerator::Mode::bicubic;
    else if (mode == "residual")
      so.sr_mode = SrGenerator::Mode::residual;
    else
      throw UsageError("--sr-mode must be bicubic or residual");
    so.sr_channels = channels;
    so.sr_blocks = blocks;
    so.sr_pretrain_epochs = pretrain_epochs;
    so.sr_finetune = finetune;
    so.sr_init_ckpt = init_ckpt;
  }
};

json train_config_json(const VimConfig& vim, const TrainConfig& tc) {
  return json{{"vim", vim_config_to_json(vim)},
              {"epochs", tc.epochs},
              {"lr_init", tc.lr_init},
              {"batch_size", tc.batch_size},
              {"seed", tc.seed},
              {"val_fraction", tc.val_fraction},
              {"hflip", tc.hflip_augment},
              {"weight_decay", tc.adamw.weight_decay}};
}

void require_dir(const std::string& path, const char* what) {
  if (!fs::is_directory(path))
    throw UsageError(std::string(what) + " directory not found: " + path);
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path))
    throw UsageError(std::string(what) + " not found: " + path);
}

// ---------------------------------------------------------------------------
// subcommand bodies

int cmd_eval(const std::string& ckpt, const std::string& data_root, const std::string& out_dir) {
  require_file(ckpt, "checkpoint");
  require_dir(data_root, "dataset");
  Timer timer;

  Checkpoint probe = load_checkpoint(ckpt);
  const std::string kind = probe.meta.value("kind", "");
  float top1 = 0.0f;
  size_t n = 0;
  if (kind == "teacher") {
    VimNet net = load_teacher(ckpt);
    LoadedDataset ds = LoadedDataset::load_dir(data_root);
    n = ds.size();
    top1 = evaluate_top1(net, ds);
  } else if (kind == "student") {
    StudentPipeline pipe = load_student(ckpt);
    LoadedDataset ds = LoadedDataset::load_dir(data_root);
    n = ds.size();
    top1 = evaluate_top1(pipe, ds);
  } else {
    throw ContractError("checkpoint kind '" + kind + "' is not evaluable");
  }

  std::printf("top1 %.6f (%zu samples)\n", double(top1), n);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    json summary{{"top1", top1}, {"samples", n}, {"ckpt", ckpt}, {"data_root", data_root}};
    std::ofstream(out_dir + "/eval.json") << summary.dump(2) << "\n";
    write_manifest(out_dir, "eval", summary, 0, timer.seconds(), {out_dir + "/eval.json"});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"low-resolution fine-grained classification toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file");

  // --- make-toy-data
  auto* mk = app.add_subcommand("make-toy-data", "synthesize the procedural texture dataset");
  std::string mk_out = "data/toy";
  ToyDataParams mk_params;
  mk->add_option("--out", mk_out, "dataset root (train/ and test/ written below)")
      ->capture_default_str();
  mk->add_option("--classes", mk_params.classes)->capture_default_str();
  mk->add_option("--train-per-class", mk_params.train_per_class)->capture_default_str();
  mk->add_option("--test-per-class", mk_params.test_per_class)->capture_default_str();
  mk->add_option("--size", mk_params.side, "image side in pixels")->capture_default_str();
  mk->add_option("--seed", mk_params.seed)->capture_default_str();

  // --- synth-lr
  auto* sl = app.add_subcommand("synth-lr", "bicubically downsample a dataset tree");
  std::string sl_root;
  int sl_size = 56;
  sl->add_option("--data-root", sl_root, "source dataset root")->required();
  sl->add_option("--size", sl_size, "target side")->capture_default_str();

  // --- train-teacher
  auto* tt = app.add_subcommand("train-teacher", "train the full-resolution classifier");
  std::string tt_root, tt_out = "runs/teacher", tt_resume;
  VimFlags tt_vim;
  TrainFlags tt_train;
  tt->add_option("--data-root", tt_root, "HR training dataset root")->required();
  tt->add_option("--out", tt_out, "output directory")->capture_default_str();
  tt->add_option("--resume", tt_resume, "resume from last.ckpt");
  tt_vim.attach(tt);
  tt_train.attach(tt);

  // --- train-student
  auto* ts = app.add_subcommand("train-student",
                                "train the LR pipeline under teacher supervision");
  std::string ts_lr_root, ts_hr_root, ts_teacher, ts_out = "runs/student", ts_resume;
  TrainFlags ts_train;
  DistillFlags ts_distill;
  SrFlags ts_sr;
  ts->add_option("--lr-root", ts_lr_root, "LR training dataset root")->required();
  ts->add_option("--hr-root", ts_hr_root, "paired HR dataset root")->required();
  ts->add_option("--teacher-ckpt", ts_teacher, "trained teacher checkpoint")->required();
  ts->add_option("--out", ts_out, "output directory")->capture_default_str();
  ts->add_option("--resume", ts_resume, "resume from last.ckpt");
  ts_train.attach(ts);
  ts_distill.attach(ts);
  ts_sr.attach(ts);

  // --- eval
  auto* ev = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on a dataset");
  std::string ev_ckpt, ev_root, ev_out;
  ev->add_option("--ckpt", ev_ckpt, "teacher or student checkpoint")->required();
  ev->add_option("--data-root", ev_root, "evaluation dataset root (LR for students)")
      ->required();
  ev->add_option("--out", ev_out, "directory for eval.json + manifest");

  // --- audit
  auto* au = app.add_subcommand("audit", "parameter count and FLOPs estimate of a config");
  VimFlags au_vim;
  au_vim.profile = "full";
  double au_expect_params = -1, au_tol_params = 0.05;
  double au_expect_flops = -1, au_tol_flops = 0.25;
  au_vim.attach(au);
  au->add_option("--expect-params", au_expect_params, "gate: expected parameter count");
  au->add_option("--tol-params", au_tol_params, "relative tolerance")->capture_default_str();
  au->add_option("--expect-flops", au_expect_flops, "gate: expected forward FLOPs");
  au->add_option("--tol-flops", au_tol_flops, "relative tolerance")->capture_default_str();

  // --- gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of every primitive");
  uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed)->capture_default_str();

  // --- sweep-beta
  auto* sw = app.add_subcommand("sweep-beta", "train students across hidden-state loss weights");
  std::string sw_lr_root, sw_hr_root, sw_teacher, sw_eval_root, sw_out = "runs/sweep";
  std::vector<double> sw_betas{1, 10, 20, 30};
  TrainFlags sw_train;
  DistillFlags sw_distill;
  SrFlags sw_sr;
  sw->add_option("--lr-root", sw_lr_root)->required();
  sw->add_option("--hr-root", sw_hr_root)->required();
  sw->add_option("--teacher-ckpt", sw_teacher)->required();
  sw->add_option("--eval-root", sw_eval_root, "LR dataset for the reported accuracy")
      ->required();
  sw->add_option("--out", sw_out)->capture_default_str();
  sw->add_option("--betas", sw_betas, "weights to sweep")->capture_default_str();
  sw_train.attach(sw);
  sw_distill.attach(sw);
  sw_sr.attach(sw);

  try {
    app.parse(argc, argv);

    if (*mk) {
      Timer timer;
      make_toy_data(mk_out, mk_params);
      json cfg{{"out", mk_out},         {"classes", mk_params.classes},
               {"train_per_class", mk_params.train_per_class},
               {"test_per_class", mk_params.test_per_class},
               {"size", mk_params.side}};
      write_manifest(mk_out, "make-toy-data", cfg, mk_params.seed, timer.seconds(),
                     {mk_out + "/train", mk_out + "/test"});
      std::printf("toy dataset written under %s\n", mk_out.c_str());
      return 0;
    }

    if (*sl) {
      require_dir(sl_root, "dataset");
      Timer timer;
      int written = synth_lr(sl_root, sl_size);
      const std::string out_root = lr_root_for(sl_root, sl_size);
      write_manifest(out_root, "synth-lr", json{{"data_root", sl_root}, {"size", sl_size}}, 0,
                     timer.seconds(), {out_root});
      std::printf("synthesized %d file(s) under %s\n", written, out_root.c_str());
      return 0;
    }

    if (*tt) {
      require_dir(tt_root, "dataset");
      if (!tt_resume.empty()) require_file(tt_resume, "resume checkpoint");
      Profile prof = tt_vim.resolve();
      tt_train.apply(prof.train);
      prof.train.out_dir = tt_out;
      prof.vim.validate();
      prof.train.validate();

      Timer timer;
      LoadedDataset ds = LoadedDataset::load_dir(tt_root);
      if (tt_vim.classes <= 0) prof.vim.num_classes = ds.num_classes();
      TrainResult res = train_teacher(ds, prof.vim, prof.train, tt_resume);
      write_manifest(tt_out, "train-teacher", train_config_json(prof.vim, prof.train),
                     prof.train.seed, timer.seconds(),
                     {res.best_ckpt, res.last_ckpt, res.csv_path});
      std::printf("teacher done: best val %.4f, checkpoints in %s\n", double(res.best_val_acc),
                  tt_out.c_str());
      return 0;
    }

    if (*ts) {
      require_dir(ts_lr_root, "LR dataset");
      require_dir(ts_hr_root, "HR dataset");
      require_file(ts_teacher, "teacher checkpoint");
      if (!ts_resume.empty()) require_file(ts_resume, "resume checkpoint");

      TrainConfig tc;
      tc.epochs = 30;
      tc.lr_init = 3e-4f;
      ts_train.apply(tc);
      tc.out_dir = ts_out;
      StudentOptions so;
      so.distill = ts_distill.resolve();
      ts_sr.apply(so);

      Timer timer;
      LoadedDataset lr = LoadedDataset::load_dir(ts_lr_root);
      LoadedDataset hr = LoadedDataset::load_dir(ts_hr_root);
      TrainResult res = train_student(lr, hr, ts_teacher, tc, so, ts_resume);
      json cfg{{"lr_root", ts_lr_root},
               {"hr_root", ts_hr_root},
               {"teacher_ckpt", ts_teacher},
               {"epochs", tc.epochs},
               {"lr_init", tc.lr_init},
               {"batch_size", tc.batch_size},
               {"alpha", so.distill.alpha},
               {"beta", so.distill.beta},
               {"delta_temp", so.distill.delta_temp},
               {"use_ld", so.distill.use_ld},
               {"use_hsd", so.distill.use_hsd},
               {"sr_mode", ts_sr.mode}};
      write_manifest(ts_out, "train-student", cfg, tc.seed, timer.seconds(),
                     {res.best_ckpt, res.last_ckpt, res.csv_path});
      std::printf("student done: best val %.4f, checkpoints in %s\n", double(res.best_val_acc),
                  ts_out.c_str());
      return 0;
    }

    if (*ev) return cmd_eval(ev_ckpt, ev_root, ev_out);

    if (*au) {
      Profile prof = au_vim.resolve();
      prof.vim.validate();
      int64_t params = param_count(prof.vim);
      double flops = flops_estimate(prof.vim);
      std::printf("params %lld (%.4g M)\n", (long long)params, double(params) / 1e6);
      std::printf("flops  %.4g (%.4g G) at %d^2\n", flops, flops / 1e9, prof.vim.input_side);

      bool ok = true;
      if (au_expect_params > 0) {
        double rel = std::abs(double(params) - au_expect_params) / au_expect_params;
        std::printf("params gate: expected %.4g +- %.0f%% -> %s (off by %.2f%%)\n",
                    au_expect_params, au_tol_params * 100, rel <= au_tol_params ? "pass" : "FAIL",
                    rel * 100);
        ok = ok && rel <= au_tol_params;
      }
      if (au_expect_flops > 0) {
        double rel = std::abs(flops - au_expect_flops) / au_expect_flops;
        std::printf("flops gate: expected %.4g +- %.0f%% -> %s (off by %.2f%%)\n",
                    au_expect_flops, au_tol_flops * 100, rel <= au_tol_flops ? "pass" : "FAIL",
                    rel * 100);
        ok = ok && rel <= au_tol_flops;
      }
      if (!ok) throw GateError("audit gate failed");
      return 0;
    }

    if (*gc) {
      auto rows = gradcheck_suite(gc_seed);
      bool ok = true;
      for (const auto& r : rows) {
        std::printf("%-16s max rel err %.3e (tol %.0e) %s\n", r.component.c_str(),
                    double(r.max_rel), double(r.tol), r.ok() ? "ok" : "FAIL");
        ok = ok && r.ok();
      }
      if (!ok) throw GateError("gradient check exceeded tolerance");
      std::printf("all %zu components within tolerance\n", rows.size());
      return 0;
    }

    if (*sw) {
      require_dir(sw_lr_root, "LR dataset");
      require_dir(sw_hr_root, "HR dataset");
      require_dir(sw_eval_root, "eval dataset");
      require_file(sw_teacher, "teacher checkpoint");

      TrainConfig tc;
      tc.epochs = 30;
      tc.lr_init = 3e-4f;
      sw_train.apply(tc);
      StudentOptions so;
      so.distill = sw_distill.resolve();
      sw_sr.apply(so);

      Timer timer;
      LoadedDataset lr = LoadedDataset::load_dir(sw_lr_root);
      LoadedDataset hr = LoadedDataset::load_dir(sw_hr_root);
      LoadedDataset ev_ds = LoadedDataset::load_dir(sw_eval_root);

      fs::create_directories(sw_out);
      std::ofstream csv(sw_out + "/sweep.csv");
      csv << "beta,top1,best_val_acc,final_l_total\n";
      for (double beta : sw_betas) {
        StudentOptions run_so = so;
        run_so.distill.beta = float(beta);
        TrainConfig run_tc = tc;
        run_tc.out_dir = sw_out + "/beta_" + std::to_string(int(beta));
        TrainResult res = train_student(lr, hr, sw_teacher, run_tc, run_so, "");
        StudentPipeline pipe = load_student(res.best_ckpt);
        float top1 = evaluate_top1(pipe, ev_ds);
        float final_total = res.log.empty() ? 0.0f : res.log.back().l_total;
        if (!std::isfinite(top1) || !std::isfinite(final_total))
          throw GateError("sweep produced a non-finite result at beta " + std::to_string(beta));
        char line[128];
        std::snprintf(line, sizeof line, "%g,%.9g,%.9g,%.9g\n", beta, double(top1),
                      double(res.best_val_acc), double(final_total));
        csv << line;
        std::printf("beta %-6g top1 %.4f\n", beta, double(top1));
      }
      write_manifest(sw_out, "sweep-beta",
                     json{{"betas", sw_betas}, {"epochs", tc.epochs}, {"seed", tc.seed}},
                     tc.seed, timer.seconds(), {sw_out + "/sweep.csv"});
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const GateError& e) {
    std::fprintf(stderr, "gate: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
