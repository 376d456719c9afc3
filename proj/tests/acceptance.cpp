// Acceptance suite: one criterion per invocation, one PASS/FAIL line each.
//
//   acceptance <criterion> <workspace-dir> [vimd-binary-path]
//
// Criteria: prepare scan grad audit structure ablation sweep determinism
// checkpoint. `prepare` builds the shared toy workspace (dataset, LR cache,
// trained teacher) the heavy criteria reuse.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "vimd/dataset.hpp"
#include "vimd/gradsuite.hpp"
#include "vimd/train.hpp"

using namespace vimd;
namespace fs = std::filesystem;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

int report(const std::string& name, bool ok, const std::string& detail, double secs) {
  std::printf("%s - %s (%s, %.1fs)\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str(), secs);
  return ok ? 0 : 1;
}

// Ablation/teacher hyperparameters shared by prepare/ablation/sweep/determinism.
constexpr int kHrSide = 64;
constexpr int kLrSide = 16;
constexpr int kTrainPerClass = 200;
constexpr int kTestPerClass = 50;
constexpr int kTeacherEpochs = 30;
constexpr int kStudentEpochs = 10;
constexpr float kToyLr = 3e-4f;

VimConfig toy_vim() {
  VimConfig cfg;
  cfg.embed_dim = 64;
  cfg.layers = 4;
  cfg.patch = 8;
  cfg.input_side = kHrSide;
  cfg.num_classes = 4;
  return cfg;
}

std::string hr_train(const std::string& ws) { return ws + "/toy/train"; }
std::string lr_train(const std::string& ws) { return ws + "/toy/train_lr" + std::to_string(kLrSide); }
std::string lr_test(const std::string& ws) { return ws + "/toy/test_lr" + std::to_string(kLrSide); }
std::string teacher_ckpt(const std::string& ws) { return ws + "/teacher/best.ckpt"; }

TrainConfig student_tc(uint64_t seed, const std::string& out_dir, int epochs = kStudentEpochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.lr_init = kToyLr;
  tc.batch_size = 16;
  tc.seed = seed;
  tc.out_dir = out_dir;
  return tc;
}

// ---------------------------------------------------------------------------

int run_prepare(const std::string& ws) {
  Timer timer;
  fs::create_directories(ws);
  const std::string marker = ws + "/.prepared";
  if (fs::exists(marker) && fs::exists(teacher_ckpt(ws))) {
    return report("prepare (cached)", true, "workspace reused", timer.seconds());
  }
  ToyDataParams p;
  p.train_per_class = kTrainPerClass;
  p.test_per_class = kTestPerClass;
  p.side = kHrSide;
  p.seed = 0;
  make_toy_data(ws + "/toy", p);
  synth_lr(ws + "/toy/train", kLrSide);
  synth_lr(ws + "/toy/test", kLrSide);

  LoadedDataset hr = LoadedDataset::load_dir(hr_train(ws));
  TrainConfig tc;
  tc.epochs = kTeacherEpochs;
  tc.lr_init = kToyLr;
  tc.seed = 0;
  tc.out_dir = ws + "/teacher";
  TrainResult res = train_teacher(hr, toy_vim(), tc);
  std::ofstream(marker) << "ok\n";
  char detail[128];
  std::snprintf(detail, sizeof detail, "teacher best val %.3f over %d epochs",
                double(res.best_val_acc), kTeacherEpochs);
  return report("prepare", true, detail, timer.seconds());
}

// Criterion 1: selective scan equals the naive per-step recurrence within
// 1e-5 absolute over a (T,E,S) grid up to (64,8,16), >= 20 seeds, < 10 s.
int run_scan(const std::string&) {
  Timer timer;
  float worst = 0;
  int cases = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    for (int t : {1, 3, 16, 64})
      for (int e : {1, 4, 8})
        for (int s : {1, 8, 16}) {
          Rng rng(mix_seed(seed, hash_str("scan-acc") + uint64_t(t * 10000 + e * 100 + s)));
          Tensor u = oracle::rand_tensor({t, e}, rng);
          Tensor delta = oracle::rand_tensor({t, e}, rng, 0.05f, 1.0f);
          Tensor A = oracle::rand_tensor({e, s}, rng, -2.0f, -0.05f);
          Tensor B = oracle::rand_tensor({t, s}, rng);
          Tensor C = oracle::rand_tensor({t, s}, rng);
          Tensor D = oracle::rand_tensor({e}, rng);
          Tensor got = selective_scan(u, delta, A, B, C, D);
          Tensor want = oracle::naive_selective_scan(u, delta, A, B, C, D);
          worst = std::max(worst, oracle::max_abs_diff(got, want));
          ++cases;
        }
  }
  char detail[128];
  std::snprintf(detail, sizeof detail, "max |impl-oracle| %.2e over %d cases", double(worst),
                cases);
  return report("scan oracle equivalence", worst < 1e-5f && timer.seconds() < 10.0, detail,
                timer.seconds());
}

// Criterion 2: every primitive and the full combined objective pass
// finite-difference checks (1e-3, 5e-3 for the full loss) in < 60 s.
int run_grad(const std::string&) {
  Timer timer;
  auto rows = gradcheck_suite(0);
  bool ok = true;
  float worst_prim = 0, full = 0;
  for (const auto& r : rows) {
    ok = ok && r.ok();
    if (r.component == "full_loss")
      full = r.max_rel;
    else
      worst_prim = std::max(worst_prim, r.max_rel);
    if (!r.ok()) std::printf("  component %s: %.3e > %.0e\n", r.component.c_str(),
                             double(r.max_rel), double(r.tol));
  }
  ok = ok && timer.seconds() < 60.0;
  char detail[160];
  std::snprintf(detail, sizeof detail, "%zu components, worst primitive %.2e, full loss %.2e",
                rows.size(), double(worst_prim), double(full));
  return report("gradient suite", ok, detail, timer.seconds());
}

// Criterion 3: full-size profile audits at 6.99 M params +-5% and 0.50 G
// FLOPs +-25%.
int run_audit(const std::string&) {
  Timer timer;
  VimConfig cfg;  // D=192, N=24, J=16, S=16, expand=2, 1000 classes, 224^2
  const double params = double(param_count(cfg));
  const double flops = flops_estimate(cfg);
  const double p_rel = std::abs(params - 6.99e6) / 6.99e6;
  const double f_rel = std::abs(flops - 0.50e9) / 0.50e9;
  bool p_ok = p_rel <= 0.05;
  bool f_ok = f_rel <= 0.25;
  char detail[200];
  std::snprintf(detail, sizeof detail,
                "params %.4g M (off 6.99 M by %.1f%%: %s); flops %.4g G (off 0.50 G by %.0f%%: %s)",
                params / 1e6, p_rel * 100, p_ok ? "ok" : "out",
                flops / 1e9, f_rel * 100, f_ok ? "ok" : "out");
  return report("parameter and flops audit", p_ok && f_ok, detail, timer.seconds());
}

// Criterion 4: structural identities, exact or within 1e-7, < 30 s.
int run_structure(const std::string&) {
  Timer timer;
  bool ok = true;
  auto expect = [&](bool cond, const char* what) {
    if (!cond) {
      ok = false;
      std::printf("  identity failed: %s\n", what);
    }
  };

  {  // residual identity: zeroed output projection makes a block transparent
    Rng rng(1);
    VimBlockParams blk;
    blk.init(rng, 8, 2, 4, 1, 4);
    blk.W_out = Tensor::param({16, 8});
    Tensor h = oracle::rand_tensor({6, 8}, rng);
    expect(oracle::bytes_equal(vim_block(h, blk), h), "residual identity");
  }
  {  // head locality + class-token middle index
    VimConfig cfg;
    cfg.embed_dim = 8;
    cfg.layers = 1;
    cfg.patch = 16;
    cfg.input_side = 64;  // Z = 16, cls at 8
    cfg.num_classes = 5;
    cfg.state_dim = 4;
    expect(cfg.cls_index() == cfg.patch_count() / 2, "class token at Z/2");
    VimConfig full;
    expect(full.patch_count() == 196 && full.cls_index() == 98, "full-size cls index 98");

    VimNet net(cfg);
    net.init(4);
    Rng rng(2);
    Tensor h_last = oracle::rand_tensor({cfg.tokens(), 8}, rng);
    Tensor logits = net.classify_head(h_last);
    Tensor moved = h_last;
    Tensor bumped({cfg.tokens(), 8});
    std::copy_n(h_last.data(), h_last.size(), bumped.data());
    for (int t = 0; t < cfg.tokens(); ++t) {
      if (t == cfg.cls_index()) continue;
      for (int d = 0; d < 8; ++d) bumped.at({t, d}) += rng.uniform(-2.0f, 2.0f);
    }
    expect(oracle::bytes_equal(net.classify_head(bumped), logits), "head locality");
  }
  {  // zero-at-equality: KL and hidden-state L2
    Rng rng(3);
    Tensor logits = oracle::rand_tensor({7}, rng, -3.0f, 3.0f);
    expect(kl_tempered(logits, logits, 4.0f).value() < 1e-7f, "KL zero at equality");
    HiddenStates hs;
    hs.layers = {oracle::rand_tensor({5, 4}, rng), oracle::rand_tensor({5, 4}, rng)};
    expect(loss_hsd(hs, hs).value() == 0.0f, "L2 zero at equality");
  }
  {  // composition identities across (alpha, beta) >= 0
    Rng rng(4);
    for (int k = 0; k < 50; ++k) {
      DistillConfig dc;
      dc.alpha = rng.uniform(0.0f, 3.0f);
      dc.beta = rng.uniform(0.0f, 40.0f);
      Tensor sl = oracle::rand_tensor({6}, rng, -2, 2);
      Tensor tl = oracle::rand_tensor({6}, rng, -2, 2);
      HiddenStates ss, ts;
      ss.layers = {oracle::rand_tensor({4, 3}, rng), oracle::rand_tensor({4, 3}, rng)};
      ts.layers = {oracle::rand_tensor({4, 3}, rng), oracle::rand_tensor({4, 3}, rng)};
      DistillLosses L = assemble_losses(sl, ss, tl, ts, 2, dc);
      // exact recomposition in f32; volatile blocks fma contraction so the
      // reference rounds exactly like the composed graph
      volatile float mkd_prod = dc.beta * L.l_hsd.value();
      float want_mkd = L.l_ld.value() + mkd_prod;
      volatile float total_prod = dc.alpha * L.l_mkd.value();
      float want_total = L.l_ce.value() + total_prod;
      expect(L.l_mkd.value() == want_mkd, "mkd = ld + beta*hsd");
      expect(L.l_total.value() == want_total, "total = ce + alpha*mkd");
    }
  }
  return report("structural identities", ok && timer.seconds() < 30.0, "5 identity families",
                timer.seconds());
}

// Criterion 5: toy ablation trend over 5 seeds:
// full >= ld-only >= ce-only and full - ce >= 1 accuracy point.
int run_ablation(const std::string& ws) {
  Timer timer;
  LoadedDataset hr = LoadedDataset::load_dir(hr_train(ws));
  LoadedDataset lr = LoadedDataset::load_dir(lr_train(ws));
  LoadedDataset test = LoadedDataset::load_dir(lr_test(ws));

  struct Config {
    const char* name;
    bool ld, hsd;
  };
  const Config configs[3] = {{"ce", false, false}, {"ld", true, false}, {"full", true, true}};
  double mean[3] = {0, 0, 0};

  std::ofstream csv(ws + "/ablation.csv");
  csv << "config,seed,top1\n";
  for (int c = 0; c < 3; ++c) {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      StudentOptions so;
      so.distill.use_ld = configs[c].ld;
      so.distill.use_hsd = configs[c].hsd;
      std::string out = ws + "/ablation/" + configs[c].name + "_s" + std::to_string(seed);
      TrainResult res = train_student(lr, hr, teacher_ckpt(ws), student_tc(seed, out), so);
      StudentPipeline pipe = load_student(res.best_ckpt);
      float top1 = evaluate_top1(pipe, test);
      mean[c] += double(top1) / 5.0;
      csv << configs[c].name << "," << seed << "," << top1 << "\n";
      csv.flush();
      std::printf("  %s seed %llu: top1 %.4f\n", configs[c].name,
                  (unsigned long long)seed, double(top1));
    }
  }
  bool ordered = mean[2] >= mean[1] && mean[1] >= mean[0];
  bool gap = (mean[2] - mean[0]) >= 0.01;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "mean top1: ce %.4f, +ld %.4f, +ld+hsd %.4f (gap %.1f pts)", mean[0], mean[1],
                mean[2], (mean[2] - mean[0]) * 100);
  return report("toy ablation trend", ordered && gap, detail, timer.seconds());
}

// Criterion 6: the sweep-beta CLI protocol completes over {1,10,20,30} with
// finite accuracies and no NaN losses.
int run_sweep(const std::string& ws, const std::string& vimd_bin) {
  Timer timer;
  const std::string out = ws + "/sweep";
  std::string cmd = vimd_bin + " sweep-beta --lr-root " + lr_train(ws) + " --hr-root " +
                    hr_train(ws) + " --teacher-ckpt " + teacher_ckpt(ws) + " --eval-root " +
                    lr_test(ws) + " --out " + out + " --epochs " +
                    std::to_string(kStudentEpochs) + " --seed 1 > " + out + "_log.txt 2>&1";
  fs::create_directories(ws);
  int rc = std::system(cmd.c_str());

  bool ok = rc == 0;
  int rows = 0;
  if (ok) {
    std::ifstream csv(out + "/sweep.csv");
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
      ++rows;
      if (line.find("nan") != std::string::npos || line.find("inf") != std::string::npos)
        ok = false;
    }
    ok = ok && rows == 4;
  }
  char detail[96];
  std::snprintf(detail, sizeof detail, "exit %d, %d finite rows", rc, rows);
  return report("beta sweep protocol", ok, detail, timer.seconds());
}

// Criterion 7: two identical seeded runs of the ablation pipeline in
// deterministic mode produce bit-identical loss CSVs.
int run_determinism(const std::string& ws) {
  Timer timer;
  setenv("VIMD_DETERMINISTIC", "1", 1);
  LoadedDataset hr = LoadedDataset::load_dir(hr_train(ws));
  LoadedDataset lr = LoadedDataset::load_dir(lr_train(ws));

  auto run_once = [&](const std::string& out) {
    StudentOptions so;  // full objective
    TrainResult res = train_student(lr, hr, teacher_ckpt(ws), student_tc(3, out, 3), so);
    std::ifstream in(res.csv_path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  std::string a = run_once(ws + "/det_a");
  std::string b = run_once(ws + "/det_b");
  bool ok = !a.empty() && a == b;
  return report("determinism", ok,
                ok ? "loss CSVs byte-identical" : "loss CSVs differ", timer.seconds());
}

// Criterion 8: checkpoint round trips: save->load->forward bit-identical,
// save->load->save byte-identical.
int run_checkpoint(const std::string& ws) {
  Timer timer;
  fs::create_directories(ws);
  VimConfig cfg = toy_vim();
  VimNet net(cfg);
  net.init(99);
  Rng rng(5);
  Tensor img = oracle::rand_tensor({3, kHrSide, kHrSide}, rng, 0.0f, 1.0f);
  Tensor before = net.forward(img).logits;

  const std::string p1 = ws + "/rt1.ckpt", p2 = ws + "/rt2.ckpt";
  nlohmann::json meta = {{"kind", "teacher"},
                         {"vim", vim_config_to_json(cfg)},
                         {"train", {{"epoch", 0}, {"step", 0}, {"best_val_acc", 0.0}}}};
  save_checkpoint(p1, meta, net.named_params());

  VimNet other(cfg);
  other.init(12345);
  load_into(load_checkpoint(p1), other.named_params());
  bool fwd_ok = oracle::bytes_equal(other.forward(img).logits, before);

  save_checkpoint(p2, load_checkpoint(p1));
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  bool bytes_ok = !b1.empty() && b1 == b2;

  char detail[96];
  std::snprintf(detail, sizeof detail, "forward %s, bytes %s", fwd_ok ? "identical" : "DIFFER",
                bytes_ok ? "identical" : "DIFFER");
  return report("checkpoint round trip", fwd_ok && bytes_ok, detail, timer.seconds());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr,
                 "usage: acceptance <prepare|scan|grad|audit|structure|ablation|sweep|"
                 "determinism|checkpoint> <workspace> [vimd-binary]\n");
    return 2;
  }
  const std::string what = argv[1];
  const std::string ws = argv[2];
  try {
    if (what == "prepare") return run_prepare(ws);
    if (what == "scan") return run_scan(ws);
    if (what == "grad") return run_grad(ws);
    if (what == "audit") return run_audit(ws);
    if (what == "structure") return run_structure(ws);
    if (what == "ablation") return run_ablation(ws);
    if (what == "sweep") {
      if (argc < 4) {
        std::fprintf(stderr, "sweep needs the vimd binary path\n");
        return 2;
      }
      return run_sweep(ws, argv[3]);
    }
    if (what == "determinism") return run_determinism(ws);
    if (what == "checkpoint") return run_checkpoint(ws);
    std::fprintf(stderr, "unknown criterion '%s'\n", what.c_str());
    return 2;
  } catch (const std::exception& e) {
    std::printf("FAIL - %s (exception: %s)\n", what.c_str(), e.what());
    return 1;
  }
}
