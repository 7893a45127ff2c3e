// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//
//   acceptance [--only 1,4,...] [--model trained.ckpt] [--save-model trained.ckpt]
//
// --model skips the trainability run when only the SOC criterion is wanted.
// Exits non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "matteforge/bench.hpp"
#include "matteforge/config.hpp"
#include "matteforge/gradcheck.hpp"
#include "matteforge/mattemath.hpp"
#include "matteforge/train.hpp"
#include "matteforge/video.hpp"
#include "support.hpp"

namespace {

using namespace matteforge;

// criterion 1
constexpr double kGradTolerance = 1e-5;
constexpr int kGradSeeds = 20;
constexpr double kGradSeconds = 120.0;
// criterion 2
constexpr int kOfdSequences = 100;
// criterion 3
constexpr int kMorphImages = 50;
// criterion 4
constexpr double kMadTarget = 0.05;
constexpr double kCpuBudgetSeconds = 600.0;
constexpr double kOverfitTarget = 0.02;
constexpr int kOverfitSteps = 200;
// criterion 6
constexpr int kSocSamples = 100;
constexpr double kConsDrop = 0.30;
constexpr double kDdGrowth = 1.5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// --- shared training recipe ---------------------------------------------------

DatasetConfig train_data(std::uint64_t seed) {
  DatasetConfig d;
  d.count = 200;
  d.size = 64;
  d.crops_per_foreground = 0;
  d.composites_per_foreground = 1;
  d.seed = 1 + seed;
  return d;
}

DatasetConfig heldout_data(std::uint64_t seed) {
  DatasetConfig d = train_data(seed);
  d.count = 50;
  d.seed = 1000 + seed;
  return d;
}

TrainConfig recipe(std::uint64_t seed, int epochs, int decay_every) {
  TrainConfig t;
  t.optimizer = Optimizer::adam;
  t.lr = 1e-3;
  t.lr_decay_every = decay_every;
  t.epochs = epochs;
  t.batch_size = 8;
  t.seed = seed;
  return t;
}

template <class T>
double heldout_mad(Model<T>& model, const std::vector<SyntheticSample>& set) {
  double sum = 0;
  for (const auto& s : set) sum += mad(predict_alpha(model, s.image), s.alpha_g);
  return sum / static_cast<double>(set.size());
}

struct StopTraining {};

// --- 1 ---------------------------------------------------------------------

Outcome gradcheck_criterion() {
  GradcheckOptions opt = GradcheckOptions::for_precision(Precision::double_);
  opt.seeds = kGradSeeds;
  opt.tolerance = kGradTolerance;
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradcheck(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = 0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_err);
    if (!r.passed) failed += " " + r.name;
  }
  Outcome o;
  o.pass = failed.empty() && secs < kGradSeconds;
  o.detail = std::to_string(results.size()) + " cases x " + std::to_string(kGradSeeds) + " seeds, " +
             fmt("max rel err %.2e (< %.0e), %.1f s (< %.0f s)", worst, kGradTolerance, secs, kGradSeconds);
  if (!failed.empty()) o.detail += "; failed:" + failed;
  return o;
}

// --- 2 ---------------------------------------------------------------------

MatteSequence triple(double p, double c, double n) {
  MatteSequence s;
  for (double v : {p, c, n}) s.frames.emplace_back(1, 1, v);
  return s;
}

Outcome ofd_criterion() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> level(0, 20);
  std::bernoulli_distribution plant(0.3), quantize(0.5);
  int mismatched = 0;
  std::size_t flickers = 0;
  for (int s = 0; s < kOfdSequences; ++s) {
    MatteSequence seq;
    Matte base = mft::random_matte(rng, 16, 16);
    for (int t = 0; t < 5; ++t) {
      Matte f = base;
      for (double& v : f.values) {
        // quantized values put many differences exactly on the threshold
        if (quantize(rng)) v = level(rng) * 0.05;
        v = std::clamp(v + 0.04 * (u(rng) - 0.5), 0.0, 1.0);
        if (plant(rng)) v = u(rng);
      }
      seq.frames.push_back(f);
    }
    flickers += count_flickers(seq);
    if (ofd_smooth(seq).frames != mft::brute_ofd(seq.frames, 0.1)) ++mismatched;
  }
  const double canonical = ofd_smooth(triple(0.9, 0.2, 0.88)).frames[1].values[0];
  const bool canonical_ok = std::abs(canonical - 0.89) < 1e-12;
  const bool disagree_ok = ofd_smooth(triple(0.9, 0.5, 0.2)).frames[1].values[0] == 0.5;
  const bool near_ok = ofd_smooth(triple(0.9, 0.85, 0.88)).frames[1].values[0] == 0.85;
  Outcome o;
  o.pass = mismatched == 0 && flickers > 0 && canonical_ok && disagree_ok && near_ok;
  o.detail = std::to_string(kOfdSequences) + " sequences, " + std::to_string(flickers) + " flickers, " +
             std::to_string(mismatched) + " mismatches; canonical " + fmt("%.17g", canonical) +
             (disagree_ok ? ", disagreeing neighbours kept" : ", disagreeing neighbours CHANGED") +
             (near_ok ? ", near-neighbour kept" : ", near-neighbour CHANGED");
  return o;
}

// --- 3 ---------------------------------------------------------------------

Outcome morphology_criterion() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> side(1, 64), ksel(0, 2), itsel(1, 3);
  std::uniform_real_distribution<double> thr(0.05, 0.95);
  int compared = 0, mismatched = 0;
  for (int i = 0; i < kMorphImages; ++i) {
    const int h = side(rng), w = side(rng);
    const int k = 3 + 2 * ksel(rng), it = itsel(rng);
    const Mask bin = i % 2 ? mft::random_shapes(rng, h, w) : mft::random_binary(rng, h, w);
    mismatched += dilate(bin, k, it) != mft::brute_dilate(bin, k, it);
    mismatched += erode(bin, k, it) != mft::brute_erode(bin, k, it);
    Matte alpha = mft::random_matte(rng, h, w);
    for (double& v : alpha.values) v = v < 0.4 ? 0.0 : v > 0.7 ? 1.0 : v;
    mismatched += transition_mask(alpha, k, it) != mft::brute_transition(alpha, k, it);
    DepthMap depth(h, w);
    const Matte noise = mft::random_matte(rng, h, w);
    const Mask near = mft::random_shapes(rng, h, w);
    for (std::size_t p = 0; p < depth.size(); ++p) depth.values[p] = near.values[p] > 0 ? 0.3 * noise.values[p] : 0.5 + 0.5 * noise.values[p];
    const double t = thr(rng);
    mismatched += depth_to_trimap(depth, t, k, it) != mft::brute_trimap(depth, t, k, it, 1.0);
    compared += 4;
  }
  Outcome o;
  o.pass = mismatched == 0;
  o.detail = std::to_string(kMorphImages) + " images up to 64x64, " + std::to_string(compared) + " comparisons, " +
             std::to_string(mismatched) + " mismatches";
  return o;
}

// --- 4 ---------------------------------------------------------------------

Outcome trainability_criterion(std::optional<Model<float>>& trained) {
  const double cpu0 = cpu_seconds();
  const auto data = make_dataset(train_data(0));
  const auto heldout = make_dataset(heldout_data(0));
  ModelConfig mc;
  auto model = Model<float>::build(mc, 0);
  double best = 1.0, reached_at = -1.0;
  int epoch_reached = -1;
  try {
    train_supervised(model, data, recipe(0, 80, 50), [&](const nlohmann::json& rec) {
      const int epoch = rec["epoch"].get<int>();
      const double m = heldout_mad(model, heldout);
      best = std::min(best, m);
      const double cpu = cpu_seconds() - cpu0;
      std::cerr << "  epoch " << epoch << " loss " << rec["loss_total"] << " held-out MAD " << m << " cpu " << cpu << " s\n";
      if (m <= kMadTarget) {
        reached_at = cpu;
        epoch_reached = epoch;
        throw StopTraining{};
      }
      if (cpu > kCpuBudgetSeconds) throw StopTraining{};
    });
  } catch (const StopTraining&) {
  }
  const bool mad_ok = epoch_reached >= 0 && reached_at <= kCpuBudgetSeconds;
  trained.emplace(std::move(model));

  // single-sample overfit: the full objective on one sample, one step per epoch
  const std::vector<SyntheticSample> one(data.begin(), data.begin() + 1);
  auto small = Model<float>::build(mc, 1);
  TrainConfig oc = recipe(1, kOverfitSteps, kOverfitSteps);
  oc.batch_size = 1;
  const TrainLog log = train_supervised(small, one, oc);
  const double final_loss = log.records.back()["loss_total"].get<double>();
  const bool overfit_ok = final_loss < kOverfitTarget;

  Outcome o;
  o.pass = mad_ok && overfit_ok;
  o.detail = std::to_string(trained->parameter_count()) + " params; held-out MAD " +
             (mad_ok ? fmt("%.4f at epoch %.0f after %.0f CPU-s", best, epoch_reached, reached_at)
                     : fmt("best %.4f, target not reached in %.0f CPU-s", best, kCpuBudgetSeconds)) +
             fmt(" (<= %.2f); overfit loss %.4f after %.0f steps (< %.2f)", kMadTarget, final_loss, kOverfitSteps,
                 kOverfitTarget);
  return o;
}

// --- 5 ---------------------------------------------------------------------

Outcome ablation_criterion() {
  constexpr int kEpochs = 20;
  constexpr int kDecay = 15;
  // at 1e-3 the reduced objectives can collapse to an all-zero matte in the first epoch
  constexpr double kLr = 3e-4;
  const char* names[3] = {"L_alpha", "L_s+L_alpha", "full"};
  std::vector<double> mads[3];
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto data = make_dataset(train_data(seed));
    const auto heldout = make_dataset(heldout_data(seed));
    for (int v = 0; v < 3; ++v) {
      auto model = Model<float>::build(ModelConfig{}, seed);
      TrainConfig tc = recipe(seed, kEpochs, kDecay);
      tc.lr = kLr;
      tc.terms.semantic = v >= 1;
      tc.terms.detail = v >= 2;
      train_supervised(model, data, tc);
      mads[v].push_back(heldout_mad(model, heldout));
      std::cerr << "  seed " << seed << " " << names[v] << " held-out MAD " << mads[v].back() << '\n';
    }
  }
  double med[3];
  for (int v = 0; v < 3; ++v) {
    std::sort(mads[v].begin(), mads[v].end());
    med[v] = mads[v][1];
  }
  Outcome o;
  o.pass = med[0] >= med[1] && med[1] >= med[2];
  o.detail = fmt("median held-out MAD over 3 seeds: L_alpha %.4f >= L_s+L_alpha %.4f >= full %.4f", med[0], med[1],
                 med[2]);
  return o;
}

// --- 6 ---------------------------------------------------------------------

std::vector<float> frozen_outputs(Model<float>& m, const std::vector<Image>& images) {
  std::vector<float> out;
  for (const Image& img : images) {
    Graph<float> g(false);
    const ModelOutputs<float> o = m.forward(g, to_tensor<float>(img), Mode::eval);
    for (const Tensor<float>* t : {&o.s_p, &o.d_p, &o.alpha_p}) {
      const auto v = t->values();
      out.insert(out.end(), v.begin(), v.end());
    }
  }
  return out;
}

Outcome soc_criterion(Model<float>& model) {
  DatasetConfig dc = train_data(0);
  dc.count = kSocSamples;
  dc.seed = 2000;
  std::vector<Image> images;
  const auto clean = make_dataset(dc);
  for (std::size_t i = 0; i < clean.size(); ++i) images.push_back(domain_shift(clean[i], 3000 + i).image);

  const SocConfig cfg;  // Adam 1e-4, batch 8, 200 steps
  const int steps = cfg.steps;
  SocSession<float> session(model, images, cfg);
  const std::vector<float> frozen_before = frozen_outputs(session.frozen(), images);
  const SocTerms before = evaluate_soc(model, session.frozen(), images, cfg);
  session.step();
  const SocTerms first = evaluate_soc(model, session.frozen(), images, cfg);
  for (int i = 1; i < steps; ++i) {
    session.step();
    if ((i + 1) % 50 == 0) {
      const SocTerms t = evaluate_soc(model, session.frozen(), images, cfg);
      std::cerr << "  step " << i + 1 << " L_cons " << t.cons << " L_dd " << t.dd << '\n';
    }
  }
  const SocTerms after = evaluate_soc(model, session.frozen(), images, cfg);
  const bool frozen_same = frozen_outputs(session.frozen(), images) == frozen_before;

  const double drop = 1.0 - after.cons / before.cons;
  const bool a = drop >= kConsDrop;
  // L_dd is exactly zero before the first update, so the first step's value is the baseline
  const bool c = after.dd <= kDdGrowth * first.dd;
  Outcome o;
  o.pass = a && frozen_same && c;
  o.detail = fmt("(a) L_cons %.5f -> %.5f, drop %.1f%% (>= 30%%); ", before.cons, after.cons, 100 * drop) +
             "(b) frozen outputs " + (frozen_same ? "bit-identical" : "CHANGED") + "; " +
             fmt("(c) L_dd %.3g after step 1 -> %.3g after %.0f steps (<= 1.5x)", first.dd, after.dd, steps);
  if (!a) o.detail += " [a failed]";
  if (!c) o.detail += " [c failed]";
  return o;
}

// --- 7 ---------------------------------------------------------------------

Outcome constants_criterion() {
  const RunConfig c;
  const LossWeights w;
  const TrainConfig t;
  const SocConfig s;
  const OfdConfig ofd;
  std::vector<std::string> wrong;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) wrong.emplace_back(what);
  };
  expect(w.lambda_s == 1.0 && c.train.weights.lambda_s == 1.0, "lambda_s");
  expect(w.lambda_d == 10.0 && c.train.weights.lambda_d == 10.0, "lambda_d");
  expect(w.lambda_alpha == 1.0 && c.train.weights.lambda_alpha == 1.0, "lambda_alpha");
  expect(ofd.xi == 0.1 && c.ofd.xi == 0.1, "xi");
  expect(t.optimizer == Optimizer::sgd && t.lr == 0.01, "sgd lr");
  expect(t.lr_decay_factor == 0.1 && t.lr_decay_every == 10, "lr decay");
  expect(lr_at_epoch(t, 9) == 0.01 && std::abs(lr_at_epoch(t, 10) - 0.001) < 1e-15, "lr schedule");
  expect(s.lr == 0.0001 && c.soc.lr == 0.0001, "soc lr");
  expect(s.freeze_norm, "soc freeze_norm");
  const RunConfig from_empty = run_config_from_json(nlohmann::json::object());
  expect(to_json(from_empty) == to_json(c), "json defaults");
  Outcome o;
  o.pass = wrong.empty();
  o.detail = "lambda 1/10/1, xi 0.1, SGD 0.01 x0.1 every 10 epochs, SOC Adam 0.0001";
  for (const auto& x : wrong) o.detail += " [" + x + " wrong]";
  return o;
}

// --- 8 ---------------------------------------------------------------------

std::string train_once(BenchReport& report) {
  DatasetConfig dc = train_data(5);
  dc.count = 24;
  dc.size = 32;
  const auto data = make_dataset(dc);
  ModelConfig mc;
  mc.input_height = mc.input_width = 32;
  auto model = Model<float>::build(mc, 5);
  train_supervised(model, data, recipe(5, 3, 2));
  std::ostringstream os;
  save_checkpoint(model, os);
  std::istringstream is(os.str());
  auto reloaded = load_checkpoint<float>(is);
  report = run_benchmark(reloaded, bench_samples(data), BenchConfig{});
  return os.str();
}

Outcome determinism_criterion() {
  BenchReport ra, rb;
  const std::string a = train_once(ra);
  const std::string b = train_once(rb);
  const bool ckpt = a == b;
  const bool metrics = ra.per_sample == rb.per_sample && ra.mean_mse == rb.mean_mse && ra.mean_mad == rb.mean_mad;
  Outcome o;
  o.pass = ckpt && metrics;
  o.detail = std::string("checkpoints ") + (ckpt ? "bit-identical" : "DIFFER") + " (" + std::to_string(a.size()) +
             " bytes), eval metrics " + (metrics ? "identical" : "DIFFER") + fmt(" (MAD %.6f)", ra.mean_mad);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string model_path, save_path;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (arg == "--save-model" && i + 1 < argc) {
      save_path = argv[++i];
    } else if (arg == "--model" && i + 1 < argc) {
      model_path = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--model checkpoint] [--save-model checkpoint]\n";
      return 2;
    }
  }
  auto selected = [&](int n) { return only.empty() || only.count(n) > 0; };

  int failures = 0;
  auto report = [&](int n, const char* name, const Outcome& o) {
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };

  std::optional<Model<float>> trained;
  if (!model_path.empty()) trained.emplace(load_checkpoint<float>(model_path));

  if (selected(1)) report(1, "gradcheck", gradcheck_criterion());
  if (selected(2)) report(2, "ofd oracle", ofd_criterion());
  if (selected(3)) report(3, "morphology/trimap oracle", morphology_criterion());
  if (selected(4)) {
    report(4, "trainability", trainability_criterion(trained));
    if (!save_path.empty()) save_checkpoint(*trained, save_path);
  }
  if (selected(5)) report(5, "ablation direction", ablation_criterion());
  if (selected(6)) {
    if (!trained) {
      std::optional<Model<float>> fresh;
      trainability_criterion(fresh);
      trained = std::move(fresh);
    }
    report(6, "soc direction", soc_criterion(*trained));
  }
  if (selected(7)) report(7, "constants audit", constants_criterion());
  if (selected(8)) report(8, "determinism", determinism_criterion());
  return failures == 0 ? 0 : 1;
}
