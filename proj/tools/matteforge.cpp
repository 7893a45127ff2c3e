// matteforge: generate synthetic data, train, adapt, evaluate, smooth video
// mattes, build trimaps from depth, composite, and run the gradient checks.
//
// Every subcommand writes into <out>/<subcommand>-<hash>, where the hash
// covers the effective configuration and the input paths. An existing run
// directory is never overwritten unless --force is given.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime or numeric error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "matteforge/bench.hpp"
#include "matteforge/config.hpp"
#include "matteforge/data.hpp"
#include "matteforge/gradcheck.hpp"
#include "matteforge/io.hpp"
#include "matteforge/net.hpp"
#include "matteforge/train.hpp"
#include "matteforge/video.hpp"

namespace mf = matteforge;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::string precision = "single";
  bool force = false;
  std::optional<double> xi;
  std::optional<double> lambda_s;
  std::optional<double> lambda_d;
  std::optional<double> lambda_alpha;
  std::optional<double> threshold;
};

mf::RunConfig effective_config(const Common& o) {
  mf::RunConfig c = o.config_path.empty() ? mf::RunConfig{} : mf::load_run_config(o.config_path);
  if (o.seed) {
    c.data.seed = *o.seed;
    c.train.seed = *o.seed;
    c.soc.seed = *o.seed;
  }
  if (o.xi) c.ofd.xi = *o.xi;
  if (o.lambda_s) c.train.weights.lambda_s = *o.lambda_s;
  if (o.lambda_d) c.train.weights.lambda_d = *o.lambda_d;
  if (o.lambda_alpha) c.train.weights.lambda_alpha = *o.lambda_alpha;
  if (o.threshold) c.trimap.threshold = *o.threshold;
  c.validate();
  return c;
}

mf::Precision parse_precision(const std::string& p) {
  if (p == "single") return mf::Precision::single;
  if (p == "double") return mf::Precision::double_;
  throw mf::ConfigError("--precision must be single or double, got '" + p + "'");
}

fs::path absolute_or_empty(const std::string& p) { return p.empty() ? fs::path() : fs::absolute(p); }

/// Creates <out>/<name>-<hash of config and inputs> and stores the config in it.
fs::path make_run_dir(const Common& o, const std::string& name, const mf::RunConfig& cfg,
                      const std::vector<std::string>& inputs) {
  std::string key = name + "\n" + mf::to_json(cfg).dump() + "\n" + o.precision;
  for (const std::string& in : inputs) key += "\n" + absolute_or_empty(in).string();
  const fs::path dir = fs::path(o.out) / (name + "-" + mf::fnv1a_hex(key));
  if (fs::exists(dir) && !fs::is_empty(dir) && !o.force) {
    throw mf::ConfigError("run directory " + dir.string() + " already exists; pass --force to overwrite");
  }
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << mf::to_json(cfg).dump(2) << '\n';
  return dir;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw mf::IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

void write_log(const fs::path& p, const mf::TrainLog& log) {
  std::ofstream out(p);
  if (!out) throw mf::IoError("cannot write " + p.string());
  log.write_jsonl(out);
}

std::vector<mf::SyntheticSample> load_or_generate(const std::string& data_dir, const mf::RunConfig& cfg) {
  if (!data_dir.empty()) return mf::read_dataset(data_dir);
  return mf::make_dataset(cfg.data);
}

// --- gen -------------------------------------------------------------------

struct GenArgs {
  std::optional<int> count;
  std::optional<int> size;
  bool shifted = false;
  std::string backgrounds;
};

int cmd_gen(const Common& o, const GenArgs& a) {
  mf::RunConfig cfg = effective_config(o);
  if (a.count) cfg.data.count = *a.count;
  if (a.size) cfg.data.size = *a.size;
  cfg.validate();
  const fs::path dir = make_run_dir(o, a.shifted ? "gen-shifted" : "gen", cfg, {a.backgrounds});
  std::vector<mf::SyntheticSample> data =
      a.backgrounds.empty() ? mf::make_dataset(cfg.data)
                            : mf::make_dataset(cfg.data, mf::read_backgrounds(a.backgrounds, cfg.data.size));
  if (a.shifted) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = mf::domain_shift(data[i], cfg.data.seed * 7919ULL + i);
  }
  mf::write_dataset(dir, data);
  std::cerr << "wrote " << data.size() << " samples\n";
  std::cout << dir.string() << '\n';
  return 0;
}

// --- train -----------------------------------------------------------------

template <class T>
void run_train(const mf::RunConfig& cfg, const std::vector<mf::SyntheticSample>& data, const fs::path& dir) {
  mf::ModelConfig mc = cfg.model;
  mc.input_height = data.front().image.height;
  mc.input_width = data.front().image.width;
  auto model = mf::Model<T>::build(mc, cfg.train.seed);
  std::cerr << "training " << model.parameter_count() << " parameters on " << data.size() << " samples\n";
  const mf::TrainLog log = mf::train_supervised(model, data, cfg.train, [](const nlohmann::json& rec) {
    std::cerr << "epoch " << rec["epoch"] << " lr " << rec["lr"] << " loss " << rec["loss_total"] << '\n';
  });
  mf::save_checkpoint(model, (dir / "model.ckpt").string());
  write_log(dir / "train_log.jsonl", log);
}

int cmd_train(const Common& o, const std::string& data_dir) {
  const mf::RunConfig cfg = effective_config(o);
  const auto data = load_or_generate(data_dir, cfg);
  const fs::path dir = make_run_dir(o, "train", cfg, {data_dir});
  if (parse_precision(o.precision) == mf::Precision::double_) {
    run_train<double>(cfg, data, dir);
  } else {
    run_train<float>(cfg, data, dir);
  }
  std::cout << dir.string() << '\n';
  return 0;
}

// --- adapt -----------------------------------------------------------------

template <class T>
void run_adapt(const mf::RunConfig& cfg, const std::string& checkpoint, const std::vector<mf::Image>& images,
               const fs::path& dir) {
  auto model = mf::load_checkpoint<T>(checkpoint);
  mf::SocSession<T> session(model, images, cfg.soc);
  const mf::SocTerms before = mf::evaluate_soc(model, session.frozen(), images, cfg.soc);
  mf::TrainLog log;
  for (int i = 0; i < cfg.soc.steps; ++i) log.records.push_back(session.step());
  const mf::SocTerms after = mf::evaluate_soc(model, session.frozen(), images, cfg.soc);
  std::cerr << "L_cons " << before.cons << " -> " << after.cons << ", L_dd " << before.dd << " -> " << after.dd << '\n';
  mf::save_checkpoint(model, (dir / "adapted.ckpt").string());
  write_log(dir / "soc_log.jsonl", log);
  write_json(dir / "soc_summary.json", {{"before", {{"loss_cons", before.cons}, {"loss_dd", before.dd}}},
                                        {"after", {{"loss_cons", after.cons}, {"loss_dd", after.dd}}}});
}

int cmd_adapt(const Common& o, const std::string& checkpoint, const std::string& data_dir) {
  const mf::RunConfig cfg = effective_config(o);
  std::vector<mf::Image> images;
  for (const auto& s : mf::read_dataset(data_dir)) images.push_back(s.image);
  const fs::path dir = make_run_dir(o, "adapt", cfg, {checkpoint, data_dir});
  if (parse_precision(o.precision) == mf::Precision::double_) {
    run_adapt<double>(cfg, checkpoint, images, dir);
  } else {
    run_adapt<float>(cfg, checkpoint, images, dir);
  }
  std::cout << dir.string() << '\n';
  return 0;
}

// --- eval ------------------------------------------------------------------

template <class T>
mf::BenchReport run_eval(const std::string& checkpoint, const std::vector<mf::BenchSample>& set,
                         const mf::BenchConfig& bc) {
  auto model = mf::load_checkpoint<T>(checkpoint);
  return mf::run_benchmark(model, set, bc);
}

int cmd_eval(const Common& o, const std::string& checkpoint, const std::string& data_dir, bool transition_only) {
  mf::RunConfig cfg = effective_config(o);
  if (transition_only) cfg.bench.transition_only = true;
  const auto set = mf::bench_samples(load_or_generate(data_dir, cfg));
  const fs::path dir = make_run_dir(o, "eval", cfg, {checkpoint, data_dir});
  mf::BenchConfig bc = cfg.bench;
  bc.config_hash = mf::config_hash(cfg);
  const mf::BenchReport r = parse_precision(o.precision) == mf::Precision::double_
                                ? run_eval<double>(checkpoint, set, bc)
                                : run_eval<float>(checkpoint, set, bc);
  write_json(dir / "report.json", nlohmann::json(r));
  std::ofstream csv(dir / "report.csv");
  mf::write_csv(csv, r);
  std::cerr << "mse " << r.mean_mse << " mad " << r.mean_mad << " params " << r.params << " ms/sample "
            << r.mean_inference_ms << '\n';
  std::cout << dir.string() << '\n';
  return 0;
}

// --- smooth ----------------------------------------------------------------

int cmd_smooth(const Common& o, const std::string& input) {
  const mf::RunConfig cfg = effective_config(o);
  const mf::MatteSequence seq = mf::read_sequence(input);
  const fs::path dir = make_run_dir(o, "smooth", cfg, {input});
  const std::size_t n = mf::count_flickers(seq, cfg.ofd);
  mf::write_sequence(dir / "frames", mf::ofd_smooth(seq, cfg.ofd));
  std::cerr << "replaced " << n << " flickering pixels in " << seq.frames.size() << " frames\n";
  std::cout << dir.string() << '\n';
  return 0;
}

// --- trimap ----------------------------------------------------------------

int cmd_trimap(const Common& o, const std::string& input) {
  const mf::RunConfig cfg = effective_config(o);
  if (!cfg.trimap.threshold) {
    throw mf::ConfigError("trimap needs a depth threshold: pass --threshold or set trimap.threshold");
  }
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      const std::string ext = e.path().extension().string();
      if (ext == ".png" || ext == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.emplace_back(input);
  }
  if (files.empty()) throw mf::IoError("no depth images in " + input);
  const fs::path dir = make_run_dir(o, "trimap", cfg, {input});
  for (const fs::path& f : files) {
    const mf::Trimap t = mf::depth_to_trimap(mf::read_depth(f), *cfg.trimap.threshold, cfg.trimap.kernel,
                                             cfg.trimap.iterations, cfg.trimap.far_plane);
    mf::write_grid(dir / ("trimap_" + f.stem().string() + ".png"), t);
  }
  std::cerr << "wrote " << files.size() << " trimaps\n";
  std::cout << dir.string() << '\n';
  return 0;
}

// --- composite -------------------------------------------------------------

int cmd_composite(const Common& o, const std::string& alpha, const std::string& fg, const std::string& bg,
                  const std::vector<double>& color) {
  const mf::RunConfig cfg = effective_config(o);
  const mf::Matte a = mf::read_matte(alpha);
  const mf::Image f = mf::read_image(fg);
  if (f.channels != 3) throw mf::ShapeError("composite: foreground must be RGB");
  mf::Image b;
  if (!bg.empty()) {
    b = mf::read_image(bg);
  } else {
    if (color.size() != 3) throw mf::ConfigError("--color takes three values in [0,1]");
    b = mf::Image(3, f.height, f.width);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < b.plane(); ++i) b.data[c * b.plane() + i] = color[static_cast<std::size_t>(c)];
  }
  const fs::path dir = make_run_dir(o, "composite", cfg, {alpha, fg, bg});
  mf::write_image(dir / "composite.png", mf::composite(a, f, b));
  std::cout << dir.string() << '\n';
  return 0;
}

// --- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const Common& o, int seeds) {
  mf::GradcheckOptions opt = mf::GradcheckOptions::for_precision(parse_precision(o.precision));
  if (seeds < 1) throw mf::ConfigError("--seeds must be >= 1");
  opt.seeds = seeds;
  if (opt.precision == mf::Precision::single) opt.step = 1e-5;
  bool all = true;
  std::printf("%-26s %12s %10s %8s %s\n", "case", "max_rel_err", "checked", "skipped", "result");
  for (const auto& c : mf::default_gradcheck_cases()) {
    const mf::GradcheckResult r = mf::check_case(c, opt);
    all = all && r.passed;
    std::printf("%-26s %12.3e %10zu %8zu %s\n", r.name.c_str(), r.max_rel_err, r.checked, r.skipped,
                r.passed ? "PASS" : "FAIL");
    std::fflush(stdout);
  }
  std::printf("tolerance %.0e over %d seeds: %s\n", opt.tolerance, opt.seeds, all ? "all passed" : "FAILURES");
  return all ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matteforge: trimap-free portrait matting toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common o;
  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration; flags override it")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed for data generation, initialization and shuffling (default 0)");
    sub->add_option("--out", o.out, "Parent directory of the run directory")->capture_default_str();
    sub->add_option("--precision", o.precision, "Scalar type: single or double")->capture_default_str();
    sub->add_flag("--force", o.force, "Reuse an existing run directory");
  };
  auto loss_flags = [&o](CLI::App* sub) {
    sub->add_option("--lambda-s", o.lambda_s, "Semantic loss weight (default 1)");
    sub->add_option("--lambda-d", o.lambda_d, "Detail loss weight (default 10)");
    sub->add_option("--lambda-alpha", o.lambda_alpha, "Alpha loss weight (default 1)");
  };

  GenArgs gen;
  CLI::App* g = app.add_subcommand("gen", "Generate a synthetic composited dataset with a manifest");
  common(g);
  g->add_option("--count", gen.count, "Number of samples (default 200)");
  g->add_option("--size", gen.size, "Square image size, a multiple of 16 (default 64)");
  g->add_flag("--shifted", gen.shifted, "Apply the capture-condition domain shift to every sample");
  g->add_option("--backgrounds", gen.backgrounds, "Directory of background images to use instead of procedural ones")
      ->check(CLI::ExistingDirectory);

  std::string data_dir;
  std::string checkpoint;
  CLI::App* t = app.add_subcommand("train", "Supervised training (SGD, lr 0.01, x0.1 every 10 epochs, 40 epochs)");
  common(t);
  loss_flags(t);
  t->add_option("--data", data_dir, "Dataset directory from gen (default: generate from the config)")
      ->check(CLI::ExistingDirectory);

  CLI::App* a = app.add_subcommand("adapt", "SOC self-supervised adaptation (Adam, lr 0.0001) on unlabeled images");
  common(a);
  a->add_option("--checkpoint", checkpoint, "Trained model checkpoint")->required()->check(CLI::ExistingFile);
  a->add_option("--data", data_dir, "Dataset directory whose images are used without labels")
      ->required()
      ->check(CLI::ExistingDirectory);

  bool transition_only = false;
  CLI::App* e = app.add_subcommand("eval", "MSE/MAD benchmark of a checkpoint; writes report.json and report.csv");
  common(e);
  e->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", data_dir, "Labeled dataset directory (default: generate from the config)")
      ->check(CLI::ExistingDirectory);
  e->add_flag("--transition-only", transition_only, "Restrict metrics to the ground-truth transition band");

  std::string input;
  CLI::App* s = app.add_subcommand("smooth", "One-frame-delay flicker removal over frame_NNNNN images");
  common(s);
  s->add_option("--input", input, "Directory of matte frames")->required()->check(CLI::ExistingDirectory);
  s->add_option("--xi", o.xi, "Pixel similarity threshold (default 0.1)");

  CLI::App* tr = app.add_subcommand("trimap", "Trimaps from depth maps (smaller depth is closer)");
  common(tr);
  tr->add_option("--input", input, "Depth image or directory of depth images")->required()->check(CLI::ExistingPath);
  tr->add_option("--threshold", o.threshold, "Split point on the reversed depth; required (no default)");

  std::string alpha, fg, bg;
  std::vector<double> color{0.0, 1.0, 0.0};
  CLI::App* c = app.add_subcommand("composite", "I = alpha F + (1 - alpha) B, over an image or a solid colour");
  common(c);
  c->add_option("--alpha", alpha, "Alpha matte image")->required()->check(CLI::ExistingFile);
  c->add_option("--fg", fg, "Foreground RGB image")->required()->check(CLI::ExistingFile);
  c->add_option("--bg", bg, "Background RGB image (overrides --color)")->check(CLI::ExistingFile);
  c->add_option("--color", color, "Solid background colour r g b in [0,1] (default green)")->expected(3);

  int seeds = 20;
  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  gc->add_option("--precision", o.precision, "Analytic gradients in single or double")->capture_default_str();
  gc->add_option("--seeds", seeds, "Random seeds per case")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) return cmd_gen(o, gen);
    if (*t) return cmd_train(o, data_dir);
    if (*a) return cmd_adapt(o, checkpoint, data_dir);
    if (*e) return cmd_eval(o, checkpoint, data_dir, transition_only);
    if (*s) return cmd_smooth(o, input);
    if (*tr) return cmd_trimap(o, input);
    if (*c) return cmd_composite(o, alpha, fg, bg, color);
    if (*gc) return cmd_gradcheck(o, seeds);
  } catch (const mf::ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
