#include "depthmae_cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "depthmae/checkpoint.hpp"
#include "depthmae/config.hpp"
#include "depthmae/fusion.hpp"
#include "depthmae/imaging.hpp"
#include "depthmae/metrics.hpp"
#include "depthmae/parallel.hpp"
#include "depthmae/synthetic.hpp"
#include "depthmae/training.hpp"

namespace depthmae::cli {

namespace fs = std::filesystem;

namespace {

// Bad arguments or inputs detected before any work starts.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out_dir;
};

struct TrainArgs {
  std::vector<std::string> overrides;
};

struct CompleteArgs {
  std::string checkpoint;
  std::string rgb;
  std::string depth;
  std::string output;
  bool fuse = false;
  std::optional<double> depth_scale;
};

struct EvaluateArgs {
  std::string checkpoint;
  std::string manifest;
  std::string report;
  std::optional<double> depth_scale;
};

struct SyntheticArgs {
  std::string out_dir;
  std::size_t count = 0;
  std::size_t height = SyntheticOptions{}.height;
  std::size_t width = SyntheticOptions{}.width;
};

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw ValidationError(what + ": no such file " + path.string());
}

RunConfig effective_config(const GlobalFlags& g, const TrainArgs& args, Stage stage) {
  RunConfig cfg = g.config.empty() ? RunConfig::defaults(stage) : RunConfig::load(g.config, stage);
  cfg.train.stage = stage;
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "override must look like key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1), fs::current_path());
  }
  if (g.seed) cfg.train.seed = *g.seed;
  if (!g.out_dir.empty()) cfg.out_dir = fs::absolute(g.out_dir);
  cfg.validate();
  if (!fs::is_regular_file(cfg.manifest)) throw ConfigError("manifest", "no such file " + cfg.manifest.string());
  if (!cfg.train.init_checkpoint.empty() && !fs::is_regular_file(cfg.train.init_checkpoint)) {
    throw ConfigError("init_checkpoint", "no such file " + cfg.train.init_checkpoint.string());
  }
  if (!cfg.train.resume_path.empty() && !fs::is_regular_file(cfg.train.resume_path)) {
    throw ConfigError("resume_path", "no such file " + cfg.train.resume_path.string());
  }
  return cfg;
}

int cmd_train(const GlobalFlags& g, const TrainArgs& args, Stage stage, std::ostream& out) {
  const RunConfig cfg = effective_config(g, args, stage);
  const DatasetManifest manifest = DatasetManifest::load(cfg.manifest, cfg.dataset_root);

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream snap(cfg.out_dir / "config.txt", std::ios::binary | std::ios::trunc);
    if (!snap) throw IoError("cannot write " + (cfg.out_dir / "config.txt").string());
    snap << cfg.to_text();
  }

  TrainOptions options;
  options.out_dir = cfg.out_dir;
  options.depth_scale = cfg.depth_scale;
  const TrainResult result = stage == Stage::kPretrain ? run_pretrain(manifest, cfg.model, cfg.train, options)
                                                       : run_finetune(manifest, cfg.model, cfg.train, options);

  if (!result.init.loaded.empty()) {
    out << "initialized " << result.init.loaded.size() << " tensors from " << cfg.train.init_checkpoint.string()
        << " (" << result.init.not_in_checkpoint.size() << " freshly initialized)\n";
  }
  if (result.skipped_files) out << "skipped " << result.skipped_files << " unreadable records\n";
  if (result.skipped_samples) out << "skipped " << result.skipped_samples << " samples without supervised pixels\n";
  out << stage_name(stage) << ": " << result.steps << " steps";
  if (!result.epochs.empty()) {
    out << ", final epoch loss " << std::fixed << std::setprecision(6) << result.epochs.back().mean_loss_m << " m";
  }
  out << "\ncheckpoint: " << (cfg.out_dir / "checkpoints" / "final.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_complete(const CompleteArgs& args, std::ostream& out) {
  require_file(args.checkpoint, "checkpoint");
  require_file(args.rgb, "rgb");
  require_file(args.depth, "depth");
  if (args.depth_scale && !(*args.depth_scale > 0.0)) throw ConfigError("depth_scale", "must be positive");

  const Completer completer(Checkpoint::load(args.checkpoint));
  const double scale = args.depth_scale.value_or(completer.depth_scale());
  RgbdSample sample;
  sample.rgb = load_rgb(args.rgb);
  sample.raw_depth = load_depth(args.depth, scale);
  DepthImage result = completer.complete(sample);
  if (args.fuse) result = fuse(sample.raw_depth, result);

  const fs::path target(args.output);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  save_depth(target, result, scale);
  out << "wrote " << target.string() << " (" << result.count_holes() << " holes left)\n";
  return kExitOk;
}

int cmd_evaluate(const GlobalFlags& g, const EvaluateArgs& args, std::ostream& out) {
  require_file(args.checkpoint, "checkpoint");
  require_file(args.manifest, "manifest");
  if (args.depth_scale && !(*args.depth_scale > 0.0)) throw ConfigError("depth_scale", "must be positive");
  fs::path report = args.report;
  if (report.empty()) {
    if (g.out_dir.empty()) throw ValidationError("evaluate: give --report or --out-dir");
    report = fs::path(g.out_dir) / "report.tsv";
  }

  const Checkpoint ckpt = Checkpoint::load(args.checkpoint);
  const DatasetManifest manifest = DatasetManifest::load(args.manifest);
  const EvalReport r = evaluate(manifest, ckpt, args.depth_scale.value_or(ckpt.depth_scale));
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  r.write(report);
  out << EvalReport::header() << '\n' << EvalReport::row(r.aggregate) << '\n';
  return kExitOk;
}

int cmd_make_synthetic(const GlobalFlags& g, const SyntheticArgs& args, std::ostream& out) {
  const std::string dir = !args.out_dir.empty() ? args.out_dir : g.out_dir;
  if (dir.empty()) throw ValidationError("make-synthetic: give an output directory or --out-dir");
  SyntheticOptions opt;
  opt.height = args.height;
  opt.width = args.width;
  if (opt.height < 1 || opt.width < 1) throw ValidationError("make-synthetic: image size must be positive");
  const DatasetManifest m = make_synthetic_dataset(dir, args.count, g.seed.value_or(0), opt);
  out << "wrote " << m.records.size() << " scenes to " << (fs::path(dir) / "manifest.tsv").string() << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked-autoencoder depth completion for RGB-D images", "depthmae"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "Training configuration file (key = value lines)");
  app.add_option("--seed", g.seed, "Random seed; overrides the config");
  app.add_option("--threads", g.threads, "Worker threads for tensor kernels")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Run or output directory; overrides the config");

  TrainArgs pre_args;
  TrainArgs fine_args;
  auto* pre = app.add_subcommand("pretrain", "Masked RGB-D pre-training");
  pre->add_option("--set", pre_args.overrides, "Override one config key (key=value); repeatable");
  auto* fine = app.add_subcommand("finetune", "Depth-completion fine-tuning with token fusion");
  fine->add_option("--set", fine_args.overrides, "Override one config key (key=value); repeatable");

  CompleteArgs comp;
  auto* complete_cmd = app.add_subcommand("complete", "Complete one depth image");
  complete_cmd->add_option("--checkpoint", comp.checkpoint, "Fine-tuned checkpoint")->required();
  complete_cmd->add_option("--rgb", comp.rgb, "8-bit RGB PNG")->required();
  complete_cmd->add_option("--depth", comp.depth, "16-bit raw depth PNG")->required();
  complete_cmd->add_option("--output", comp.output, "Where to write the 16-bit result")->required();
  complete_cmd->add_flag("--fuse", comp.fuse, "Keep measured pixels and fill only the holes");
  complete_cmd->add_option("--depth-scale", comp.depth_scale, "Counts per meter (default: from the checkpoint)");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Fine-tuned checkpoint")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest with ground truth")->required();
  eval_cmd->add_option("--report", ev.report, "Report path (default: <out-dir>/report.tsv)");
  eval_cmd->add_option("--depth-scale", ev.depth_scale, "Counts per meter (default: from the checkpoint)");

  SyntheticArgs syn;
  auto* syn_cmd = app.add_subcommand("make-synthetic", "Generate a procedural RGB-D corpus");
  syn_cmd->add_option("dir", syn.out_dir, "Output directory (or use --out-dir)");
  syn_cmd->add_option("-n,--count", syn.count, "Number of scenes")->required();
  syn_cmd->add_option("--height", syn.height, "Image height");
  syn_cmd->add_option("--width", syn.width, "Image width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (g.threads) set_num_threads(*g.threads);
    if (pre->parsed()) return cmd_train(g, pre_args, Stage::kPretrain, out);
    if (fine->parsed()) return cmd_train(g, fine_args, Stage::kFinetune, out);
    if (complete_cmd->parsed()) return cmd_complete(comp, out);
    if (eval_cmd->parsed()) return cmd_evaluate(g, ev, out);
    if (syn_cmd->parsed()) return cmd_make_synthetic(g, syn, out);
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace depthmae::cli
