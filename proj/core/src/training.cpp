#include "depthmae/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "depthmae/ops.hpp"
#include "depthmae/random.hpp"

namespace depthmae {

namespace fs = std::filesystem;

std::string precision_name(Precision p) { return p == Precision::kFloat32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32" || name == "float32") return Precision::kFloat32;
  if (name == "f64" || name == "float64") return Precision::kFloat64;
  throw std::invalid_argument("unknown precision '" + name + "' (expected f32 or f64)");
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  if (stage == Stage::kFinetune) {
    c.epochs = 20;
    c.learning_rate = 1e-4;
  }
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps", "must be positive");
  if (stage == Stage::kPretrain && !init_checkpoint.empty()) {
    throw ConfigError("init_checkpoint", "only applies to fine-tuning");
  }
}

template <typename T>
std::optional<Tensor<T>> loss_pretrain(const Tensor<T>& pred, const Tensor<T>& gt, const MaskPlan& plan,
                                       const PatchGrid& grid) {
  const Shape want{1, grid.height(), grid.width()};
  if (pred.shape() != want || gt.shape() != want) {
    throw ShapeError("loss_pretrain: prediction " + shape_string(pred.shape()) + " and target " +
                     shape_string(gt.shape()) + " must both be " + shape_string(want));
  }
  validate_plan(plan, grid.num_tokens());
  std::vector<bool> masked(grid.num_tokens(), false);
  for (std::size_t m : plan.masked) masked[m] = true;
  std::vector<T> weight(gt.numel(), T(0));
  std::size_t count = 0;
  for (std::size_t y = 0; y < grid.height(); ++y) {
    for (std::size_t x = 0; x < grid.width(); ++x) {
      const std::size_t i = y * grid.width() + x;
      if (masked[grid.token_of(y, x)] && gt.data()[i] > T(0)) {
        weight[i] = T(1);
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  const Tensor<T> w(want, std::move(weight));
  const auto sq = mul(square(sub(pred, gt.detach())), w);
  return sqrt(mul_scalar(sum(sq), T(1) / static_cast<T>(count)));
}

template <typename T>
Tensor<T> loss_finetune(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("loss_finetune: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(gt.shape()));
  }
  return sqrt(mean(square(sub(pred, gt.detach()))));
}

template <typename T>
void adamw_step(const std::vector<NamedTensor<T>>& params, OptimizerState<T>& state, const AdamWSettings& s) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), T(0));
      state.second_moment.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) throw std::logic_error("optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T bias1 = static_cast<T>(1.0 - std::pow(s.beta1, t));
  const T bias2 = static_cast<T>(1.0 - std::pow(s.beta2, t));
  const T lr = static_cast<T>(s.learning_rate);
  const T b1 = static_cast<T>(s.beta1);
  const T b2 = static_cast<T>(s.beta2);
  const T eps = static_cast<T>(s.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto tensor = params[k].tensor;
    if (!tensor.has_grad()) continue;
    const auto& name = params[k].name;
    const bool decay = name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    const T shrink = decay ? T(1) - lr * static_cast<T>(s.weight_decay) : T(1);
    auto values = tensor.mutable_data();
    const auto grad = tensor.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T m_hat = m[i] / bias1;
      const T v_hat = v[i] / bias2;
      values[i] = values[i] * shrink - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

std::vector<RgbdSample> load_training_samples(const DatasetManifest& manifest, const ModelConfig& model,
                                              double depth_scale, std::size_t* skipped) {
  if (manifest.records.empty()) throw std::runtime_error("manifest has no records");
  std::vector<RgbdSample> samples;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    try {
      samples.push_back(
          resize_sample(manifest.load_sample(i, depth_scale), model.image_size, model.image_size, model.patch_size));
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << manifest.records[i].identifier << ": " << e.what() << '\n';
      ++bad;
    }
  }
  if (skipped) *skipped = bad;
  if (samples.empty()) throw std::runtime_error("none of the " + std::to_string(bad) + " manifest records could be read");
  return samples;
}

std::vector<EpochRecord> read_metrics_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<EpochRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    EpochRecord r;
    if (!(ss >> r.epoch >> r.mean_loss_m >> r.wall_seconds)) throw IoError("malformed metrics line '" + line + "'");
    out.push_back(r);
  }
  return out;
}

namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656cULL;
constexpr std::uint64_t kOrderStream = 0x6f72646572ULL;
constexpr std::uint64_t kMaskStream = 0x6d61736bULL;

std::string format_loss(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::size_t epoch, const TrainConfig& cfg) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!cfg.shuffle) return order;
  Rng rng(derive_seed(cfg.seed, kOrderStream, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.bounded(i)]);
  return order;
}

template <typename T>
class Trainer {
 public:
  Trainer(const std::vector<RgbdSample>& samples, const ModelConfig& model_config, const TrainConfig& cfg,
          const TrainOptions& options)
      : cfg_(cfg), options_(options), model_(make_model(model_config)) {
    for (const auto& s : samples) {
      if (s.rgb.height() != model_config.image_size || s.rgb.width() != model_config.image_size) {
        throw ShapeError("sample " + s.identifier + " is not at the model resolution");
      }
      const DepthSource src = cfg.stage == Stage::kPretrain ? DepthSource::kGroundTruth : DepthSource::kRaw;
      inputs_.push_back(to_model_input<T>(s, src, model_config.max_depth));
      targets_.push_back(depth_to_tensor<T>(s.gt_depth, model_config.max_depth));
    }
    if (inputs_.empty()) throw std::runtime_error("no training samples");
  }

  TrainResult run() {
    TrainResult result;
    result.init = init_report_;
    const std::size_t n = inputs_.size();
    const std::size_t per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
    const std::size_t total = per_epoch * cfg_.epochs;
    std::size_t end = total;
    if (options_.stop_after_steps) end = std::min(end, options_.stop_after_steps);

    const bool to_disk = !options_.out_dir.empty();
    std::ofstream log;
    if (to_disk) {
      fs::create_directories(options_.out_dir / "checkpoints");
      const bool resuming = step_ > 0;
      log.open(options_.out_dir / "metrics.log", resuming ? std::ios::app : std::ios::trunc);
      if (!log) throw IoError("cannot write metrics.log in " + options_.out_dir.string());
      if (!resuming) log << "# epoch\tmean_loss_m\twall_seconds\n";
    }

    auto epoch_start = std::chrono::steady_clock::now();
    const std::vector<NamedTensor<T>> named = model_.params().named();
    for (; step_ < end; ++step_) {
      const std::size_t epoch = step_ / per_epoch;
      const std::size_t batch = step_ % per_epoch;
      if (batch == 0) epoch_start = std::chrono::steady_clock::now();
      const auto order = epoch_order(n, epoch, cfg_);
      const std::size_t lo = batch * cfg_.batch_size;
      const std::size_t hi = std::min(n, lo + cfg_.batch_size);

      std::vector<Tensor<T>> losses;
      for (std::size_t j = lo; j < hi; ++j) {
        const std::size_t idx = order[j];
        std::optional<Tensor<T>> loss;
        if (cfg_.stage == Stage::kPretrain) {
          const MaskPlan plan = sample_mask(model_.config().num_tokens(), model_.config().mask_ratio,
                                            derive_seed(cfg_.seed, kMaskStream ^ epoch, idx));
          const auto pred = model_.forward_pretrain(inputs_[idx], plan);
          PatchGrid grid = model_.config().grid();
          grid.channels = 1;
          loss = loss_pretrain(pred.depth, targets_[idx], plan, grid);
        } else {
          loss = loss_finetune(model_.forward_finetune(inputs_[idx]), targets_[idx]);
        }
        if (!loss) {
          ++skipped_;
          continue;
        }
        losses.push_back(*loss);
        epoch_loss_sum_ += static_cast<double>(loss->item()) * model_.config().max_depth;
        ++epoch_loss_count_;
      }

      if (!losses.empty()) {
        Tensor<T> total_loss = losses.front();
        for (std::size_t i = 1; i < losses.size(); ++i) total_loss = add(total_loss, losses[i]);
        total_loss = mul_scalar(total_loss, T(1) / static_cast<T>(losses.size()));
        model_.params().zero_grad();
        backward(total_loss);
        adamw_step(named, optimizer_, settings_for(step_, total));
        model_.params().zero_grad();
      }

      if (batch + 1 == per_epoch) {
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.mean_loss_m = epoch_loss_count_ ? epoch_loss_sum_ / static_cast<double>(epoch_loss_count_) : 0.0;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        result.epochs.push_back(rec);
        if (log) {
          log << rec.epoch << '\t' << format_loss(rec.mean_loss_m) << '\t' << format_loss(rec.wall_seconds) << '\n';
          log.flush();
        }
        epoch_loss_sum_ = 0.0;
        epoch_loss_count_ = 0;
      }
      if (to_disk && cfg_.checkpoint_every && (step_ + 1) % cfg_.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "step_%08zu.ckpt", step_ + 1);
        snapshot_at(step_ + 1).save(options_.out_dir / "checkpoints" / name);
      }
    }
    result.steps = step_;
    result.skipped_samples = skipped_;
    result.checkpoint = snapshot_at(step_);
    if (to_disk) result.checkpoint.save(options_.out_dir / "checkpoints" / "final.ckpt");
    return result;
  }

  void initialize(const Checkpoint* init, const Checkpoint* resume) {
    if (resume) {
      restore(*resume);
    } else if (init) {
      init_report_ = load_matching(model_.params(), *init);
    }
  }

 private:
  DepthCompletionModel<T> make_model(const ModelConfig& config) const {
    return DepthCompletionModel<T>::create(config, derive_seed(cfg_.seed, kModelStream));
  }

  AdamWSettings settings_for(std::size_t step, std::size_t total) const {
    AdamWSettings s;
    s.learning_rate = cfg_.learning_rate;
    if (cfg_.cosine_decay && total > 0) {
      s.learning_rate *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
    }
    s.weight_decay = cfg_.weight_decay;
    s.beta1 = cfg_.beta1;
    s.beta2 = cfg_.beta2;
    s.eps = cfg_.adam_eps;
    return s;
  }

  Checkpoint snapshot_at(std::size_t step) const {
    Checkpoint ckpt;
    ckpt.stage = cfg_.stage;
    ckpt.model = model_.config();
    ckpt.scalar_bytes = sizeof(T);
    ckpt.depth_scale = options_.depth_scale;
    store_params(ckpt, model_.params());
    const auto named = model_.params().named();
    for (std::size_t k = 0; k < optimizer_.first_moment.size(); ++k) {
      const auto& m = optimizer_.first_moment[k];
      const auto& v = optimizer_.second_moment[k];
      ckpt.tensors.push_back({"optim.m/" + named[k].name, named[k].tensor.shape(), {m.begin(), m.end()}});
      ckpt.tensors.push_back({"optim.v/" + named[k].name, named[k].tensor.shape(), {v.begin(), v.end()}});
    }
    auto& meta = ckpt.metadata;
    meta["train.step"] = std::to_string(step);
    meta["train.optimizer_step"] = std::to_string(optimizer_.step);
    meta["train.epoch_loss_sum"] = hex_double(epoch_loss_sum_);
    meta["train.epoch_loss_count"] = std::to_string(epoch_loss_count_);
    meta["train.skipped_samples"] = std::to_string(skipped_);
    meta["train.seed"] = std::to_string(cfg_.seed);
    meta["train.batch_size"] = std::to_string(cfg_.batch_size);
    meta["train.epochs"] = std::to_string(cfg_.epochs);
    meta["train.samples"] = std::to_string(inputs_.size());
    return ckpt;
  }

  void restore(const Checkpoint& ckpt) {
    if (ckpt.stage != cfg_.stage) {
      throw CheckpointError("resume checkpoint is from the " + stage_name(ckpt.stage) + " stage");
    }
    if (!(ckpt.model == model_.config())) throw CheckpointError("resume checkpoint has a different model configuration");
    const auto get = [&](const std::string& key) -> const std::string& {
      auto it = ckpt.metadata.find(key);
      if (it == ckpt.metadata.end()) throw CheckpointError("checkpoint is not resumable: missing " + key);
      return it->second;
    };
    if (std::stoull(get("train.seed")) != cfg_.seed || std::stoull(get("train.batch_size")) != cfg_.batch_size ||
        std::stoull(get("train.samples")) != inputs_.size()) {
      throw CheckpointError("resume checkpoint was produced with a different seed, batch size or dataset");
    }
    model_ = model_from_checkpoint<T>(ckpt);
    const auto named = model_.params().named();
    optimizer_ = {};
    optimizer_.step = std::stoull(get("train.optimizer_step"));
    if (optimizer_.step > 0) {
      for (const auto& p : named) {
        const StoredTensor* m = ckpt.find("optim.m/" + p.name);
        const StoredTensor* v = ckpt.find("optim.v/" + p.name);
        if (!m || !v) throw CheckpointError("checkpoint lacks optimizer state for " + p.name);
        optimizer_.first_moment.emplace_back(m->values.begin(), m->values.end());
        optimizer_.second_moment.emplace_back(v->values.begin(), v->values.end());
      }
    }
    step_ = std::stoull(get("train.step"));
    epoch_loss_sum_ = parse_double(get("train.epoch_loss_sum"));
    epoch_loss_count_ = std::stoull(get("train.epoch_loss_count"));
    skipped_ = std::stoull(get("train.skipped_samples"));
  }

  TrainConfig cfg_;
  TrainOptions options_;
  DepthCompletionModel<T> model_;
  std::vector<Tensor<T>> inputs_;
  std::vector<Tensor<T>> targets_;
  OptimizerState<T> optimizer_;
  InitReport init_report_;
  std::size_t step_ = 0;
  double epoch_loss_sum_ = 0.0;
  std::size_t epoch_loss_count_ = 0;
  std::size_t skipped_ = 0;
};

template <typename T>
TrainResult train_with(const std::vector<RgbdSample>& samples, const ModelConfig& model, const TrainConfig& cfg,
                       const TrainOptions& options) {
  Trainer<T> trainer(samples, model, cfg, options);
  std::optional<Checkpoint> loaded_init;
  std::optional<Checkpoint> loaded_resume;
  const Checkpoint* init = options.init;
  const Checkpoint* resume = options.resume;
  if (!resume && !cfg.resume_path.empty()) resume = &loaded_resume.emplace(Checkpoint::load(cfg.resume_path));
  if (!init && !cfg.init_checkpoint.empty()) init = &loaded_init.emplace(Checkpoint::load(cfg.init_checkpoint));
  if (init && cfg.stage != Stage::kFinetune) throw ConfigError("init_checkpoint", "only applies to fine-tuning");
  trainer.initialize(init, resume);
  return trainer.run();
}

}  // namespace

TrainResult train(const std::vector<RgbdSample>& samples, const ModelConfig& model, const TrainConfig& cfg,
                  const TrainOptions& options) {
  model.validate();
  cfg.validate();
  if (cfg.precision == Precision::kFloat64) return train_with<double>(samples, model, cfg, options);
  return train_with<float>(samples, model, cfg, options);
}

TrainResult run_pretrain(const DatasetManifest& manifest, const ModelConfig& model, const TrainConfig& cfg,
                         const TrainOptions& options) {
  TrainConfig c = cfg;
  c.stage = Stage::kPretrain;
  model.validate();
  c.validate();
  std::size_t skipped = 0;
  const auto samples = load_training_samples(manifest, model, options.depth_scale, &skipped);
  TrainResult r = train(samples, model, c, options);
  r.skipped_files = skipped;
  return r;
}

TrainResult run_finetune(const DatasetManifest& manifest, const ModelConfig& model, const TrainConfig& cfg,
                         const TrainOptions& options) {
  TrainConfig c = cfg;
  c.stage = Stage::kFinetune;
  model.validate();
  c.validate();
  std::size_t skipped = 0;
  const auto samples = load_training_samples(manifest, model, options.depth_scale, &skipped);
  TrainResult r = train(samples, model, c, options);
  r.skipped_files = skipped;
  return r;
}

template std::optional<Tensor<float>> loss_pretrain(const Tensor<float>&, const Tensor<float>&, const MaskPlan&,
                                                    const PatchGrid&);
template std::optional<Tensor<double>> loss_pretrain(const Tensor<double>&, const Tensor<double>&, const MaskPlan&,
                                                     const PatchGrid&);
template Tensor<float> loss_finetune(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> loss_finetune(const Tensor<double>&, const Tensor<double>&);
template void adamw_step(const std::vector<NamedTensor<float>>&, OptimizerState<float>&, const AdamWSettings&);
template void adamw_step(const std::vector<NamedTensor<double>>&, OptimizerState<double>&, const AdamWSettings&);

}  // namespace depthmae
